//! Exact shortest-path betweenness for unweighted undirected graphs.
//!
//! One BFS per source builds the shortest-path DAG with path counts; a reverse
//! sweep accumulates pair dependencies. Sources are processed in fixed-size
//! blocks whose partial sums are added in block order, so the result does not
//! depend on how many worker threads run.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::netbuild::CoworkerGraph;

const SOURCE_BLOCK: usize = 32;

struct Scratch {
    stack: Vec<u32>,
    queue: VecDeque<u32>,
    dist: Vec<i64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            stack: Vec::with_capacity(n),
            queue: VecDeque::with_capacity(n),
            dist: vec![-1; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
        }
    }

    fn accumulate(&mut self, g: &CoworkerGraph, s: usize, out: &mut [f64]) {
        self.dist.fill(-1);
        self.sigma.fill(0.0);
        self.delta.fill(0.0);
        self.stack.clear();

        self.dist[s] = 0;
        self.sigma[s] = 1.0;
        self.queue.push_back(s as u32);
        while let Some(v) = self.queue.pop_front() {
            let v = v as usize;
            self.stack.push(v as u32);
            let next = self.dist[v] + 1;
            for &w in g.neighbors(v) {
                let w = w as usize;
                if self.dist[w] < 0 {
                    self.dist[w] = next;
                    self.queue.push_back(w as u32);
                }
                if self.dist[w] == next {
                    self.sigma[w] += self.sigma[v];
                }
            }
        }

        // Predecessors of w are exactly the neighbours one step closer to s.
        while let Some(w) = self.stack.pop() {
            let w = w as usize;
            let coeff = (1.0 + self.delta[w]) / self.sigma[w];
            let prev = self.dist[w] - 1;
            for &v in g.neighbors(w) {
                let v = v as usize;
                if self.dist[v] == prev {
                    self.delta[v] += self.sigma[v] * coeff;
                }
            }
            if w != s {
                out[w] += self.delta[w];
            }
        }
    }
}

/// Raw betweenness counted over unordered pairs `{j, k}` not containing the node.
pub fn raw_betweenness(g: &CoworkerGraph) -> Vec<f64> {
    let n = g.node_count();
    if n == 0 {
        return Vec::new();
    }
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCE_BLOCK)
        .map(|block| {
            let mut scratch = Scratch::new(n);
            let mut acc = vec![0.0; n];
            for &s in block {
                scratch.accumulate(g, s, &mut acc);
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; n];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    // Every unordered pair was visited from both endpoints.
    for t in &mut total {
        *t /= 2.0;
    }
    total
}

/// Betweenness normalized by the number of unordered pairs excluding the node,
/// `(n - 1)(n - 2) / 2`. Zero for graphs with fewer than three nodes.
pub fn betweenness_centrality(g: &CoworkerGraph) -> Vec<f64> {
    let n = g.node_count();
    let mut bc = raw_betweenness(g);
    if n < 3 {
        bc.fill(0.0);
        return bc;
    }
    let pairs = ((n - 1) * (n - 2)) as f64 / 2.0;
    for b in &mut bc {
        *b /= pairs;
    }
    bc
}
