use std::collections::VecDeque;

use rayon::prelude::*;

use crate::netbuild::CoworkerGraph;

/// BFS from `s`: number of other nodes reached and the sum of their distances.
fn reach_and_distance_sum(g: &CoworkerGraph, s: usize, dist: &mut [u32], queue: &mut VecDeque<u32>) -> (usize, u64) {
    dist.fill(u32::MAX);
    dist[s] = 0;
    queue.clear();
    queue.push_back(s as u32);
    let (mut reached, mut total) = (0usize, 0u64);
    while let Some(v) = queue.pop_front() {
        let v = v as usize;
        let next = dist[v] + 1;
        for &w in g.neighbors(v) {
            let w = w as usize;
            if dist[w] == u32::MAX {
                dist[w] = next;
                reached += 1;
                total += next as u64;
                queue.push_back(w as u32);
            }
        }
    }
    (reached, total)
}

/// Closeness with the Wasserman–Faust component correction:
/// `((r / Σd) · (r / (n - 1)))` where `r` is the number of nodes reachable
/// from the node. Isolated nodes score 0.
pub fn closeness_centrality(g: &CoworkerGraph) -> Vec<f64> {
    let n = g.node_count();
    (0..n)
        .into_par_iter()
        .map_init(
            || (vec![u32::MAX; n], VecDeque::new()),
            |(dist, queue), s| {
                let (r, total) = reach_and_distance_sum(g, s, dist, queue);
                if r == 0 {
                    return 0.0;
                }
                let r = r as f64;
                (r / total as f64) * (r / (n - 1) as f64)
            },
        )
        .collect()
}
