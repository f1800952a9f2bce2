//! Independent reference implementations used by the integration and
//! acceptance tests. None of them share code with the library: graphs are
//! dense boolean matrices, geodesics come from Floyd-Warshall plus explicit
//! path enumeration, eigenvectors from a dense symmetric eigensolver, and
//! ranks from pairwise counting.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use surgnet_core::netbuild::CoworkerGraph;

/// Undirected simple graph as a dense adjacency matrix.
#[derive(Debug, Clone)]
pub struct Dense {
    pub n: usize,
    pub adj: Vec<Vec<bool>>,
}

impl Dense {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![vec![false; n]; n];
        for &(u, v) in edges {
            if u != v {
                adj[u][v] = true;
                adj[v][u] = true;
            }
        }
        Dense { n, adj }
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in u + 1..self.n {
                if self.adj[u][v] {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn to_graph(&self) -> CoworkerGraph {
        CoworkerGraph::from_index_edges(self.n, &self.edges())
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].iter().filter(|&&b| b).count()
    }
}

/// Erdos-Renyi graph with a random edge probability.
pub fn random_dense<R: Rng>(rng: &mut R, max_n: usize) -> Dense {
    let n = rng.random_range(1..=max_n);
    let p: f64 = rng.random();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Dense::from_edges(n, &edges)
}

pub fn star(n: usize) -> Dense {
    Dense::from_edges(n, &(1..n).map(|v| (0, v)).collect::<Vec<_>>())
}

pub fn path(n: usize) -> Dense {
    Dense::from_edges(n, &(1..n).map(|v| (v - 1, v)).collect::<Vec<_>>())
}

pub fn complete(n: usize) -> Dense {
    let mut e = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            e.push((u, v));
        }
    }
    Dense::from_edges(n, &e)
}

/// K4 with a pendant vertex on node 3.
pub fn kite() -> Dense {
    Dense::from_edges(5, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (3, 4)])
}

/// All-pairs hop distances; `None` when unreachable.
pub fn floyd_warshall(g: &Dense) -> Vec<Vec<Option<u32>>> {
    let n = g.n;
    let mut d = vec![vec![None; n]; n];
    for u in 0..n {
        d[u][u] = Some(0);
        for v in 0..n {
            if g.adj[u][v] {
                d[u][v] = Some(1);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

/// Every shortest path from `s` to `t`, as node sequences.
fn shortest_paths(g: &Dense, d: &[Vec<Option<u32>>], s: usize, t: usize) -> Vec<Vec<usize>> {
    fn walk(g: &Dense, d: &[Vec<Option<u32>>], u: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if u == t {
            out.push(cur.clone());
            return;
        }
        let remaining = d[u][t].unwrap();
        for w in 0..g.n {
            if g.adj[u][w] && d[w][t] == Some(remaining - 1) {
                cur.push(w);
                walk(g, d, w, t, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    if d[s][t].is_some() {
        walk(g, d, s, t, &mut vec![s], &mut out);
    }
    out
}

/// Sum over unordered pairs `{s, t}` not containing `v` of the fraction of
/// shortest `s`-`t` paths through `v`, divided by `(n-1)(n-2)/2`.
pub fn betweenness(g: &Dense) -> Vec<f64> {
    let n = g.n;
    let d = floyd_warshall(g);
    let mut raw = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            let paths = shortest_paths(g, &d, s, t);
            if paths.is_empty() {
                continue;
            }
            let total = paths.len() as f64;
            for v in 0..n {
                if v == s || v == t {
                    continue;
                }
                let through = paths.iter().filter(|p| p.contains(&v)).count() as f64;
                raw[v] += through / total;
            }
        }
    }
    if n < 3 {
        return vec![0.0; n];
    }
    let pairs = ((n - 1) * (n - 2)) as f64 / 2.0;
    raw.into_iter().map(|b| b / pairs).collect()
}

/// `(r / Σd) · (r / (n - 1))` over the `r` nodes reachable from `v`.
pub fn closeness(g: &Dense) -> Vec<f64> {
    let d = floyd_warshall(g);
    (0..g.n)
        .map(|v| {
            let reach: Vec<u32> = (0..g.n).filter(|&u| u != v).filter_map(|u| d[v][u]).collect();
            if reach.is_empty() {
                return 0.0;
            }
            let r = reach.len() as f64;
            let sum: u32 = reach.iter().sum();
            (r / sum as f64) * (r / (g.n - 1) as f64)
        })
        .collect()
}

/// Closed over all neighbour pairs, by explicit triple enumeration.
pub fn clustering(g: &Dense) -> Vec<f64> {
    (0..g.n)
        .map(|v| {
            let nb: Vec<usize> = (0..g.n).filter(|&u| g.adj[v][u]).collect();
            let mut pairs = 0usize;
            let mut closed = 0usize;
            for i in 0..nb.len() {
                for j in i + 1..nb.len() {
                    pairs += 1;
                    if g.adj[nb[i]][nb[j]] {
                        closed += 1;
                    }
                }
            }
            if pairs == 0 {
                0.0
            } else {
                closed as f64 / pairs as f64
            }
        })
        .collect()
}

pub fn degree(g: &Dense) -> Vec<f64> {
    (0..g.n)
        .map(|v| {
            if g.n < 2 {
                0.0
            } else {
                g.degree(v) as f64 / (g.n - 1) as f64
            }
        })
        .collect()
}

/// Connected components by repeated flood fill, each sorted.
pub fn components(g: &Dense) -> Vec<Vec<usize>> {
    let mut seen = vec![false; g.n];
    let mut out = Vec::new();
    for s in 0..g.n {
        if seen[s] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            if !comp.insert(u) {
                continue;
            }
            seen[u] = true;
            stack.extend((0..g.n).filter(|&w| g.adj[u][w] && !comp.contains(&w)));
        }
        out.push(comp.into_iter().collect());
    }
    out
}

/// Principal eigenvector of the largest component's adjacency matrix (ties:
/// the component with the lowest node), absolute values scaled to max 1.
pub fn eigenvector(g: &Dense) -> Vec<f64> {
    let mut out = vec![0.0; g.n];
    let comps = components(g);
    let Some(best) = comps.iter().fold(None::<&Vec<usize>>, |b, c| match b {
        Some(b) if b.len() >= c.len() => Some(b),
        _ => Some(c),
    }) else {
        return out;
    };
    if best.len() < 2 {
        return out;
    }
    let k = best.len();
    let a = DMatrix::from_fn(k, k, |i, j| if g.adj[best[i]][best[j]] { 1.0 } else { 0.0 });
    let eig = SymmetricEigen::new(a);
    let top = eig.eigenvalues.imax();
    let vec: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let max = vec.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (i, &v) in best.iter().enumerate() {
        out[v] = vec[i].abs() / max;
    }
    out
}

/// 1-based average ranks by counting smaller and equal values.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Spearman rho from raw-sum Pearson on counted ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let sx: f64 = rx.iter().sum();
    let sy: f64 = ry.iter().sum();
    let sxx: f64 = rx.iter().map(|v| v * v).sum();
    let syy: f64 = ry.iter().map(|v| v * v).sum();
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt()))
}

/// VIFs as the diagonal of the inverse correlation matrix of the covariates.
pub fn vif(columns: &[Vec<f64>]) -> Vec<f64> {
    let k = columns.len();
    let n = columns[0].len() as f64;
    let std: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n;
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt();
            c.iter().map(|v| (v - m) / s).collect()
        })
        .collect();
    let r = DMatrix::from_fn(k, k, |i, j| std[i].iter().zip(&std[j]).map(|(a, b)| a * b).sum());
    let inv = r.try_inverse().expect("correlation matrix invertible");
    (0..k).map(|i| inv[(i, i)]).collect()
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Central differences of a vector function; row `i` differentiates in `x_i`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            f(&a).iter().zip(f(&b)).map(|(p, m)| (p - m) / (2.0 * h)).collect()
        })
        .collect()
}

/// `|a - b| <= tol · max(1, |a|, |b|)`.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

/// Complication count by scanning digit strings: a code counts when its
/// digits (dot removed) start with some prefix's digits and the code begins
/// with a digit.
pub fn complication_count(codes: &[&str], prefixes: &[&str]) -> usize {
    let digits = |s: &str| -> String { s.trim().chars().filter(|c| *c != '.').collect() };
    codes
        .iter()
        .filter(|c| c.trim().starts_with(|ch: char| ch.is_ascii_digit()))
        .filter(|c| prefixes.iter().any(|p| digits(c).starts_with(&digits(p))))
        .count()
}

/// `n` draws of `x ~ N(0, 1)` and NB2 counts with mean `exp(b0 + b1·x)` and
/// dispersion `alpha` (Poisson when `alpha == 0`). Returns `(y, x)`.
pub fn simulate_counts<R: Rng>(rng: &mut R, n: usize, b0: f64, b1: f64, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = StandardNormal.sample(rng);
        let mu = (b0 + b1 * xi).exp();
        let lambda = if alpha > 0.0 {
            Gamma::new(1.0 / alpha, alpha * mu).unwrap().sample(rng)
        } else {
            mu
        };
        let yi: f64 = if lambda > 0.0 {
            Poisson::new(lambda).unwrap().sample(rng)
        } else {
            0.0
        };
        y.push(yi);
        x.push(xi);
    }
    (y, x)
}
