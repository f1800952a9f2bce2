//! Eigenvector centrality by power iteration on the largest connected component.

use crate::netbuild::CoworkerGraph;

use super::MetricsError;

/// Returns per-node scores scaled so the maximum is 1. Nodes outside the
/// largest component (ties broken towards the component holding the lowest
/// node index) score 0, as does every node when no component has an edge.
///
/// The iteration multiplies by `A + I` rather than `A`: the spectrum shifts by
/// one, which leaves the Perron vector unchanged but keeps bipartite
/// components (stars, paths, even cycles) from oscillating between the `±λ`
/// eigenvectors.
pub fn eigenvector_centrality(g: &CoworkerGraph, tol: f64, max_iter: usize) -> Result<Vec<f64>, MetricsError> {
    let n = g.node_count();
    let mut out = vec![0.0; n];
    let Some(comp) = g
        .components()
        .into_iter()
        .reduce(|best, c| if c.len() > best.len() { c } else { best })
    else {
        return Ok(out);
    };
    if comp.len() < 2 {
        return Ok(out);
    }

    // Local indices: comp is sorted, so binary search maps global -> local.
    let local: Vec<Vec<usize>> = comp
        .iter()
        .map(|&v| {
            g.neighbors(v)
                .iter()
                .map(|&w| comp.binary_search(&(w as usize)).expect("neighbour in same component"))
                .collect()
        })
        .collect();

    let k = comp.len();
    let mut x = vec![1.0 / (k as f64).sqrt(); k];
    let mut next = vec![0.0; k];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        for (i, nbrs) in local.iter().enumerate() {
            next[i] = x[i] + nbrs.iter().map(|&j| x[j]).sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut next {
            *v /= norm;
        }
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if residual < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MetricsError::EigenvectorNonConvergence {
            iterations: max_iter,
            residual,
        });
    }

    let max = x.iter().cloned().fold(0.0, f64::max);
    for (&v, &score) in comp.iter().zip(&x) {
        out[v] = score / max;
    }
    Ok(out)
}
