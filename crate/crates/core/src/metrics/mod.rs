//! Node-level network measures and their per-case team averages.
//!
//! Normalization conventions:
//! - degree: raw degree over `n - 1`;
//! - betweenness: unordered-pair betweenness over `(n - 1)(n - 2) / 2`;
//! - closeness: component-corrected, `(r / Σd) · (r / (n - 1))` with `r`
//!   reachable nodes, 0 when isolated;
//! - eigenvector: principal eigenvector of the largest component scaled to a
//!   maximum of 1, 0 elsewhere;
//! - clustering: closed over open triples centred on the node, 0 below degree 2.

mod betweenness;
mod closeness;
mod clustering;
mod degree;
mod eigenvector;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netbuild::CoworkerGraph;
use crate::records::CaseRecord;

pub use betweenness::{betweenness_centrality, raw_betweenness};
pub use closeness::closeness_centrality;
pub use clustering::{clustering_coefficient, triangles};
pub use degree::degree_centrality;
pub use eigenvector::eigenvector_centrality;

/// Human-readable statement of the conventions above, recorded in run manifests.
pub const NORMALIZATION_NOTES: [(&str, &str); 5] = [
    ("degree", "raw degree / (n - 1); 0 when n < 2"),
    (
        "betweenness",
        "unordered-pair shortest-path betweenness / ((n - 1)(n - 2) / 2); exact Brandes accumulation",
    ),
    (
        "closeness",
        "Wasserman-Faust: (r / sum of distances) * (r / (n - 1)), r = reachable nodes; 0 when isolated",
    ),
    (
        "eigenvector",
        "power iteration on A + I over the largest component, max entry = 1; 0 outside it",
    ),
    ("clustering", "triangles / (deg (deg - 1) / 2); 0 when deg < 2"),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("eigenvector power iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    EigenvectorNonConvergence { iterations: usize, residual: f64 },
    #[error("provider `{provider}` on case `{case_id}` is not in the segment network")]
    UnknownProvider { case_id: String, provider: String },
    #[error("case `{0}` has no providers")]
    EmptyTeam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            eigen_tol: 1e-10,
            eigen_max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub provider_id: String,
    pub degree_raw: usize,
    pub degree: f64,
    pub betweenness: f64,
    pub closeness: f64,
    pub eigenvector: f64,
    pub clustering: f64,
}

/// All five measures for every node, keyed (and therefore sorted) by provider id.
pub fn compute_all(g: &CoworkerGraph, cfg: &MetricsConfig) -> Result<BTreeMap<String, NodeMetrics>, MetricsError> {
    let eigen = eigenvector_centrality(g, cfg.eigen_tol, cfg.eigen_max_iter)?;
    let deg = degree_centrality(g);
    let btw = betweenness_centrality(g);
    let clo = closeness_centrality(g);
    let clu = clustering_coefficient(g);

    Ok((0..g.node_count())
        .map(|v| {
            let id = g.id(v).to_string();
            let m = NodeMetrics {
                provider_id: id.clone(),
                degree_raw: deg[v].0,
                degree: deg[v].1,
                betweenness: btw[v],
                closeness: clo[v],
                eigenvector: eigen[v],
                clustering: clu[v],
            };
            (id, m)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeamMetrics {
    pub case_id: String,
    pub team_size: usize,
    pub avg_btwn: f64,
    pub avg_clos: f64,
    pub avg_eigen: f64,
    pub avg_clust: f64,
    /// Mean normalized degree.
    pub avg_deg: f64,
}

pub fn team_aggregate(case: &CaseRecord, metrics: &BTreeMap<String, NodeMetrics>) -> Result<TeamMetrics, MetricsError> {
    if case.providers.is_empty() {
        return Err(MetricsError::EmptyTeam(case.case_id.clone()));
    }
    let mut sums = [0.0f64; 5];
    for p in &case.providers {
        let m = metrics.get(p).ok_or_else(|| MetricsError::UnknownProvider {
            case_id: case.case_id.clone(),
            provider: p.clone(),
        })?;
        sums[0] += m.betweenness;
        sums[1] += m.closeness;
        sums[2] += m.eigenvector;
        sums[3] += m.clustering;
        sums[4] += m.degree;
    }
    let k = case.providers.len() as f64;
    Ok(TeamMetrics {
        case_id: case.case_id.clone(),
        team_size: case.providers.len(),
        avg_btwn: sums[0] / k,
        avg_clos: sums[1] / k,
        avg_eigen: sums[2] / k,
        avg_clust: sums[3] / k,
        avg_deg: sums[4] / k,
    })
}
