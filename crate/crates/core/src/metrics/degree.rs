use crate::netbuild::CoworkerGraph;

/// Raw degree and degree normalized by `n - 1` (0 when `n < 2`), in node index order.
pub fn degree_centrality(g: &CoworkerGraph) -> Vec<(usize, f64)> {
    let n = g.node_count();
    (0..n)
        .map(|v| {
            let raw = g.degree(v);
            let norm = if n < 2 { 0.0 } else { raw as f64 / (n - 1) as f64 };
            (raw, norm)
        })
        .collect()
}
