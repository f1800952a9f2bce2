use rayon::prelude::*;

use crate::netbuild::CoworkerGraph;

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Triangles through each node.
pub fn triangles(g: &CoworkerGraph) -> Vec<usize> {
    (0..g.node_count())
        .into_par_iter()
        .map(|v| {
            let nv = g.neighbors(v);
            // Each triangle {v, u, w} is seen once from u and once from w.
            let twice: usize = nv
                .iter()
                .map(|&u| sorted_intersection_len(nv, g.neighbors(u as usize)))
                .sum();
            twice / 2
        })
        .collect()
}

/// Local clustering coefficient; 0 for nodes with fewer than two neighbours.
pub fn clustering_coefficient(g: &CoworkerGraph) -> Vec<f64> {
    triangles(g)
        .into_iter()
        .enumerate()
        .map(|(v, t)| {
            let d = g.degree(v);
            if d < 2 {
                0.0
            } else {
                t as f64 / (d * (d - 1) / 2) as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_and_star() {
        let tri = CoworkerGraph::from_index_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(clustering_coefficient(&tri), vec![1.0; 3]);

        let s5 = CoworkerGraph::from_index_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(clustering_coefficient(&s5), vec![0.0; 5]);
    }

    #[test]
    fn k4_minus_edge() {
        // a=0, b=1, c=2, d=3 without c–d.
        let g = CoworkerGraph::from_index_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]);
        let cc = clustering_coefficient(&g);
        assert!((cc[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cc[2], 1.0);
        assert_eq!(triangles(&g), vec![2, 2, 1, 1]);
    }
}
