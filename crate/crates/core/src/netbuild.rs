//! Two-mode case/provider networks and their one-mode co-worker projection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};

use serde::Serialize;

use crate::records::Segment;

/// Cases on one side, providers on the other, an edge for every
/// (case, participating provider) pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BipartiteGraph {
    pub case_nodes: BTreeSet<String>,
    pub provider_nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
}

impl BipartiteGraph {
    /// Bipartite degree of a provider node (number of cases it appears on).
    pub fn provider_degree(&self, provider: &str) -> usize {
        self.edges.iter().filter(|(_, p)| p == provider).count()
    }

    /// Provider sets keyed by case id.
    pub fn teams(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut teams: BTreeMap<&str, Vec<&str>> = self.case_nodes.iter().map(|c| (c.as_str(), Vec::new())).collect();
        for (case, provider) in &self.edges {
            teams.entry(case.as_str()).or_default().push(provider.as_str());
        }
        teams
    }
}

pub fn build_bipartite(segment: &Segment) -> BipartiteGraph {
    let mut bg = BipartiteGraph::default();
    for case in &segment.cases {
        bg.case_nodes.insert(case.case_id.clone());
        for p in &case.providers {
            bg.provider_nodes.insert(p.clone());
            bg.edges.insert((case.case_id.clone(), p.clone()));
        }
    }
    bg
}

/// Undirected simple graph over provider ids.
///
/// Nodes are indexed in lexicographic id order and every neighbour list is
/// sorted ascending, so iteration order is fully deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoworkerGraph {
    ids: Vec<String>,
    index: HashMap<String, u32>,
    adjacency: Vec<Vec<u32>>,
    /// Number of shared cases per edge, keyed by `(low, high)` node index.
    /// Carried for inspection only; no metric reads it.
    multiplicity: BTreeMap<(u32, u32), u32>,
}

impl CoworkerGraph {
    /// Builds a graph from node ids and id pairs. Self-loops are ignored and
    /// repeated pairs increase multiplicity only. Edge endpoints missing from
    /// `nodes` are added.
    pub fn from_edges<'a, N, E>(nodes: N, edges: E) -> Self
    where
        N: IntoIterator<Item = &'a str>,
        E: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let edges: Vec<(&str, &str)> = edges.into_iter().collect();
        let mut all: BTreeSet<&str> = nodes.into_iter().collect();
        for &(u, v) in &edges {
            all.insert(u);
            all.insert(v);
        }
        let mut g = CoworkerGraph::with_ids(all.into_iter().map(String::from).collect());
        for (u, v) in edges {
            let (a, b) = (g.index[u], g.index[v]);
            g.add_edge(a, b);
        }
        g.finish();
        g
    }

    /// Builds a graph over `n` nodes labelled by zero-padded indices, from
    /// index pairs. Handy for synthetic topologies.
    pub fn from_index_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let width = n.to_string().len();
        let ids = (0..n).map(|i| format!("{i:0width$}")).collect();
        let mut g = CoworkerGraph::with_ids(ids);
        for &(u, v) in edges {
            assert!(u < n && v < n, "edge ({u}, {v}) out of range for {n} nodes");
            g.add_edge(u as u32, v as u32);
        }
        g.finish();
        g
    }

    fn with_ids(ids: Vec<String>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i as u32)).collect();
        let n = ids.len();
        CoworkerGraph {
            ids,
            index,
            adjacency: vec![Vec::new(); n],
            multiplicity: BTreeMap::new(),
        }
    }

    fn add_edge(&mut self, a: u32, b: u32) {
        if a == b {
            return;
        }
        let key = (a.min(b), a.max(b));
        *self.multiplicity.entry(key).or_insert(0) += 1;
    }

    fn finish(&mut self) {
        for adj in &mut self.adjacency {
            adj.clear();
        }
        // BTreeMap keys arrive sorted by (low, high): each list stays sorted
        // except for the `high` side, which is fixed below.
        for &(a, b) in self.multiplicity.keys() {
            self.adjacency[a as usize].push(b);
            self.adjacency[b as usize].push(a);
        }
        for adj in &mut self.adjacency {
            adj.sort_unstable();
        }
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.multiplicity.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| i as usize)
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&(v as u32)).is_ok()
    }

    /// Number of cases shared by two providers (0 if not adjacent).
    pub fn multiplicity(&self, u: usize, v: usize) -> u32 {
        let key = (u.min(v) as u32, u.max(v) as u32);
        self.multiplicity.get(&key).copied().unwrap_or(0)
    }

    /// Edges as `(low, high)` index pairs in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.multiplicity.keys().map(|&(a, b)| (a as usize, b as usize))
    }

    /// Connected components as sorted node lists, ordered by their smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for root in 0..n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            stack.push(root);
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &self.adjacency[v] {
                    let w = w as usize;
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Writes `u<TAB>v` lines, each pair ordered and the list sorted lexicographically.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> io::Result<()> {
        // Index order is lexicographic id order, so index-sorted pairs are id-sorted.
        for (a, b) in self.edges() {
            writeln!(w, "{}\t{}", self.ids[a], self.ids[b])?;
        }
        Ok(())
    }
}

/// Links every pair of providers that share at least one case.
pub fn project_one_mode(bg: &BipartiteGraph) -> CoworkerGraph {
    let mut g = CoworkerGraph::with_ids(bg.provider_nodes.iter().cloned().collect());
    for team in bg.teams().values() {
        let members: Vec<u32> = team.iter().map(|p| g.index[*p]).collect();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                g.add_edge(a, b);
            }
        }
    }
    g.finish();
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphSummary {
    pub node_count: usize,
    pub edge_count: usize,
    pub case_count: usize,
    pub avg_team_size: f64,
    pub avg_degree: f64,
    pub density: f64,
}

pub fn density(node_count: usize, edge_count: usize) -> f64 {
    if node_count < 2 {
        return 0.0;
    }
    2.0 * edge_count as f64 / (node_count as f64 * (node_count - 1) as f64)
}

pub fn summarize(g: &CoworkerGraph, segment: &Segment) -> GraphSummary {
    let n = g.node_count();
    let m = g.edge_count();
    let case_count = segment.cases.len();
    let avg_team_size = if case_count == 0 {
        0.0
    } else {
        segment.cases.iter().map(|c| c.providers.len()).sum::<usize>() as f64 / case_count as f64
    };
    GraphSummary {
        node_count: n,
        edge_count: m,
        case_count,
        avg_team_size,
        avg_degree: if n == 0 { 0.0 } else { 2.0 * m as f64 / n as f64 },
        density: density(n, m),
    }
}
