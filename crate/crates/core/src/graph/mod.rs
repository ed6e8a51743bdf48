//! Text-attributed graphs: storage, loading, induced subgraphs, propagation
//! operators, Laplacian smoothing, and ego-graph sampling.

mod ego;
mod io;
mod ops;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub use ego::{sample_ego_graph, EgoGraph};
pub use io::{load_tag, load_tag_with_report, read_features_bin, save_tag, write_features_bin, LoadReport};
pub use ops::{
    gcn_normalized_adjacency, laplacian_smooth, row_normalized_adjacency, smoothing_degrees, symmetric_adjacency,
    Weighting,
};

/// Undirected graph whose nodes carry text, a feature row, and a class label.
///
/// Edges are stored once as `(min, max)` pairs, sorted and deduplicated;
/// self-loops are never stored (propagation operators add them).
#[derive(Debug, Clone, PartialEq)]
pub struct TextAttributedGraph {
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    texts: Vec<String>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    adj_offsets: Vec<usize>,
    adj: Vec<usize>,
}

/// Counts of edge records discarded during canonicalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeReport {
    pub duplicates: usize,
    pub self_loops: usize,
}

/// Canonicalizes undirected edges to sorted unique `(min, max)` pairs,
/// dropping self-loops.
pub fn canonicalize_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<(Vec<(usize, usize)>, EdgeReport)> {
    let mut report = EdgeReport::default();
    let mut out = Vec::with_capacity(edges.len());
    for &(u, v) in edges {
        for x in [u, v] {
            if x >= node_count {
                return Err(Error::OutOfRange {
                    what: "edge endpoint",
                    index: x,
                    bound: node_count,
                });
            }
        }
        if u == v {
            report.self_loops += 1;
            continue;
        }
        out.push((u.min(v), u.max(v)));
    }
    out.sort_unstable();
    let before = out.len();
    out.dedup();
    report.duplicates = before - out.len();
    Ok((out, report))
}

impl TextAttributedGraph {
    pub fn new(
        features: DenseMatrix,
        texts: Vec<String>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        Self::new_with_report(features, texts, labels, class_names, edges).map(|(g, _)| g)
    }

    pub fn new_with_report(
        features: DenseMatrix,
        texts: Vec<String>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        edges: &[(usize, usize)],
    ) -> Result<(Self, EdgeReport)> {
        let n = labels.len();
        if texts.len() != n {
            return Err(Error::shape("TextAttributedGraph texts", n, texts.len()));
        }
        if features.rows() != n {
            return Err(Error::FeatureCountMismatch {
                declared: features.rows(),
                nodes: n,
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_names.len()) {
            return Err(Error::format("labels", Some(i), format!("label {l} >= class count {}", class_names.len())));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("node features".into()));
        }
        let (edges, report) = canonicalize_edges(n, edges)?;
        let (adj_offsets, adj) = build_adjacency(n, &edges);
        Ok((
            Self {
                edges,
                features,
                texts,
                labels,
                class_names,
                adj_offsets,
                adj,
            },
            report,
        ))
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, v: usize) -> &str {
        &self.texts[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Sorted neighbor ids of `v` (no self).
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[self.adj_offsets[v]..self.adj_offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj_offsets[v + 1] - self.adj_offsets[v]
    }

    /// Node ids per class label.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (v, &l) in self.labels.iter().enumerate() {
            out[l].push(v);
        }
        out
    }

    /// Subgraph induced on `nodes` (deduplicated, ascending order).
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<InducedSubgraph> {
        self.induced_subgraph_filtered(nodes, |_, _| true)
    }

    /// Like [`induced_subgraph`](Self::induced_subgraph) but keeps only the
    /// edges (in parent ids) accepted by `keep`.
    pub fn induced_subgraph_filtered(&self, nodes: &[usize], keep: impl Fn(usize, usize) -> bool) -> Result<InducedSubgraph> {
        let mut ids = nodes.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if let Some(&bad) = ids.iter().find(|&&v| v >= self.node_count()) {
            return Err(Error::OutOfRange {
                what: "node id",
                index: bad,
                bound: self.node_count(),
            });
        }
        let local: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let mut edges = Vec::new();
        for (li, &g) in ids.iter().enumerate() {
            for &nb in self.neighbors(g) {
                if nb > g {
                    if let Some(&lj) = local.get(&nb) {
                        if keep(g, nb) {
                            edges.push((li, lj));
                        }
                    }
                }
            }
        }
        let features = self.features.gather_rows(&ids)?;
        let texts = ids.iter().map(|&g| self.texts[g].clone()).collect();
        let labels = ids.iter().map(|&g| self.labels[g]).collect();
        let graph = TextAttributedGraph::new(features, texts, labels, self.class_names.clone(), &edges)?;
        Ok(InducedSubgraph {
            graph,
            parent_ids: ids,
            local,
        })
    }
}

fn build_adjacency(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut deg = vec![0usize; n];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let mut offsets = vec![0usize; n + 1];
    for i in 0..n {
        offsets[i + 1] = offsets[i] + deg[i];
    }
    let mut fill = offsets.clone();
    let mut adj = vec![0usize; offsets[n]];
    for &(u, v) in edges {
        adj[fill[u]] = v;
        fill[u] += 1;
        adj[fill[v]] = u;
        fill[v] += 1;
    }
    for v in 0..n {
        adj[offsets[v]..offsets[v + 1]].sort_unstable();
    }
    (offsets, adj)
}

/// A re-indexed subgraph together with its id-remap table.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedSubgraph {
    pub graph: TextAttributedGraph,
    /// `parent_ids[local] = parent node id`, ascending.
    pub parent_ids: Vec<usize>,
    local: HashMap<usize, usize>,
}

impl InducedSubgraph {
    pub fn to_local(&self, parent: usize) -> Option<usize> {
        self.local.get(&parent).copied()
    }

    /// Maps parent ids to local ids, failing on ids outside the subgraph.
    pub fn to_local_all(&self, parents: &[usize]) -> Result<Vec<usize>> {
        parents
            .iter()
            .map(|&p| {
                self.to_local(p).ok_or(Error::OutOfRange {
                    what: "node outside subgraph",
                    index: p,
                    bound: self.parent_ids.len(),
                })
            })
            .collect()
    }
}
