use std::collections::{BTreeSet, HashSet};

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::{self, domain};

use super::TextAttributedGraph;

/// Breadth-first sampled neighborhood of a center node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoGraph {
    pub center: usize,
    pub center_text: String,
    pub center_label: usize,
    /// Node ids per hop, ascending within a hop.
    pub hop_nodes: Vec<Vec<usize>>,
    pub hop_texts: Vec<Vec<String>>,
    pub hop_labels: Vec<Vec<usize>>,
}

impl EgoGraph {
    pub fn is_isolated(&self) -> bool {
        self.hop_nodes.iter().all(Vec::is_empty)
    }
}

/// Samples up to `fanouts[h]` previously unvisited neighbors of hop `h - 1`
/// (the center for `h = 0`), uniformly without replacement. Deterministic in
/// `(g, v, fanouts, seed)`.
pub fn sample_ego_graph(g: &TextAttributedGraph, v: usize, fanouts: &[usize], seed: u64) -> Result<EgoGraph> {
    if v >= g.node_count() {
        return Err(Error::OutOfRange {
            what: "node id",
            index: v,
            bound: g.node_count(),
        });
    }
    if fanouts.is_empty() {
        return Err(Error::Empty("fanouts"));
    }
    let mut rng = rng::stream(seed, rng::tag(domain::EGO, v as u64));
    let mut visited: HashSet<usize> = HashSet::from([v]);
    let mut frontier = vec![v];
    let mut hop_nodes = Vec::with_capacity(fanouts.len());
    for &cap in fanouts {
        let candidates: Vec<usize> = frontier
            .iter()
            .flat_map(|&u| g.neighbors(u).iter().copied())
            .filter(|u| !visited.contains(u))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut chosen: Vec<usize> = if candidates.len() <= cap {
            candidates
        } else {
            index::sample(&mut rng, candidates.len(), cap)
                .into_iter()
                .map(|i| candidates[i])
                .collect()
        };
        chosen.sort_unstable();
        visited.extend(chosen.iter().copied());
        frontier = chosen.clone();
        hop_nodes.push(chosen);
    }
    let hop_texts = hop_nodes
        .iter()
        .map(|h| h.iter().map(|&u| g.text(u).to_string()).collect())
        .collect();
    let hop_labels = hop_nodes.iter().map(|h| h.iter().map(|&u| g.labels()[u]).collect()).collect();
    Ok(EgoGraph {
        center: v,
        center_text: g.text(v).to_string(),
        center_label: g.labels()[v],
        hop_nodes,
        hop_texts,
        hop_labels,
    })
}
