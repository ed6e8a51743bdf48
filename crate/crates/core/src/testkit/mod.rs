//! Deterministic synthetic text-attributed graphs.
//!
//! Features are Gaussian around per-class centroids; edges follow a
//! stochastic block model; node text is a templated sentence built from the
//! class's keyword list.

pub mod stub;

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{save_tag, TextAttributedGraph};
use crate::numerics::DenseMatrix;
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub nodes_per_class: usize,
    pub feature_dim: usize,
    /// Distance of each centroid from the origin along its own axis.
    pub class_sep: f64,
    /// Per-coordinate standard deviation of the feature noise.
    pub noise_std: f64,
    pub intra_p: f64,
    pub inter_p: f64,
    /// Place centroid `c` on axis `c`; requires `feature_dim >= num_classes`.
    pub orthogonal_centroids: bool,
    /// Keyword list per class; generated when empty.
    pub text_vocab: Vec<Vec<String>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            nodes_per_class: 50,
            feature_dim: 16,
            class_sep: 3.0,
            noise_std: 0.5,
            intra_p: 0.1,
            inter_p: 0.01,
            orthogonal_centroids: true,
            text_vocab: Vec::new(),
            seed: 0,
        }
    }
}

const TOPICS: &[&str] = &[
    "graph", "neural", "kernel", "bayesian", "reinforcement", "genetic", "retrieval", "vision", "speech", "database",
    "compiler", "network", "robotics", "crypto", "quantum", "logic",
];

fn default_vocab(class: usize) -> Vec<String> {
    let topic = TOPICS[class % TOPICS.len()];
    let round = class / TOPICS.len();
    ["methods", "models", "theory", "systems"]
        .iter()
        .map(|suffix| {
            if round == 0 {
                format!("{topic}-{suffix}")
            } else {
                format!("{topic}{round}-{suffix}")
            }
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.nodes_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::Invalid("num_classes, nodes_per_class and feature_dim must be >= 1".into()));
        }
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.class_sep >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::Invalid("class_sep and noise_std must be non-negative".into()));
        }
        if self.orthogonal_centroids && self.feature_dim < self.num_classes {
            return Err(Error::Invalid(format!(
                "feature_dim {} < num_classes {} with orthogonal centroids",
                self.feature_dim, self.num_classes
            )));
        }
        if !self.text_vocab.is_empty()
            && (self.text_vocab.len() != self.num_classes || self.text_vocab.iter().any(Vec::is_empty))
        {
            return Err(Error::Invalid("text_vocab needs one non-empty keyword list per class".into()));
        }
        Ok(())
    }

    fn vocab(&self, class: usize) -> Vec<String> {
        if self.text_vocab.is_empty() {
            default_vocab(class)
        } else {
            self.text_vocab[class].clone()
        }
    }
}

/// Generates the graph. Node `v` belongs to class `v / nodes_per_class`.
pub fn synth_tag(cfg: &SynthConfig) -> Result<TextAttributedGraph> {
    cfg.validate()?;
    let n = cfg.num_classes * cfg.nodes_per_class;
    let d = cfg.feature_dim;

    let mut rng = rng::stream(cfg.seed, rng::tag(domain::SYNTH, 0));
    let centroids: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|c| {
            if cfg.orthogonal_centroids {
                let mut v = vec![0.0; d];
                v[c] = cfg.class_sep;
                v
            } else {
                let raw: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                raw.into_iter().map(|x| x / norm * cfg.class_sep).collect()
            }
        })
        .collect();

    let labels: Vec<usize> = (0..n).map(|v| v / cfg.nodes_per_class).collect();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = rng::stream(cfg.seed, rng::tag(domain::SYNTH, 1));
    let mut data = Vec::with_capacity(n * d);
    for &c in &labels {
        for j in 0..d {
            // Stored as f32 on disk; keep the in-memory graph identical.
            data.push(f64::from((centroids[c][j] + noise.sample(&mut rng)) as f32));
        }
    }
    let features = DenseMatrix::from_vec(n, d, data)?;

    let mut rng = rng::stream(cfg.seed, rng::tag(domain::SYNTH, 2));
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { cfg.intra_p } else { cfg.inter_p };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut rng = rng::stream(cfg.seed, rng::tag(domain::SYNTH, 3));
    let vocab: Vec<Vec<String>> = (0..cfg.num_classes).map(|c| cfg.vocab(c)).collect();
    let texts = labels
        .iter()
        .enumerate()
        .map(|(v, &c)| {
            let a = vocab[c].choose(&mut rng).expect("non-empty vocab");
            let b = vocab[c].choose(&mut rng).expect("non-empty vocab");
            format!("Document {v} studies {a} and relates it to {b} with new experiments.")
        })
        .collect();
    let class_names = (0..cfg.num_classes).map(|c| vocab[c][0].clone()).collect();
    TextAttributedGraph::new(features, texts, labels, class_names, &edges)
}

/// Generates the graph and writes it in the dataset directory format.
pub fn write_synth(cfg: &SynthConfig, dir: &Path) -> Result<TextAttributedGraph> {
    let g = synth_tag(cfg)?;
    save_tag(&g, dir)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_tag;

    #[test]
    fn zero_inter_p_has_no_cross_edges() {
        let g = synth_tag(&SynthConfig {
            inter_p: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert!(g.edges().iter().all(|&(u, v)| g.labels()[u] == g.labels()[v]));
        assert!(g.edge_count() > 0);
    }

    #[test]
    fn nearest_centroid_separates_default_classes() {
        let cfg = SynthConfig {
            num_classes: 3,
            nodes_per_class: 50,
            ..Default::default()
        };
        let g = synth_tag(&cfg).unwrap();
        let members = g.class_members();
        let centroids: Vec<Vec<f64>> = members.iter().map(|m| g.features().mean_of_rows(m).unwrap()).collect();
        let correct = (0..g.node_count())
            .filter(|&v| {
                let x = g.features().row(v);
                let best = (0..3)
                    .min_by(|&a, &b| {
                        crate::numerics::dense::euclidean(x, &centroids[a])
                            .total_cmp(&crate::numerics::dense::euclidean(x, &centroids[b]))
                    })
                    .unwrap();
                best == g.labels()[v]
            })
            .count();
        assert_eq!(correct, g.node_count());
    }

    #[test]
    fn deterministic_directory_and_round_trip() {
        let cfg = SynthConfig {
            num_classes: 3,
            nodes_per_class: 10,
            seed: 4,
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let g = write_synth(&cfg, a.path()).unwrap();
        write_synth(&cfg, b.path()).unwrap();
        for f in ["nodes.jsonl", "edges.tsv", "class_names.json", "features.bin"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let back = load_tag(a.path()).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.labels(), g.labels());
    }

    #[test]
    fn invalid_configs() {
        let bad = |f: fn(&mut SynthConfig)| {
            let mut c = SynthConfig::default();
            f(&mut c);
            synth_tag(&c).is_err()
        };
        assert!(bad(|c| c.feature_dim = 3));
        assert!(bad(|c| c.intra_p = 1.5));
        assert!(bad(|c| c.nodes_per_class = 0));
        assert!(bad(|c| c.text_vocab = vec![vec!["x".into()]]));
    }
}
