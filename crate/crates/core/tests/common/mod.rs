#![allow(dead_code)]

use gcl_core::graph::TextAttributedGraph;
use gcl_core::numerics::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random labeled graph with Gaussian-ish features. Labels cycle so every
/// class has `n / classes` or one more members.
pub fn random_graph(n: usize, classes: usize, dim: usize, p_edge: f64, seed: u64) -> TextAttributedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p_edge) {
                edges.push((u, v));
            }
        }
    }
    let labels: Vec<usize> = (0..n).map(|v| v % classes).collect();
    TextAttributedGraph::new(
        DenseMatrix::from_vec(n, dim, feats).unwrap(),
        (0..n).map(|v| format!("paper {v} about topic {}", v % classes)).collect(),
        labels,
        (0..classes).map(|c| format!("class_{c}")).collect(),
        &edges,
    )
    .unwrap()
}

/// Path 0-1-...-(n-1) plus random chords; always connected.
pub fn connected_graph(n: usize, classes: usize, dim: usize, p_chord: f64, seed: u64) -> TextAttributedGraph {
    let base = random_graph(n, classes, dim, p_chord, seed);
    let mut edges: Vec<(usize, usize)> = base.edges().to_vec();
    edges.extend((1..n).map(|v| (v - 1, v)));
    TextAttributedGraph::new(
        base.features().clone(),
        base.texts().to_vec(),
        base.labels().to_vec(),
        base.class_names().to_vec(),
        &edges,
    )
    .unwrap()
}

/// Dense `D̂^{-1/2} (A + I) D̂^{-1/2}` (or `D̂^{-1} (A + I)` when `row_norm`).
pub fn dense_operator(g: &TextAttributedGraph, self_loops: bool, row_norm: bool) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in g.edges() {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    if self_loops {
        for (v, row) in a.iter_mut().enumerate() {
            row[v] = 1.0;
        }
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if a[i][j] != 0.0 {
                s[i][j] = if row_norm { 1.0 / d[i] } else { 1.0 / (d[i] * d[j]).sqrt() };
            }
        }
    }
    s
}

pub fn dense_apply(s: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = x.first().map_or(0, Vec::len);
    s.iter()
        .map(|row| {
            let mut out = vec![0.0; cols];
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    for c in 0..cols {
                        out[c] += w * x[j][c];
                    }
                }
            }
            out
        })
        .collect()
}

pub fn rows_of(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Oracle task prototype: `S^k X`, then mean of `z_j / sqrt(d̂_j)`.
pub fn oracle_task_prototype(g: &TextAttributedGraph, nodes: &[usize], k: usize, self_loops: bool) -> Vec<f64> {
    let s = dense_operator(g, self_loops, false);
    let mut z = rows_of(g.features());
    for _ in 0..k {
        z = dense_apply(&s, &z);
    }
    let dim = g.feature_dim();
    let mut acc = vec![0.0; dim];
    for &v in nodes {
        let d = g.degree(v) as f64 + if self_loops { 1.0 } else { 0.0 };
        let w = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
        for c in 0..dim {
            acc[c] += z[v][c] * w;
        }
    }
    acc.iter().map(|a| a / nodes.len() as f64).collect()
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
