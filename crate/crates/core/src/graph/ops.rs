use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseAdjacency};

use super::TextAttributedGraph;

/// Propagation used when smoothing features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Symmetric `D̂^{-1/2} Â D̂^{-1/2}`.
    Laplacian,
    /// Row-normalized `D̂^{-1} Â`.
    PlainMean,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Laplacian => "laplacian",
            Weighting::PlainMean => "plain_mean",
        }
    }
}

/// Degrees of `Â = A (+ I)`.
pub fn smoothing_degrees(g: &TextAttributedGraph, self_loops: bool) -> Vec<f64> {
    (0..g.node_count())
        .map(|v| g.degree(v) as f64 + if self_loops { 1.0 } else { 0.0 })
        .collect()
}

fn inv_sqrt(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

fn inv(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d
    } else {
        0.0
    }
}

/// `D̂^{-1/2} Â D̂^{-1/2}` with `Â = A + I` when `self_loops`. Isolated
/// nodes without a self-loop get an all-zero row.
pub fn symmetric_adjacency(g: &TextAttributedGraph, self_loops: bool) -> SparseAdjacency {
    let deg = smoothing_degrees(g, self_loops);
    let mut trip = Vec::with_capacity(2 * g.edge_count() + g.node_count());
    for &(u, v) in g.edges() {
        let w = inv_sqrt(deg[u] * deg[v]);
        trip.push((u, v, w));
        trip.push((v, u, w));
    }
    if self_loops {
        for (v, &d) in deg.iter().enumerate() {
            trip.push((v, v, inv(d)));
        }
    }
    SparseAdjacency::from_triplets(g.node_count(), trip).expect("edges validated at construction")
}

/// The GCN propagation operator `S = D̂^{-1/2}(A + I)D̂^{-1/2}`.
pub fn gcn_normalized_adjacency(g: &TextAttributedGraph) -> SparseAdjacency {
    symmetric_adjacency(g, true)
}

/// `D̂^{-1} Â`: each row averages the node's closed neighborhood.
pub fn row_normalized_adjacency(g: &TextAttributedGraph, self_loops: bool) -> SparseAdjacency {
    let deg = smoothing_degrees(g, self_loops);
    let mut trip = Vec::with_capacity(2 * g.edge_count() + g.node_count());
    for &(u, v) in g.edges() {
        trip.push((u, v, inv(deg[u])));
        trip.push((v, u, inv(deg[v])));
    }
    if self_loops {
        for (v, &d) in deg.iter().enumerate() {
            trip.push((v, v, inv(d)));
        }
    }
    SparseAdjacency::from_triplets(g.node_count(), trip).expect("edges validated at construction")
}

/// `Z = S^k X`, where `S` is the symmetric operator (`Laplacian`) or the
/// row-normalized one (`PlainMean`). `k = 0` returns `X` unchanged.
pub fn laplacian_smooth(
    x: &DenseMatrix,
    g: &TextAttributedGraph,
    k: usize,
    weighting: Weighting,
    self_loops: bool,
) -> Result<DenseMatrix> {
    if x.rows() != g.node_count() {
        return Err(Error::shape("laplacian_smooth", g.node_count(), x.rows()));
    }
    if k == 0 {
        return Ok(x.clone());
    }
    let s = match weighting {
        Weighting::Laplacian => symmetric_adjacency(g, self_loops),
        Weighting::PlainMean => row_normalized_adjacency(g, self_loops),
    };
    let mut z = s.spmm(x)?;
    for _ in 1..k {
        z = s.spmm(&z)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::super::test_graphs::simple;
    use super::*;

    #[test]
    fn isolated_node_is_one() {
        let g = simple(1, 1, &[]);
        let s = gcn_normalized_adjacency(&g);
        assert_eq!(s.to_dense().data(), &[1.0]);
    }

    #[test]
    fn single_edge_is_all_half() {
        let g = simple(2, 1, &[(0, 1)]);
        let s = gcn_normalized_adjacency(&g);
        assert_eq!(s.to_dense().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn symmetric_with_bounded_spectrum() {
        let g = simple(7, 2, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (2, 6)]);
        let s = gcn_normalized_adjacency(&g);
        assert!(s.is_symmetric(0.0));
        assert!(s.spectral_radius_estimate(200) <= 1.0 + 1e-9);
    }

    #[test]
    fn smoothing_hand_example() {
        let g = simple(2, 1, &[(0, 1)]);
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let z = laplacian_smooth(&x, &g, 1, Weighting::Laplacian, true).unwrap();
        assert_eq!(z.data(), &[0.5, 0.5]);
        for w in [Weighting::Laplacian, Weighting::PlainMean] {
            assert_eq!(laplacian_smooth(&x, &g, 0, w, true).unwrap(), x);
        }
        assert!(laplacian_smooth(&DenseMatrix::zeros(3, 1), &g, 1, Weighting::Laplacian, true).is_err());
    }

    #[test]
    fn plain_mean_rows_sum_to_one() {
        let g = simple(4, 2, &[(0, 1), (1, 2), (1, 3)]);
        let s = row_normalized_adjacency(&g, true);
        for r in 0..4 {
            let sum: f64 = s.row(r).map(|(_, v)| v).sum();
            assert!((sum - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn without_self_loops_isolated_rows_vanish() {
        let g = simple(3, 1, &[(0, 1)]);
        let s = symmetric_adjacency(&g, false);
        assert_eq!(s.row(2).count(), 0);
        assert_eq!(s.get(0, 1), 1.0);
    }
}
