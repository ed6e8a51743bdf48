use crate::error::{Error, Result};
use crate::exec::{self, Exec};

use super::dense::DenseMatrix;

/// Compressed-row square operator used for graph propagation.
///
/// Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdjacency {
    /// Builds a CSR matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, v) in &triplets {
            if r >= n || c >= n {
                return Err(Error::OutOfRange {
                    what: "sparse index",
                    index: r.max(c),
                    bound: n,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sparse entry ({r}, {c})")));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&c) {
            Ok(i) => self.values[span.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let triplets = (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        Self::from_triplets(self.n, triplets).expect("transpose of a valid matrix")
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    /// Sparse-dense product `self · x`.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.spmm_with(x, Exec::default())
    }

    pub fn spmm_with(&self, x: &DenseMatrix, exec: Exec) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::shape("spmm", format!("{} rows", self.n), x.rows()));
        }
        let mut out = DenseMatrix::zeros(self.n, x.cols());
        let cols = x.cols();
        exec::for_each_chunk_mut(exec, out.data_mut(), cols, |r, dst| {
            for (c, v) in self.row(r) {
                for (d, &b) in dst.iter_mut().zip(x.row(c)) {
                    *d += v * b;
                }
            }
        });
        Ok(out)
    }

    /// Largest absolute eigenvalue estimate by power iteration (symmetric operators).
    pub fn spectral_radius_estimate(&self, iters: usize) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let mut v = DenseMatrix::from_vec(
            self.n,
            1,
            (0..self.n).map(|i| 1.0 + (i as f64 * 0.618).fract()).collect(),
        )
        .expect("column vector");
        let mut lambda = 0.0;
        for _ in 0..iters {
            let w = self.spmm_with(&v, Exec::Sequential).expect("square operator");
            let nrm = super::dense::norm(w.data());
            if nrm == 0.0 {
                return 0.0;
            }
            lambda = nrm / super::dense::norm(v.data());
            v = w;
            v.scale(1.0 / nrm);
        }
        lambda
    }
}
