//! Row-major square matrices for the brute-force reference path.
//!
//! Every n×n allocation goes through [`DenseMatrix::zeros`], which enforces
//! the capacity guard and bumps a per-thread counter. The spectral path never
//! touches this type; tests assert that by reading [`dense_allocations`].

use std::cell::Cell;

use rayon::prelude::*;

use crate::error::{Result, ShotError};

/// Largest node count for which an n×n matrix may be materialized.
pub const DENSE_GUARD: usize = 16_384;

thread_local! {
    static ALLOCATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of dense n×n matrices allocated on the current thread so far.
pub fn dense_allocations() -> usize {
    ALLOCATIONS.with(Cell::get)
}

pub(crate) fn check_capacity(n: usize) -> Result<()> {
    if n > DENSE_GUARD {
        return Err(ShotError::Capacity {
            n,
            guard: DENSE_GUARD,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Result<Self> {
        check_capacity(n)?;
        ALLOCATIONS.with(|c| c.set(c.get() + 1));
        Ok(Self {
            n,
            data: vec![0.0; n * n],
        })
    }

    /// Builds a matrix entry by entry, row by row.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(n)?;
        for i in 0..n {
            let row = &mut m.data[i * n..(i + 1) * n];
            for (j, x) in row.iter_mut().enumerate() {
                *x = f(i, j);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Fills rows in parallel with `f(i, row_i)`.
    pub fn par_rows_mut(&mut self, f: impl Fn(usize, &mut [f64]) + Sync) {
        let n = self.n;
        self.data
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }

    /// Applies `f` to every entry in place.
    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `out = M x`. Rows run in parallel; each row sum is sequential, so the
    /// result does not depend on the thread count.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            *o = self.row(i).iter().zip(x).map(|(m, v)| m * v).sum();
        });
    }

    /// `out = Mᵀ x`, parallel over blocks of output entries.
    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        const BLOCK: usize = 256;
        out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
            chunk.fill(0.0);
            let j0 = b * BLOCK;
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &self.row(i)[j0..j0 + chunk.len()];
                for (o, m) in chunk.iter_mut().zip(row) {
                    *o += m * xi;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_rejects_large_matrices() {
        let err = DenseMatrix::zeros(DENSE_GUARD + 1).unwrap_err();
        assert_eq!(err.code(), "capacity");
    }

    #[test]
    fn allocations_are_counted() {
        let before = dense_allocations();
        let _m = DenseMatrix::zeros(3).unwrap();
        assert_eq!(dense_allocations(), before + 1);
    }

    #[test]
    fn transpose_product_matches_explicit_transpose() {
        let m = DenseMatrix::from_fn(3, |i, j| (i * 3 + j) as f64).unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        m.matvec_transpose(&x, &mut a);
        let t = DenseMatrix::from_fn(3, |i, j| m.get(j, i)).unwrap();
        t.matvec(&x, &mut b);
        assert_eq!(a, b);
    }
}
