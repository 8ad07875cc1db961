//! Minimal compressed-column storage, enough for constraint matrices.

use crate::Real;
use nalgebra::DMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowval: Vec<usize>,
    pub nzval: Vec<T>,
}

impl<T: Real> CscMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, colptr: vec![0; ncols + 1], rowval: vec![], nzval: vec![] }
    }

    /// Build from (row, col, value) triplets. Duplicates are summed, explicit
    /// zeros dropped. Panics on out-of-range indices.
    pub fn from_triplets(nrows: usize, ncols: usize, trip: &[(usize, usize, T)]) -> Self {
        let mut t: Vec<(usize, usize, T)> = trip.to_vec();
        for &(r, c, _) in &t {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of range {nrows}x{ncols}");
        }
        t.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowval = Vec::with_capacity(t.len());
        let mut nzval: Vec<T> = Vec::with_capacity(t.len());
        let mut cols = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if let (Some(&lr), Some(&lc)) = (rowval.last(), cols.last()) {
                if lr == r && lc == c {
                    let last = nzval.last_mut().unwrap();
                    *last += v;
                    continue;
                }
            }
            rowval.push(r);
            cols.push(c);
            nzval.push(v);
        }
        // drop exact zeros produced by cancellation
        let mut keep_r = Vec::with_capacity(rowval.len());
        let mut keep_v = Vec::with_capacity(rowval.len());
        for ((r, c), v) in rowval.into_iter().zip(cols).zip(nzval) {
            if v != T::zero() {
                keep_r.push(r);
                keep_v.push(v);
                colptr[c + 1] += 1;
            }
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        Self { nrows, ncols, colptr, rowval: keep_r, nzval: keep_v }
    }

    pub fn from_dense(m: &DMatrix<T>) -> Self {
        let mut trip = vec![];
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != T::zero() {
                    trip.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                m[(self.rowval[k], c)] += self.nzval[k];
            }
        }
        m
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::with_capacity(self.nnz());
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                out.push((self.rowval[k], c, self.nzval[k]));
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.nzval.len()
    }

    pub fn col(&self, c: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.colptr[c]..self.colptr[c + 1]).map(move |k| (self.rowval[k], self.nzval[k]))
    }

    /// y += alpha * A x
    pub fn gemv(&self, alpha: T, x: &[T], y: &mut [T]) {
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == T::zero() {
                continue;
            }
            let ax = alpha * xc;
            for k in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowval[k]] += ax * self.nzval[k];
            }
        }
    }

    /// y += alpha * A^T x
    pub fn gemv_t(&self, alpha: T, x: &[T], y: &mut [T]) {
        for c in 0..self.ncols {
            let mut acc = T::zero();
            for k in self.colptr[c]..self.colptr[c + 1] {
                acc += self.nzval[k] * x[self.rowval[k]];
            }
            y[c] += alpha * acc;
        }
    }

    /// Scale rows by `r` and columns by `d`: diag(r) A diag(d).
    pub fn scale(&mut self, r: &[T], d: &[T]) {
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                self.nzval[k] = self.nzval[k] * r[self.rowval[k]] * d[c];
            }
        }
    }

    pub fn cast<U: Real>(&self) -> CscMatrix<U> {
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            colptr: self.colptr.clone(),
            rowval: self.rowval.clone(),
            nzval: self.nzval.iter().map(|v| U::lit(v.to_f())).collect(),
        }
    }
}
