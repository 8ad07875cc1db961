//! Ruiz equilibration compatible with the cone structure.
//!
//! Rows of a SOC or PSD block share one factor so the scaled slack stays in
//! the same cone; nonnegative rows and equality rows scale individually.

use crate::cones::{offsets, Cone};
use crate::program::ConicProgram;
use crate::Real;

pub(crate) struct Equilibration<T> {
    /// x = d ∘ x̃
    pub d: Vec<T>,
    /// equality rows: ỹ = y / ea
    pub ea: Vec<T>,
    /// cone rows: s̃ = eg ∘ s, z̃ = z / eg
    pub eg: Vec<T>,
}

impl<T: Real> Equilibration<T> {
    pub fn identity(p: &ConicProgram<T>) -> Self {
        Self { d: vec![T::one(); p.c.len()], ea: vec![T::one(); p.b.len()], eg: vec![T::one(); p.h.len()] }
    }

    /// Scale `p` in place and return the factors.
    pub fn apply(p: &mut ConicProgram<T>, iters: usize) -> Self {
        let mut eq = Self::identity(p);
        let n = p.c.len();
        let off = offsets(&p.cones);
        let lo = T::lit(1e-4);
        let hi = T::lit(1e4);
        let clamp = |v: T| if v < lo { lo } else if v > hi { hi } else { v };
        for _ in 0..iters {
            let mut cn = vec![T::zero(); n];
            let mut ra = vec![T::zero(); p.a.nrows];
            let mut rg = vec![T::zero(); p.g.nrows];
            for c in 0..n {
                for (r, v) in p.a.col(c) {
                    let a = v.abs();
                    cn[c] = cn[c].max(a);
                    ra[r] = ra[r].max(a);
                }
                for (r, v) in p.g.col(c) {
                    let a = v.abs();
                    cn[c] = cn[c].max(a);
                    rg[r] = rg[r].max(a);
                }
            }
            for (k, cone) in p.cones.iter().enumerate() {
                if !matches!(cone, Cone::NonNeg(_)) {
                    let m = rg[off[k]..off[k + 1]].iter().copied().fold(T::zero(), |a, b| a.max(b));
                    rg[off[k]..off[k + 1]].iter_mut().for_each(|x| *x = m);
                }
            }
            let inv_sqrt = |x: T| if x > T::zero() { T::one() / clamp(x).sqrt() } else { T::one() };
            let dc: Vec<T> = cn.iter().map(|x| inv_sqrt(*x)).collect();
            let dra: Vec<T> = ra.iter().map(|x| inv_sqrt(*x)).collect();
            let drg: Vec<T> = rg.iter().map(|x| inv_sqrt(*x)).collect();
            p.a.scale(&dra, &dc);
            p.g.scale(&drg, &dc);
            for i in 0..n {
                eq.d[i] *= dc[i];
            }
            for i in 0..dra.len() {
                eq.ea[i] *= dra[i];
            }
            for i in 0..drg.len() {
                eq.eg[i] *= drg[i];
            }
        }
        for i in 0..n {
            p.c[i] *= eq.d[i];
        }
        for i in 0..p.b.len() {
            p.b[i] *= eq.ea[i];
        }
        for i in 0..p.h.len() {
            p.h[i] *= eq.eg[i];
        }
        eq
    }

    pub fn unscale_x(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.d).map(|(a, b)| *a * *b).collect()
    }
    pub fn unscale_y(&self, y: &[T]) -> Vec<T> {
        y.iter().zip(&self.ea).map(|(a, b)| *a * *b).collect()
    }
    pub fn unscale_z(&self, z: &[T]) -> Vec<T> {
        z.iter().zip(&self.eg).map(|(a, b)| *a * *b).collect()
    }
    pub fn unscale_s(&self, s: &[T]) -> Vec<T> {
        s.iter().zip(&self.eg).map(|(a, b)| *a / *b).collect()
    }
}
