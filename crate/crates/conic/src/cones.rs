//! Cone definitions, packed symmetric storage and Nesterov-Todd scaling.

use crate::Real;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// One block of the slack vector.
///
/// `NonNeg(k)`: k scalars, `Soc(k)`: (t, x) with ‖x‖ ≤ t and total length k,
/// `Psd(n)`: an n×n symmetric matrix stored in svec form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "lowercase")]
pub enum Cone {
    NonNeg(usize),
    Soc(usize),
    Psd(usize),
}

impl Cone {
    /// Length of the slack slice.
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNeg(k) | Cone::Soc(k) => k,
            Cone::Psd(n) => svec_len(n),
        }
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::NonNeg(k) => k,
            Cone::Soc(_) => 1,
            Cone::Psd(n) => n,
        }
    }
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry (i, j), i >= j, in column-major lower-triangular order.
#[inline]
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * (2 * n - j + 1) / 2 + (i - j)
}

/// Inverse of `svec_index`.
pub fn svec_pos(n: usize, mut k: usize) -> (usize, usize) {
    for j in 0..n {
        let len = n - j;
        if k < len {
            return (j + k, j);
        }
        k -= len;
    }
    panic!("svec position out of range");
}

/// Pack a symmetric matrix; off-diagonal entries carry a factor √2.
pub fn svec<T: Real>(m: &DMatrix<T>, out: &mut [T]) {
    let n = m.nrows();
    let r2 = T::two().sqrt();
    let mut k = 0;
    for j in 0..n {
        out[k] = m[(j, j)];
        k += 1;
        for i in j + 1..n {
            out[k] = r2 * T::lit(0.5) * (m[(i, j)] + m[(j, i)]);
            k += 1;
        }
    }
}

pub fn svec_vec<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut v = vec![T::zero(); svec_len(m.nrows())];
    svec(m, &mut v);
    v
}

/// Unpack svec storage into a full symmetric matrix.
pub fn smat<T: Real>(v: &[T], n: usize) -> DMatrix<T> {
    let ir2 = T::one() / T::two().sqrt();
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        m[(j, j)] = v[k];
        k += 1;
        for i in j + 1..n {
            let x = v[k] * ir2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Side length of a PSD block from its svec length.
pub fn psd_side(len: usize) -> usize {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    assert_eq!(svec_len(n), len, "not an svec length");
    n
}

/// Per-block Nesterov-Todd scaling data.
#[derive(Clone, Debug)]
pub(crate) enum BlockScaling<T> {
    /// W = diag(w)
    NonNeg { w: Vec<T> },
    /// W = beta * Wbar, Wbar = [[w0, w1ᵀ], [w1, I + w1 w1ᵀ/(1+w0)]]
    Soc { beta: T, wbar: DVector<T> },
    /// W(U) = Rᵀ U R
    Psd { r: DMatrix<T>, rinv: DMatrix<T>, t: DMatrix<T> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Op {
    W,
    WInv,
    WT,
    WInvT,
}

/// Scaling for the whole cone product together with the scaled point λ.
#[derive(Clone, Debug)]
pub(crate) struct Scaling<T> {
    pub blocks: Vec<BlockScaling<T>>,
    pub lambda: Vec<T>,
    /// eigenvalues of λ for PSD blocks (λ is diagonal there), empty otherwise
    pub psd_eigs: Vec<Vec<T>>,
}

pub(crate) fn offsets(cones: &[Cone]) -> Vec<usize> {
    let mut o = Vec::with_capacity(cones.len() + 1);
    let mut acc = 0;
    o.push(0);
    for c in cones {
        acc += c.dim();
        o.push(acc);
    }
    o
}

fn soc_jnorm2<T: Real>(v: &[T]) -> T {
    let mut s = v[0] * v[0];
    for x in &v[1..] {
        s -= *x * *x;
    }
    s
}

impl<T: Real> Scaling<T> {
    pub fn identity(cones: &[Cone]) -> Self {
        let blocks = cones
            .iter()
            .map(|c| match *c {
                Cone::NonNeg(k) => BlockScaling::NonNeg { w: vec![T::one(); k] },
                Cone::Soc(k) => {
                    let mut wbar = DVector::zeros(k);
                    wbar[0] = T::one();
                    BlockScaling::Soc { beta: T::one(), wbar }
                }
                Cone::Psd(n) => BlockScaling::Psd {
                    r: DMatrix::identity(n, n),
                    rinv: DMatrix::identity(n, n),
                    t: DMatrix::identity(n, n),
                },
            })
            .collect();
        let mut lambda = vec![T::zero(); cones.iter().map(|c| c.dim()).sum()];
        identity_elem(cones, &mut lambda);
        let psd_eigs = cones
            .iter()
            .map(|c| match *c {
                Cone::Psd(n) => vec![T::one(); n],
                _ => vec![],
            })
            .collect();
        Self { blocks, lambda, psd_eigs }
    }

    /// Nesterov-Todd scaling point for strictly interior (s, z).
    pub fn nt(cones: &[Cone], s: &[T], z: &[T]) -> Option<Self> {
        let off = offsets(cones);
        let mut blocks = Vec::with_capacity(cones.len());
        let mut lambda = vec![T::zero(); s.len()];
        let mut psd_eigs = Vec::with_capacity(cones.len());
        for (k, c) in cones.iter().enumerate() {
            let (a, b) = (off[k], off[k + 1]);
            let (sk, zk) = (&s[a..b], &z[a..b]);
            match *c {
                Cone::NonNeg(_) => {
                    let mut w = Vec::with_capacity(b - a);
                    for i in 0..b - a {
                        if !(sk[i] > T::zero() && zk[i] > T::zero()) {
                            return None;
                        }
                        w.push((sk[i] / zk[i]).sqrt());
                        lambda[a + i] = (sk[i] * zk[i]).sqrt();
                    }
                    blocks.push(BlockScaling::NonNeg { w });
                    psd_eigs.push(vec![]);
                }
                Cone::Soc(q) => {
                    let sn = soc_jnorm2(sk);
                    let zn = soc_jnorm2(zk);
                    if !(sk[0] > T::zero() && zk[0] > T::zero() && sn > T::zero() && zn > T::zero()) {
                        return None;
                    }
                    let (sn, zn) = (sn.sqrt(), zn.sqrt());
                    let beta = (sn / zn).sqrt();
                    let sb: Vec<T> = sk.iter().map(|v| *v / sn).collect();
                    let zb: Vec<T> = zk.iter().map(|v| *v / zn).collect();
                    let dot: T = sb.iter().zip(&zb).fold(T::zero(), |acc, (x, y)| acc + *x * *y);
                    let gamma = ((T::one() + dot) / T::two()).sqrt();
                    let mut wbar = DVector::zeros(q);
                    wbar[0] = (sb[0] + zb[0]) / (T::two() * gamma);
                    for i in 1..q {
                        wbar[i] = (sb[i] - zb[i]) / (T::two() * gamma);
                    }
                    let blk = BlockScaling::Soc { beta, wbar };
                    // λ = W z
                    let mut l = zk.to_vec();
                    apply_block(&blk, Op::W, &mut l);
                    lambda[a..b].copy_from_slice(&l);
                    blocks.push(blk);
                    psd_eigs.push(vec![]);
                }
                Cone::Psd(n) => {
                    let sm = smat(sk, n);
                    let zm = smat(zk, n);
                    let ls = sm.cholesky()?.l();
                    let lz = zm.cholesky()?.l();
                    let m = lz.transpose() * &ls;
                    let svd = m.svd(true, true);
                    let u = svd.u?;
                    let vt = svd.v_t?;
                    let sv = svd.singular_values;
                    if sv.iter().any(|x| !(*x > T::zero())) {
                        return None;
                    }
                    let mut r = ls * vt.transpose();
                    let mut rinv = u.transpose() * lz.transpose();
                    for j in 0..n {
                        let f = T::one() / sv[j].sqrt();
                        r.column_mut(j).scale_mut(f);
                        rinv.row_mut(j).scale_mut(f);
                    }
                    let t = rinv.transpose() * &rinv;
                    let mut k2 = a;
                    for j in 0..n {
                        lambda[k2] = sv[j];
                        k2 += n - j;
                    }
                    psd_eigs.push(sv.iter().copied().collect());
                    blocks.push(BlockScaling::Psd { r, rinv, t });
                }
            }
        }
        Some(Self { blocks, lambda, psd_eigs })
    }

    pub fn apply(&self, cones: &[Cone], op: Op, v: &mut [T]) {
        let off = offsets(cones);
        for (k, blk) in self.blocks.iter().enumerate() {
            apply_block(blk, op, &mut v[off[k]..off[k + 1]]);
        }
    }

    /// v ← (WᵀW)⁻¹ v
    pub fn apply_hinv(&self, cones: &[Cone], v: &mut [T]) {
        self.apply(cones, Op::WInvT, v);
        self.apply(cones, Op::WInv, v);
    }

    /// v ← WᵀW v
    pub fn apply_h(&self, cones: &[Cone], v: &mut [T]) {
        self.apply(cones, Op::W, v);
        self.apply(cones, Op::WT, v);
    }
}

pub(crate) fn apply_block<T: Real>(blk: &BlockScaling<T>, op: Op, v: &mut [T]) {
    match blk {
        BlockScaling::NonNeg { w } => match op {
            Op::W | Op::WT => v.iter_mut().zip(w).for_each(|(x, w)| *x *= *w),
            Op::WInv | Op::WInvT => v.iter_mut().zip(w).for_each(|(x, w)| *x /= *w),
        },
        BlockScaling::Soc { beta, wbar } => {
            let inv = matches!(op, Op::WInv | Op::WInvT);
            // W⁻¹ = (1/β) J W̄ J
            if inv {
                for x in v[1..].iter_mut() {
                    *x = -*x;
                }
            }
            let w0 = wbar[0];
            let mut d = T::zero();
            for i in 1..v.len() {
                d += wbar[i] * v[i];
            }
            let v0 = v[0];
            v[0] = w0 * v0 + d;
            let c = v0 + d / (T::one() + w0);
            for i in 1..v.len() {
                v[i] += c * wbar[i];
            }
            let f = if inv { T::one() / *beta } else { *beta };
            if inv {
                for x in v[1..].iter_mut() {
                    *x = -*x;
                }
            }
            v.iter_mut().for_each(|x| *x *= f);
        }
        BlockScaling::Psd { r, rinv, .. } => {
            let n = r.nrows();
            let u = smat(v, n);
            let out = match op {
                Op::W => r.transpose() * u * r,
                Op::WT => r * u * r.transpose(),
                Op::WInv => rinv.transpose() * u * rinv,
                Op::WInvT => rinv * u * rinv.transpose(),
            };
            svec(&out, v);
        }
    }
}

/// Write the Jordan identity of the cone product into `e`.
pub(crate) fn identity_elem<T: Real>(cones: &[Cone], e: &mut [T]) {
    let off = offsets(cones);
    e.iter_mut().for_each(|x| *x = T::zero());
    for (k, c) in cones.iter().enumerate() {
        let a = off[k];
        match *c {
            Cone::NonNeg(q) => e[a..a + q].iter_mut().for_each(|x| *x = T::one()),
            Cone::Soc(_) => e[a] = T::one(),
            Cone::Psd(n) => {
                let mut p = a;
                for j in 0..n {
                    e[p] = T::one();
                    p += n - j;
                }
            }
        }
    }
}

/// Jordan product u ∘ v.
pub(crate) fn jprod<T: Real>(cones: &[Cone], u: &[T], v: &[T], out: &mut [T]) {
    let off = offsets(cones);
    for (k, c) in cones.iter().enumerate() {
        let (a, b) = (off[k], off[k + 1]);
        match *c {
            Cone::NonNeg(_) => {
                for i in a..b {
                    out[i] = u[i] * v[i];
                }
            }
            Cone::Soc(_) => {
                let mut d = T::zero();
                for i in a..b {
                    d += u[i] * v[i];
                }
                for i in a + 1..b {
                    out[i] = u[a] * v[i] + v[a] * u[i];
                }
                out[a] = d;
            }
            Cone::Psd(n) => {
                let um = smat(&u[a..b], n);
                let vm = smat(&v[a..b], n);
                let p = &um * &vm;
                let s = (&p + p.transpose()) * T::lit(0.5);
                svec(&s, &mut out[a..b]);
            }
        }
    }
}

/// Solve λ ∘ x = v for x, with λ the current scaled point.
pub(crate) fn jdiv<T: Real>(cones: &[Cone], sc: &Scaling<T>, v: &[T], out: &mut [T]) {
    let off = offsets(cones);
    let lam = &sc.lambda;
    for (k, c) in cones.iter().enumerate() {
        let (a, b) = (off[k], off[k + 1]);
        match *c {
            Cone::NonNeg(_) => {
                for i in a..b {
                    out[i] = v[i] / lam[i];
                }
            }
            Cone::Soc(_) => {
                let l0 = lam[a];
                let mut l1n = T::zero();
                let mut l1v1 = T::zero();
                for i in a + 1..b {
                    l1n += lam[i] * lam[i];
                    l1v1 += lam[i] * v[i];
                }
                let det = l0 * l0 - l1n;
                let x0 = (l0 * v[a] - l1v1) / det;
                out[a] = x0;
                for i in a + 1..b {
                    out[i] = (v[i] - x0 * lam[i]) / l0;
                }
            }
            Cone::Psd(n) => {
                let eig = &sc.psd_eigs[k];
                let mut p = a;
                for j in 0..n {
                    for i in j..n {
                        out[p] = T::two() * v[p] / (eig[i] + eig[j]);
                        p += 1;
                    }
                }
            }
        }
    }
}

/// Largest α with λ + α d in the cone (capped at `cap`).
pub(crate) fn max_step<T: Real>(cones: &[Cone], sc: &Scaling<T>, d: &[T], cap: T) -> T {
    let off = offsets(cones);
    let lam = &sc.lambda;
    let mut alpha = cap;
    for (k, c) in cones.iter().enumerate() {
        let (a, b) = (off[k], off[k + 1]);
        match *c {
            Cone::NonNeg(_) => {
                for i in a..b {
                    if d[i] < T::zero() {
                        let r = -lam[i] / d[i];
                        if r < alpha {
                            alpha = r;
                        }
                    }
                }
            }
            Cone::Soc(_) => {
                let l = &lam[a..b];
                let dd = &d[a..b];
                let qa = soc_jnorm2(dd);
                let mut qb = l[0] * dd[0];
                for i in 1..l.len() {
                    qb -= l[i] * dd[i];
                }
                let qc = soc_jnorm2(l);
                let disc = qb * qb - qa * qc;
                if disc >= T::zero() && (qa < T::zero() || qb < T::zero()) {
                    let den = -qb + disc.sqrt();
                    if den > T::zero() {
                        let r = qc / den;
                        if r < alpha {
                            alpha = r;
                        }
                    }
                }
                // guard the first component separately for the degenerate qa = 0 case
                if dd[0] < T::zero() {
                    let r = -l[0] / dd[0];
                    if r < alpha {
                        alpha = r;
                    }
                }
            }
            Cone::Psd(n) => {
                let eig = &sc.psd_eigs[k];
                let mut m = smat(&d[a..b], n);
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] /= (eig[i] * eig[j]).sqrt();
                    }
                }
                let ev = m.symmetric_eigenvalues();
                let mn = ev.iter().copied().fold(T::max_value().unwrap_or(T::lit(1e300)), |a, b| if b < a { b } else { a });
                if mn < T::zero() {
                    let r = -T::one() / mn;
                    if r < alpha {
                        alpha = r;
                    }
                }
            }
        }
    }
    alpha
}

/// Smallest "eigenvalue" of x with respect to each cone (negative means outside).
pub(crate) fn min_cone_eig<T: Real>(cones: &[Cone], x: &[T]) -> T {
    let off = offsets(cones);
    let mut m = T::max_value().unwrap_or(T::lit(1e300));
    for (k, c) in cones.iter().enumerate() {
        let (a, b) = (off[k], off[k + 1]);
        let v = match *c {
            Cone::NonNeg(_) => x[a..b].iter().copied().fold(m, |p, q| if q < p { q } else { p }),
            Cone::Soc(_) => {
                let mut n = T::zero();
                for i in a + 1..b {
                    n += x[i] * x[i];
                }
                x[a] - n.sqrt()
            }
            Cone::Psd(n) => {
                if n == 0 {
                    m
                } else {
                    let ev = smat(&x[a..b], n).symmetric_eigenvalues();
                    ev.iter().copied().fold(m, |p, q| if q < p { q } else { p })
                }
            }
        };
        if v < m {
            m = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn svec_roundtrip_and_inner_product() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 4.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.0, -2.0, 1.0, 0.3, 0.0, 0.3, 2.0]);
        let va = svec_vec(&a);
        let vb = svec_vec(&b);
        assert_relative_eq!(smat(&va, 3), a, epsilon = 1e-14);
        let ip: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        assert_relative_eq!(ip, (a * b).trace(), epsilon = 1e-12);
        for k in 0..6 {
            let (i, j) = svec_pos(3, k);
            assert_eq!(svec_index(3, i, j), k);
        }
    }

    fn check_nt(cones: &[Cone], s: &[f64], z: &[f64]) {
        let sc = Scaling::nt(cones, s, z).unwrap();
        let mut wz = z.to_vec();
        sc.apply(cones, Op::W, &mut wz);
        let mut ws = s.to_vec();
        sc.apply(cones, Op::WInvT, &mut ws);
        for i in 0..s.len() {
            assert_relative_eq!(wz[i], sc.lambda[i], epsilon = 1e-10, max_relative = 1e-10);
            assert_relative_eq!(ws[i], sc.lambda[i], epsilon = 1e-10, max_relative = 1e-10);
        }
        // W⁻¹ W = I and (WᵀW)⁻¹ WᵀW = I
        let v: Vec<f64> = (0..s.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut u = v.clone();
        sc.apply(cones, Op::W, &mut u);
        sc.apply(cones, Op::WInv, &mut u);
        let mut h = v.clone();
        sc.apply_h(cones, &mut h);
        sc.apply_hinv(cones, &mut h);
        for i in 0..v.len() {
            assert_relative_eq!(u[i], v[i], epsilon = 1e-10);
            assert_relative_eq!(h[i], v[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn nt_scaling_maps_both_points_to_lambda() {
        let cones = [Cone::NonNeg(2), Cone::Soc(3), Cone::Psd(2)];
        let s = [1.0, 2.0, 3.0, 1.0, -0.5, 2.0, 0.3, 1.0];
        let z = [0.5, 4.0, 2.0, -0.3, 0.4, 1.0, -0.2, 3.0];
        check_nt(&cones, &s, &z);
    }

    #[test]
    fn jordan_division_inverts_product() {
        let cones = [Cone::NonNeg(1), Cone::Soc(3), Cone::Psd(3)];
        let s: Vec<f64> = vec![2.0, 3.0, 1.0, 0.5, 2.0, 0.1, 0.2, 1.5, 0.1, 1.0];
        let z: Vec<f64> = vec![1.0, 2.0, -0.5, 0.5, 1.0, 0.2, -0.1, 2.0, 0.3, 1.2];
        let sc = Scaling::nt(&cones, &s, &z).unwrap();
        let v: Vec<f64> = (0..s.len()).map(|i| 1.0 + (i as f64).cos()).collect();
        let mut x = vec![0.0; s.len()];
        jdiv(&cones, &sc, &v, &mut x);
        let mut back = vec![0.0; s.len()];
        jprod(&cones, &sc.lambda, &x, &mut back);
        for i in 0..v.len() {
            assert_relative_eq!(back[i], v[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn max_step_hits_boundary() {
        let cones = [Cone::NonNeg(1), Cone::Soc(2), Cone::Psd(2)];
        let sc: Scaling<f64> = Scaling::identity(&cones);
        // λ = e; direction pushing each block out at α = 0.5
        let d = [-2.0, -2.0, 0.0, -2.0, 0.0, 0.0];
        let a = max_step(&cones, &sc, &d, 10.0);
        assert_relative_eq!(a, 0.5, epsilon = 1e-12);
        let d2 = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(max_step(&cones, &sc, &d2, 10.0), 10.0);
    }
}
