//! Reduced KKT system
//!
//! ```text
//! [ 0  Aᵀ  Gᵀ   ] [dx]   [bx]
//! [ A  0   0    ] [dy] = [by]
//! [ G  0  -WᵀW  ] [dz]   [bz]
//! ```
//!
//! solved by eliminating dz, factoring H = Gᵀ(WᵀW)⁻¹G + AᵀA with a dense
//! Cholesky and closing the equality block with a small Schur complement.

use crate::cones::{offsets, smat, svec, svec_pos, BlockScaling, Cone, Scaling};
use crate::sparse::CscMatrix;
use crate::Real;
use nalgebra::DMatrix;

struct ConeCols<T> {
    /// global column index of each participating column, ascending
    cols: Vec<usize>,
    /// per participating column: (row within cone, value)
    entries: Vec<Vec<(usize, T)>>,
    /// per row within cone: (position in `cols`, value)
    rows: Vec<Vec<(usize, T)>>,
}

pub(crate) struct Kkt<T> {
    n: usize,
    p: usize,
    cones: Vec<Cone>,
    g: CscMatrix<T>,
    a: CscMatrix<T>,
    blocks: Vec<ConeCols<T>>,
    psd_pos: Vec<Vec<(usize, usize)>>,
    l: DMatrix<T>,
    kinv_at: DMatrix<T>,
    schur: DMatrix<T>,
    pub reg: T,
}

impl<T: Real> Kkt<T> {
    pub fn new(a: &CscMatrix<T>, g: &CscMatrix<T>, cones: &[Cone]) -> Self {
        let off = offsets(cones);
        let mut blocks: Vec<ConeCols<T>> = cones
            .iter()
            .map(|c| ConeCols { cols: vec![], entries: vec![], rows: vec![vec![]; c.dim()] })
            .collect();
        let cone_of_row = |r: usize| match off.binary_search(&r) {
            Ok(k) => k,
            Err(k) => k - 1,
        };
        for col in 0..g.ncols {
            for (r, v) in g.col(col) {
                let k = cone_of_row(r);
                let b = &mut blocks[k];
                if b.cols.last() != Some(&col) {
                    b.cols.push(col);
                    b.entries.push(vec![]);
                }
                let pos = b.cols.len() - 1;
                b.entries[pos].push((r - off[k], v));
                b.rows[r - off[k]].push((pos, v));
            }
        }
        let psd_pos = cones
            .iter()
            .map(|c| match *c {
                Cone::Psd(n) => (0..c.dim()).map(|k| svec_pos(n, k)).collect(),
                _ => vec![],
            })
            .collect();
        let n = g.ncols;
        let p = a.nrows;
        Self {
            n,
            p,
            cones: cones.to_vec(),
            g: g.clone(),
            a: a.clone(),
            blocks,
            psd_pos,
            l: DMatrix::zeros(n, n),
            kinv_at: DMatrix::zeros(n, p),
            schur: DMatrix::zeros(p, p),
            reg: T::zero(),
        }
    }

    /// Assemble the lower triangle of Gᵀ(WᵀW)⁻¹G + AᵀA into `self.l`.
    fn assemble(&mut self, sc: &Scaling<T>) {
        self.l.fill(T::zero());
        let h = &mut self.l;
        let r2 = T::two().sqrt();
        for (k, blk) in self.blocks.iter().enumerate() {
            if blk.cols.is_empty() {
                continue;
            }
            match &sc.blocks[k] {
                BlockScaling::NonNeg { w } => {
                    for (r, row) in blk.rows.iter().enumerate() {
                        let d = T::one() / (w[r] * w[r]);
                        for (ia, &(pa, va)) in row.iter().enumerate() {
                            let ca = blk.cols[pa];
                            let f = va * d;
                            for &(pb, vb) in &row[..=ia] {
                                h[(ca, blk.cols[pb])] += f * vb;
                            }
                        }
                    }
                }
                BlockScaling::Soc { beta, wbar } => {
                    let ib2 = T::one() / (*beta * *beta);
                    // W⁻² = β⁻² (2 J w̄ w̄ᵀ J − J)
                    let v: Vec<T> = blk
                        .entries
                        .iter()
                        .map(|e| {
                            e.iter().fold(T::zero(), |acc, &(r, x)| {
                                let jw = if r == 0 { wbar[0] } else { -wbar[r] };
                                acc + x * jw
                            })
                        })
                        .collect();
                    for pa in 0..blk.cols.len() {
                        let f = T::two() * ib2 * v[pa];
                        for pb in 0..=pa {
                            h[(blk.cols[pa], blk.cols[pb])] += f * v[pb];
                        }
                    }
                    for (r, row) in blk.rows.iter().enumerate() {
                        let sgn = if r == 0 { -ib2 } else { ib2 };
                        for (ia, &(pa, va)) in row.iter().enumerate() {
                            let ca = blk.cols[pa];
                            for &(pb, vb) in &row[..=ia] {
                                h[(ca, blk.cols[pb])] += sgn * va * vb;
                            }
                        }
                    }
                }
                BlockScaling::Psd { t, .. } => {
                    let m = t.nrows();
                    let len = self.cones[k].dim();
                    let pos = &self.psd_pos[k];
                    let mut y = vec![T::zero(); len];
                    for pa in 0..blk.cols.len() {
                        let ent = &blk.entries[pa];
                        y.iter_mut().for_each(|x| *x = T::zero());
                        if ent.len() <= m {
                            for &(r, val) in ent {
                                let (i, j) = pos[r];
                                let mut q = 0;
                                if i == j {
                                    for l in 0..m {
                                        let til = t[(i, l)] * val;
                                        y[q] += til * t[(i, l)];
                                        q += 1;
                                        for kk in l + 1..m {
                                            y[q] += r2 * til * t[(kk, i)];
                                            q += 1;
                                        }
                                    }
                                } else {
                                    let c = val / r2;
                                    for l in 0..m {
                                        let (tjl, til) = (t[(j, l)] * c, t[(i, l)] * c);
                                        y[q] += T::two() * t[(l, i)] * tjl;
                                        q += 1;
                                        for kk in l + 1..m {
                                            y[q] += r2 * (t[(kk, i)] * tjl + t[(kk, j)] * til);
                                            q += 1;
                                        }
                                    }
                                }
                            }
                        } else {
                            let mut u = vec![T::zero(); len];
                            for &(r, val) in ent {
                                u[r] = val;
                            }
                            let um = smat(&u, m);
                            let ym = t * um * t;
                            svec(&ym, &mut y);
                        }
                        let ca = blk.cols[pa];
                        for pb in 0..=pa {
                            let dot = blk.entries[pb].iter().fold(T::zero(), |acc, &(r, v)| acc + v * y[r]);
                            h[(ca, blk.cols[pb])] += dot;
                        }
                    }
                }
            }
        }
        // AᵀA
        if self.p > 0 {
            let at = row_lists(&self.a);
            for row in &at {
                for (ia, &(ca, va)) in row.iter().enumerate() {
                    for &(cb, vb) in &row[..=ia] {
                        let (hi, lo) = if ca >= cb { (ca, cb) } else { (cb, ca) };
                        h[(hi, lo)] += va * vb;
                    }
                }
            }
        }
    }

    /// Factor for the given scaling. Returns false if even a regularized
    /// factorization fails.
    pub fn factor(&mut self, sc: &Scaling<T>) -> bool {
        self.assemble(sc);
        let n = self.n;
        let maxd = (0..n).fold(T::one(), |m, i| if self.l[(i, i)] > m { self.l[(i, i)] } else { m });
        let base = self.l.clone();
        let mut reg = T::machine_eps() * T::lit(100.0) * maxd;
        for _ in 0..8 {
            for i in 0..n {
                self.l[(i, i)] += reg;
            }
            if cholesky_in_place(&mut self.l) {
                self.reg = reg;
                return self.factor_schur();
            }
            self.l.copy_from(&base);
            reg *= T::lit(1e3);
        }
        false
    }

    fn factor_schur(&mut self) -> bool {
        let p = self.p;
        if p == 0 {
            return true;
        }
        let ad = self.a.to_dense();
        let mut kat = ad.transpose();
        for j in 0..p {
            let mut col: Vec<T> = kat.column(j).iter().copied().collect();
            chol_solve(&self.l, &mut col);
            kat.column_mut(j).copy_from_slice(&col);
        }
        let mut s = &ad * &kat;
        let maxd = (0..p).fold(T::one(), |m, i| if s[(i, i)] > m { s[(i, i)] } else { m });
        let reg = T::machine_eps() * T::lit(100.0) * maxd;
        for i in 0..p {
            s[(i, i)] += reg;
        }
        self.kinv_at = kat;
        let ok = cholesky_in_place(&mut s);
        self.schur = s;
        ok
    }

    fn solve_once(&self, cones: &[Cone], sc: &Scaling<T>, bx: &[T], by: &[T], bz: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let n = self.n;
        let mut t = bz.to_vec();
        sc.apply_hinv(cones, &mut t);
        let mut r = bx.to_vec();
        self.g.gemv_t(T::one(), &t, &mut r);
        self.a.gemv_t(T::one(), by, &mut r);
        chol_solve(&self.l, &mut r);
        let mut dy = vec![T::zero(); self.p];
        if self.p > 0 {
            self.a.gemv(T::one(), &r, &mut dy);
            for i in 0..self.p {
                dy[i] -= by[i];
            }
            chol_solve(&self.schur, &mut dy);
            for j in 0..self.p {
                for i in 0..n {
                    r[i] -= self.kinv_at[(i, j)] * dy[j];
                }
            }
        }
        let dx = r;
        let mut dz = vec![T::zero(); bz.len()];
        self.g.gemv(T::one(), &dx, &mut dz);
        for i in 0..dz.len() {
            dz[i] -= bz[i];
        }
        sc.apply_hinv(cones, &mut dz);
        (dx, dy, dz)
    }

    /// Solve with iterative refinement against the unregularized system.
    pub fn solve(&self, sc: &Scaling<T>, bx: &[T], by: &[T], bz: &[T], refine: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        let cones = &self.cones;
        let (mut dx, mut dy, mut dz) = self.solve_once(cones, sc, bx, by, bz);
        let bnorm = norm_inf(bx).max(norm_inf(by)).max(norm_inf(bz)).max(T::one());
        for _ in 0..refine {
            let (ex, ey, ez) = self.residual(sc, bx, by, bz, &dx, &dy, &dz);
            let e = norm_inf(&ex).max(norm_inf(&ey)).max(norm_inf(&ez));
            if e <= T::machine_eps() * T::lit(10.0) * bnorm {
                break;
            }
            let (cx, cy, cz) = self.solve_once(cones, sc, &ex, &ey, &ez);
            add(&mut dx, &cx);
            add(&mut dy, &cy);
            add(&mut dz, &cz);
        }
        (dx, dy, dz)
    }

    #[allow(clippy::too_many_arguments)]
    fn residual(
        &self,
        sc: &Scaling<T>,
        bx: &[T],
        by: &[T],
        bz: &[T],
        dx: &[T],
        dy: &[T],
        dz: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let mut ex = bx.to_vec();
        self.a.gemv_t(-T::one(), dy, &mut ex);
        self.g.gemv_t(-T::one(), dz, &mut ex);
        let mut ey = by.to_vec();
        self.a.gemv(-T::one(), dx, &mut ey);
        let mut ez = bz.to_vec();
        self.g.gemv(-T::one(), dx, &mut ez);
        let mut hz = dz.to_vec();
        sc.apply_h(&self.cones, &mut hz);
        add(&mut ez, &hz);
        (ex, ey, ez)
    }
}

fn row_lists<T: Real>(a: &CscMatrix<T>) -> Vec<Vec<(usize, T)>> {
    let mut rows = vec![vec![]; a.nrows];
    for c in 0..a.ncols {
        for (r, v) in a.col(c) {
            rows[r].push((c, v));
        }
    }
    rows
}

fn add<T: Real>(a: &mut [T], b: &[T]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
}

pub(crate) fn norm_inf<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| if x.abs() > m { x.abs() } else { m })
}

/// In-place blocked Cholesky of the lower triangle; the strict upper
/// triangle is used as scratch. Returns false on a non-positive pivot.
pub fn cholesky_in_place<T: Real>(m: &mut DMatrix<T>) -> bool {
    let n = m.nrows();
    const NB: usize = 48;
    let mut k = 0;
    while k < n {
        let kb = NB.min(n - k);
        {
            let data = m.as_mut_slice();
            for j in k..k + kb {
                let (left, right) = data.split_at_mut(j * n);
                let colj = &mut right[..n];
                for p in k..j {
                    let colp = &left[p * n..p * n + n];
                    let ljp = colp[j];
                    if ljp != T::zero() {
                        for i in j..n {
                            colj[i] -= ljp * colp[i];
                        }
                    }
                }
                let d = colj[j];
                if !(d > T::zero()) || !d.is_finite_val() {
                    return false;
                }
                let s = d.sqrt();
                colj[j] = s;
                let inv = T::one() / s;
                for x in colj[j + 1..].iter_mut() {
                    *x *= inv;
                }
            }
        }
        let r = n - k - kb;
        if r > 0 {
            let l21 = m.view((k + kb, k), (r, kb)).clone_owned();
            let l21t = l21.transpose();
            let mut a22 = m.view_mut((k + kb, k + kb), (r, r));
            a22.gemm(-T::one(), &l21, &l21t, T::one());
        }
        k += kb;
    }
    true
}

/// Solve L Lᵀ x = b in place, L lower (column-major).
pub fn chol_solve<T: Real>(l: &DMatrix<T>, b: &mut [T]) {
    let n = l.nrows();
    let d = l.as_slice();
    for j in 0..n {
        let col = &d[j * n..j * n + n];
        b[j] /= col[j];
        let bj = b[j];
        if bj != T::zero() {
            for i in j + 1..n {
                b[i] -= col[i] * bj;
            }
        }
    }
    for j in (0..n).rev() {
        let col = &d[j * n..j * n + n];
        let mut s = b[j];
        for i in j + 1..n {
            s -= col[i] * b[i];
        }
        b[j] = s / col[j];
    }
}
