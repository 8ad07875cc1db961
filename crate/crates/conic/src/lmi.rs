//! Modeling layer: affine scalar and symmetric-matrix expressions over a flat
//! variable vector, compiled to a [`ConicProgram`].
//!
//! Strict inequalities `F(x) ≻ 0` are modeled as `F(x) ⪰ εI` with ε folded
//! into the constant term, so the solver only sees closed cones.

use crate::cones::{smat, svec_index, svec_len, Cone};
use crate::program::ConicProgram;
use crate::sparse::CscMatrix;
use crate::{ConicError, Real};
use nalgebra::DMatrix;
use std::collections::BTreeMap;

/// `constant + Σ coef·x[var]`
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine<T> {
    pub constant: T,
    pub terms: Vec<(usize, T)>,
}

impl<T: Real> Affine<T> {
    pub fn zero() -> Self {
        Self { constant: T::zero(), terms: vec![] }
    }
    pub fn constant(c: T) -> Self {
        Self { constant: c, terms: vec![] }
    }
    pub fn var(i: usize) -> Self {
        Self { constant: T::zero(), terms: vec![(i, T::one())] }
    }
    pub fn term(mut self, var: usize, coef: T) -> Self {
        self.terms.push((var, coef));
        self
    }
    pub fn add_scaled(&mut self, other: &Affine<T>, f: T) {
        self.constant += f * other.constant;
        self.terms.extend(other.terms.iter().map(|(i, c)| (*i, f * *c)));
    }
    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().fold(self.constant, |acc, (i, c)| acc + *c * x[*i])
    }

    /// Merge duplicate variables, drop exact zeros, sort by index.
    pub fn normalized(&self) -> Self {
        let mut m: BTreeMap<usize, T> = BTreeMap::new();
        for (i, c) in &self.terms {
            *m.entry(*i).or_insert(T::zero()) += *c;
        }
        Self { constant: self.constant, terms: m.into_iter().filter(|(_, c)| *c != T::zero()).collect() }
    }

    fn max_abs(&self) -> T {
        self.terms.iter().fold(self.constant.abs(), |a, (_, c)| a.max(c.abs()))
    }
}

/// Sparse affine symmetric matrix `F0 + Σ x_i F_i`, stored entrywise.
///
/// Entries are kept as given; symmetry is checked when compiling.
#[derive(Clone, Debug)]
pub struct AffineSym<T> {
    n: usize,
    entries: BTreeMap<(usize, usize), Affine<T>>,
}

impl<T: Real> AffineSym<T> {
    pub fn new(n: usize) -> Self {
        Self { n, entries: BTreeMap::new() }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn entry(&mut self, i: usize, j: usize) -> &mut Affine<T> {
        assert!(i < self.n && j < self.n, "entry ({i},{j}) outside {0}x{0}", self.n);
        self.entries.entry((i, j)).or_insert_with(Affine::zero)
    }

    /// Add `coef·x[var]` at (i, j) only.
    pub fn add(&mut self, i: usize, j: usize, var: usize, coef: T) {
        self.entry(i, j).terms.push((var, coef));
    }

    /// Add `coef·x[var]` at (i, j) and (j, i).
    pub fn add_sym(&mut self, i: usize, j: usize, var: usize, coef: T) {
        self.add(i, j, var, coef);
        if i != j {
            self.add(j, i, var, coef);
        }
    }

    pub fn add_const(&mut self, i: usize, j: usize, v: T) {
        self.entry(i, j).constant += v;
    }

    pub fn add_sym_const(&mut self, i: usize, j: usize, v: T) {
        self.add_const(i, j, v);
        if i != j {
            self.add_const(j, i, v);
        }
    }

    /// Add an affine scalar at (i, j) and (j, i).
    pub fn add_sym_affine(&mut self, i: usize, j: usize, a: &Affine<T>) {
        self.entry(i, j).add_scaled(a, T::one());
        if i != j {
            self.entry(j, i).add_scaled(a, T::one());
        }
    }

    /// Add a constant dense block with top-left corner at (r0, c0).
    pub fn add_const_block(&mut self, r0: usize, c0: usize, m: &DMatrix<T>) {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != T::zero() {
                    self.add_const(r0 + i, c0 + j, m[(i, j)]);
                }
            }
        }
    }

    pub fn eval(&self, x: &[T]) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for ((i, j), a) in &self.entries {
            m[(*i, *j)] += a.eval(x);
        }
        m
    }

    /// Lower-triangle affine entries after symmetrization.
    ///
    /// Entry pairs that differ by more than `1e-12` (relative to the block's
    /// largest coefficient, floored at one) are rejected.
    fn lower(&self, block: usize) -> Result<BTreeMap<(usize, usize), Affine<T>>, ConicError> {
        let scale = self.entries.values().fold(T::one(), |a, e| a.max(e.max_abs()));
        let tol = T::lit(1e-12) * scale;
        let mut worst = T::zero();
        let mut out = BTreeMap::new();
        let half = T::lit(0.5);
        let zero = Affine::zero();
        for (&(i, j), a) in &self.entries {
            if i < j && self.entries.contains_key(&(j, i)) {
                continue;
            }
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            let mut v = a.clone();
            if i != j {
                let other = self.entries.get(&(j, i)).unwrap_or(&zero);
                let mut diff = a.clone();
                diff.add_scaled(other, -T::one());
                worst = worst.max(diff.normalized().max_abs());
                v.add_scaled(other, T::one());
                v = Affine { constant: v.constant * half, terms: v.terms.into_iter().map(|(k, c)| (k, c * half)).collect() };
            }
            out.insert((r, c), v.normalized());
        }
        if worst > tol {
            return Err(ConicError::Asymmetric { block, asym: worst.to_f() });
        }
        if worst > T::zero() {
            log::warn!("matrix block {block} symmetrized (max asymmetry {:e})", worst.to_f());
        }
        Ok(out)
    }
}

/// Index helper for a symmetric matrix variable stored as its lower triangle.
#[derive(Clone, Copy, Debug)]
pub struct SymVar {
    pub n: usize,
    pub start: usize,
}

impl SymVar {
    pub fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    /// Variable index of entry (i, j) = (j, i).
    pub fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.start + j * (2 * self.n - j + 1) / 2 + (i - j)
    }
    pub fn value<T: Real>(&self, x: &[T]) -> DMatrix<T> {
        DMatrix::from_fn(self.n, self.n, |i, j| x[self.idx(i, j)])
    }
}

/// Where each constraint landed in the compiled program.
#[derive(Clone, Debug, Default)]
pub struct LmiLayout {
    /// first equality row per equality constraint
    pub eq_rows: Vec<usize>,
    /// cone row of each scalar inequality
    pub ineq_rows: Vec<usize>,
    /// (first row, size) of each SOC constraint
    pub soc_rows: Vec<(usize, usize)>,
    /// (first row, side, margin) of each matrix inequality
    pub lmi_rows: Vec<(usize, usize, f64)>,
}

impl LmiLayout {
    /// Dual matrix of matrix inequality `k` from the cone dual vector.
    pub fn lmi_dual<T: Real>(&self, k: usize, z: &[T]) -> DMatrix<T> {
        let (r, n, _) = self.lmi_rows[k];
        smat(&z[r..r + svec_len(n)], n)
    }
    /// Value of matrix inequality `k` (margin added back) from the slack vector.
    pub fn lmi_value<T: Real>(&self, k: usize, s: &[T]) -> DMatrix<T> {
        let (r, n, eps) = self.lmi_rows[k];
        let mut m = smat(&s[r..r + svec_len(n)], n);
        for i in 0..n {
            m[(i, i)] += T::lit(eps);
        }
        m
    }
}

/// Collects a linear objective and constraints, then compiles them.
#[derive(Clone, Debug, Default)]
pub struct LmiBuilder<T> {
    nvars: usize,
    objective: Vec<(usize, T)>,
    eqs: Vec<Affine<T>>,
    ineqs: Vec<Affine<T>>,
    socs: Vec<Vec<Affine<T>>>,
    lmis: Vec<(AffineSym<T>, T)>,
}

impl<T: Real> LmiBuilder<T> {
    pub fn new() -> Self {
        Self { nvars: 0, objective: vec![], eqs: vec![], ineqs: vec![], socs: vec![], lmis: vec![] }
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    pub fn add_var(&mut self) -> usize {
        self.nvars += 1;
        self.nvars - 1
    }

    pub fn add_vars(&mut self, k: usize) -> std::ops::Range<usize> {
        let s = self.nvars;
        self.nvars += k;
        s..s + k
    }

    pub fn add_sym_var(&mut self, n: usize) -> SymVar {
        let start = self.add_vars(n * (n + 1) / 2).start;
        SymVar { n, start }
    }

    /// Add `coef·x[var]` to the minimized objective.
    pub fn minimize(&mut self, var: usize, coef: T) {
        self.objective.push((var, coef));
    }

    /// `a(x) = 0`
    pub fn add_eq(&mut self, a: Affine<T>) -> usize {
        self.eqs.push(a);
        self.eqs.len() - 1
    }

    /// `a(x) ≥ 0`
    pub fn add_nonneg(&mut self, a: Affine<T>) -> usize {
        self.ineqs.push(a);
        self.ineqs.len() - 1
    }

    /// `‖(a_1(x), …, a_k(x))‖₂ ≤ a_0(x)`
    pub fn add_soc(&mut self, rows: Vec<Affine<T>>) -> usize {
        assert!(!rows.is_empty(), "empty second-order cone");
        self.socs.push(rows);
        self.socs.len() - 1
    }

    /// `F(x) ⪰ margin·I`; use a positive margin for strict inequalities.
    pub fn add_lmi(&mut self, f: AffineSym<T>, margin: T) -> usize {
        self.lmis.push((f, margin));
        self.lmis.len() - 1
    }

    /// Compile to standard form.
    ///
    /// Cone order: one nonnegative block holding all scalar inequalities and
    /// 1×1 matrix inequalities, then SOC blocks, then PSD blocks.
    pub fn build(&self) -> Result<(ConicProgram<T>, LmiLayout), ConicError> {
        let n = self.nvars;
        let check = |a: &Affine<T>| -> Result<(), ConicError> {
            match a.terms.iter().find(|(i, _)| *i >= n) {
                Some((i, _)) => Err(ConicError::Malformed(format!("variable {i} out of range ({n} declared)"))),
                None => Ok(()),
            }
        };
        let mut c = vec![T::zero(); n];
        for (i, v) in &self.objective {
            if *i >= n {
                return Err(ConicError::Malformed(format!("objective variable {i} out of range")));
            }
            c[*i] += *v;
        }
        let mut layout = LmiLayout::default();

        let mut at = vec![];
        let mut b = vec![];
        for e in &self.eqs {
            check(e)?;
            layout.eq_rows.push(b.len());
            for (i, v) in &e.normalized().terms {
                at.push((b.len(), *i, *v));
            }
            b.push(-e.constant);
        }

        let lowers: Vec<_> = self.lmis.iter().enumerate().map(|(k, (f, _))| f.lower(k)).collect::<Result<_, _>>()?;
        let mut gt = vec![];
        let mut h = vec![];
        // s = a(x)  ⇔  G row = −a_i, h = a_0
        let mut push_row = |a: &Affine<T>, h: &mut Vec<T>| -> Result<usize, ConicError> {
            check(a)?;
            let r = h.len();
            for (i, v) in &a.normalized().terms {
                gt.push((r, *i, -*v));
            }
            h.push(a.constant);
            Ok(r)
        };
        let mut cones = vec![];
        let mut lmi_rows = vec![(0usize, 0usize, 0f64); self.lmis.len()];
        for a in &self.ineqs {
            layout.ineq_rows.push(push_row(a, &mut h)?);
        }
        for (k, (f, eps)) in self.lmis.iter().enumerate() {
            if f.size() == 1 {
                let mut a = lowers[k].get(&(0, 0)).cloned().unwrap_or_else(Affine::zero);
                a.constant -= *eps;
                lmi_rows[k] = (push_row(&a, &mut h)?, 1, eps.to_f());
            }
        }
        if !h.is_empty() {
            cones.push(Cone::NonNeg(h.len()));
        }
        for rows in &self.socs {
            let r0 = h.len();
            for a in rows {
                push_row(a, &mut h)?;
            }
            layout.soc_rows.push((r0, rows.len()));
            cones.push(Cone::Soc(rows.len()));
        }
        let sqrt2 = T::two().sqrt();
        for (k, (f, eps)) in self.lmis.iter().enumerate() {
            let m = f.size();
            if m <= 1 {
                continue;
            }
            let r0 = h.len();
            h.extend(std::iter::repeat(T::zero()).take(svec_len(m)));
            for ((i, j), a) in &lowers[k] {
                check(a)?;
                let r = r0 + svec_index(m, *i, *j);
                let f = if i == j { T::one() } else { sqrt2 };
                for (v, coef) in &a.terms {
                    gt.push((r, *v, -f * *coef));
                }
                h[r] = f * a.constant;
            }
            for i in 0..m {
                h[r0 + svec_index(m, i, i)] -= *eps;
            }
            lmi_rows[k] = (r0, m, eps.to_f());
            cones.push(Cone::Psd(m));
        }
        layout.lmi_rows = lmi_rows;
        let prog = ConicProgram {
            c,
            a: CscMatrix::from_triplets(b.len(), n, &at),
            b,
            g: CscMatrix::from_triplets(h.len(), n, &gt),
            h,
            cones,
        };
        prog.validate()?;
        Ok((prog, layout))
    }
}
