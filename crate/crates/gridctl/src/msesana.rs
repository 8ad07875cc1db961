//! Mean-square exponential stability of `dz = A z dt + Σ σ_i B_i C_i z dW_i`.
//!
//! The certificate is a Lyapunov matrix `P ≻ 0` with
//! `AᵀP + PA + Σ σ_i² C_iᵀ B_iᵀ P B_i C_i ≺ 0` (or the dual form in `Q`).
//! Feasibility is decided by maximizing a common margin `t` over
//! `−L(P) ⪰ tI`, `P ⪰ tI`, `tr P = n`.

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, lambda_min, max_real_eig, solve_lyapunov, spectral_norm, symmetrize};
use crate::stochastic::Channel;
use conic::{Affine, AffineSym, LmiBuilder, Real, Settings, Status, SymVar};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Primal,
    Dual,
}

/// Exponential bound `E‖z(t)‖² ≤ gain · e^{−rate·t} ‖z(0)‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayBounds {
    pub gain: f64,
    pub rate: f64,
}

#[derive(Clone, Debug)]
pub struct MsesCertificate<T: Real> {
    pub form: Form,
    /// P (primal) or Q (dual)
    pub matrix: DMatrix<T>,
    /// `−λ_max` of the LMI residual
    pub margin: T,
    pub lambda_min: T,
    /// only for the primal form
    pub decay_bounds: Option<DecayBounds>,
}

#[derive(Clone, Debug)]
pub enum MsesOutcome<T: Real> {
    Certified(MsesCertificate<T>),
    /// best achievable margin was not above the strictness threshold
    Infeasible { best_margin: T },
}

impl<T: Real> MsesOutcome<T> {
    pub fn is_certified(&self) -> bool {
        matches!(self, MsesOutcome::Certified(_))
    }
    pub fn certificate(&self) -> Option<&MsesCertificate<T>> {
        match self {
            MsesOutcome::Certified(c) => Some(c),
            _ => None,
        }
    }
}

/// Per-channel allowable σ bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMargin {
    /// `f64::INFINITY` for channels that cannot destabilize
    pub bounds: Vec<f64>,
    pub binding: Option<usize>,
}

impl ChannelMargin {
    pub fn from_bounds(bounds: Vec<f64>) -> Self {
        let binding = bounds
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        Self { bounds, binding }
    }
}

/// `AᵀP + PA + Σ σ_i² C_iᵀ B_iᵀ P B_i C_i`.
pub fn primal_residual<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], sigma: &[T], p: &DMatrix<T>) -> DMatrix<T> {
    let mut r = a.transpose() * p + p * a;
    for (ch, s) in channels.iter().zip(sigma) {
        if *s == T::zero() || !ch.active {
            continue;
        }
        let bpb = (ch.b.transpose() * p * &ch.b)[(0, 0)];
        r += &ch.c * ch.c.transpose() * (*s * *s * bpb);
    }
    symmetrize(&r)
}

/// `AQ + QAᵀ + Σ σ_i² B_i C_i Q C_iᵀ B_iᵀ`.
pub fn dual_residual<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], sigma: &[T], q: &DMatrix<T>) -> DMatrix<T> {
    let mut r = a * q + q * a.transpose();
    for (ch, s) in channels.iter().zip(sigma) {
        if *s == T::zero() || !ch.active {
            continue;
        }
        let cqc = (ch.c.transpose() * q * &ch.c)[(0, 0)];
        r += &ch.b * ch.b.transpose() * (*s * *s * cqc);
    }
    symmetrize(&r)
}

/// Add `coef · map(X)` into `f` at `(r0, r0)` for a symmetric variable `X`,
/// evaluating the linear `map` on each basis matrix.
pub(crate) fn add_sym_map<T: Real>(f: &mut AffineSym<T>, r0: usize, x: SymVar, coef: T, map: impl Fn(&DMatrix<T>) -> DMatrix<T>) {
    let n = x.n;
    let mut e = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            e[(i, j)] = T::one();
            e[(j, i)] = T::one();
            let img = map(&e);
            e[(i, j)] = T::zero();
            e[(j, i)] = T::zero();
            let v = x.idx(i, j);
            for c in 0..img.ncols() {
                for r in c..img.nrows() {
                    let w = img[(r, c)];
                    if w != T::zero() {
                        f.add_sym(r0 + r, r0 + c, v, coef * w);
                    }
                }
            }
        }
    }
}

fn strict_eps<T: Real>(a: &DMatrix<T>, tol: T) -> T {
    spectral_norm(a).max(T::one()) * T::lit(1e-8).max(tol)
}

fn check_dims<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], sigma: &[T]) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("A is {}x{}", n, a.ncols())));
    }
    if channels.len() != sigma.len() {
        return Err(Error::Dimension(format!("{} channels, {} sigmas", channels.len(), sigma.len())));
    }
    if channels.iter().any(|c| c.b.len() != n || c.c.len() != n) {
        return Err(Error::Dimension("channel vectors do not match A".into()));
    }
    if sigma.iter().any(|s| !(*s >= T::zero()) || !s.is_finite_val()) {
        return Err(Error::invalid("sigma", "entries must be finite and non-negative"));
    }
    Ok(())
}

fn solve_margin<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], sigma: &[T], tol: T, form: Form) -> Result<(DMatrix<T>, T)> {
    let n = a.nrows();
    let mut lb = LmiBuilder::<T>::new();
    let p = lb.add_sym_var(n);
    let t = lb.add_var();
    lb.minimize(t, -T::one());
    let mut trace = Affine::constant(-T::from_usize(n).unwrap());
    for i in 0..n {
        trace = trace.term(p.idx(i, i), T::one());
    }
    lb.add_eq(trace);

    let mut f = AffineSym::new(n);
    let map = |e: &DMatrix<T>| match form {
        Form::Primal => primal_residual(a, channels, sigma, e),
        Form::Dual => dual_residual(a, channels, sigma, e),
    };
    add_sym_map(&mut f, 0, p, -T::one(), map);
    let mut g = AffineSym::new(n);
    for j in 0..n {
        for i in j..n {
            g.add_sym(i, j, p.idx(i, j), T::one());
        }
        f.add(j, j, t, -T::one());
        g.add(j, j, t, -T::one());
    }
    lb.add_lmi(f, T::zero());
    lb.add_lmi(g, T::zero());
    let (prog, _) = lb.build()?;
    let settings = Settings { tol, tol_reduced: tol * T::lit(1e3), ..Settings::default() };
    let sol = conic::solve(&prog, &settings)?;
    match sol.status {
        Status::Optimal => Ok((p.value(&sol.x), sol.x[t])),
        Status::NumericalFailure => Err(Error::Solver(format!("MSES feasibility problem: numerical failure after {} iterations", sol.iterations))),
        s => Err(Error::Inconsistent(format!("MSES margin problem reported {s:?}; it is always feasible and bounded"))),
    }
}

fn verify<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], sigma: &[T], tol: T, form: Form) -> Result<MsesOutcome<T>> {
    check_dims(a, channels, sigma)?;
    let eps = strict_eps(a, tol);
    let (m, t) = solve_margin(a, channels, sigma, tol, form)?;
    let m = symmetrize(&m);
    let res = match form {
        Form::Primal => primal_residual(a, channels, sigma, &m),
        Form::Dual => dual_residual(a, channels, sigma, &m),
    };
    let margin = -lambda_max(&res);
    let lmin = lambda_min(&m);
    log::debug!("mses {form:?}: t* = {:e}, margin = {:e}, λmin = {:e}", t.to_f(), margin.to_f(), lmin.to_f());
    if t > eps && margin > T::zero() && lmin > T::zero() {
        let decay_bounds = (form == Form::Primal).then(|| {
            let lmax = lambda_max(&m);
            DecayBounds { gain: (lmax / lmin).to_f(), rate: (margin / lmax).to_f() }
        });
        Ok(MsesOutcome::Certified(MsesCertificate { form, matrix: m, margin, lambda_min: lmin, decay_bounds }))
    } else {
        Ok(MsesOutcome::Infeasible { best_margin: t })
    }
}

/// Primal MSES test.
pub fn verify_mses<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], sigma: &[T], tol: T) -> Result<MsesOutcome<T>> {
    verify(a, channels, sigma, tol, Form::Primal)
}

/// Dual MSES test.
pub fn verify_mses_dual<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], sigma: &[T], tol: T) -> Result<MsesOutcome<T>> {
    verify(a, channels, sigma, tol, Form::Dual)
}

fn direction_active<T: Real>(channels: &[Channel<T>], direction: &[T]) -> bool {
    channels.iter().zip(direction).any(|(c, d)| c.active && *d > T::zero())
}

fn check_direction<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], direction: &[T]) -> Result<()> {
    check_dims(a, channels, direction)?;
    if direction.iter().all(|d| *d == T::zero()) {
        return Err(Error::invalid("direction", "must be nonzero"));
    }
    let mre = max_real_eig(a);
    if !(mre < T::zero()) {
        return Err(Error::Precondition(format!("A is not Hurwitz (max Re λ = {:e})", mre.to_f())));
    }
    Ok(())
}

/// Largest scale `t` with MSES at `t·direction`, by bracket doubling and
/// bisection on [`verify_mses`] to relative width `rel_tol`.
/// Returns `+∞` when no channel along the direction can destabilize.
pub fn critical_sigma_search<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], direction: &[T], rel_tol: T) -> Result<T> {
    check_direction(a, channels, direction)?;
    if !direction_active(channels, direction) {
        return Ok(T::lit(f64::INFINITY));
    }
    let solver_tol = Settings::<T>::default().tol;
    let ok = |s: T| -> Result<bool> {
        let sig: Vec<T> = direction.iter().map(|d| *d * s).collect();
        Ok(verify_mses(a, channels, &sig, solver_tol)?.is_certified())
    };
    let cap = T::lit(2f64.powi(40));
    let mut hi = T::one();
    let mut lo;
    if ok(hi)? {
        lo = hi;
        loop {
            hi *= T::two();
            if hi > cap {
                return Ok(T::lit(f64::INFINITY));
            }
            if !ok(hi)? {
                break;
            }
            lo = hi;
        }
    } else {
        let floor = T::lit(2f64.powi(-40));
        loop {
            let mid = hi / T::two();
            if mid < floor {
                return Ok(T::zero());
            }
            if ok(mid)? {
                lo = mid;
                break;
            }
            hi = mid;
        }
    }
    while hi - lo > rel_tol * lo {
        let mid = (lo + hi) / T::two();
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / T::two())
}

/// Exact MSES boundary along `direction`: `1/√ρ(G)` with
/// `G_ij = d_j² C_i Y_j C_iᵀ` and `A Y_j + Y_j Aᵀ + B_j B_jᵀ = 0`.
pub fn exact_critical_scale<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>], direction: &[T]) -> Result<T> {
    check_direction(a, channels, direction)?;
    let act: Vec<usize> = (0..channels.len()).filter(|&i| channels[i].active && direction[i] > T::zero()).collect();
    if act.is_empty() {
        return Ok(T::lit(f64::INFINITY));
    }
    let k = act.len();
    let mut g = DMatrix::zeros(k, k);
    for (cj, &j) in act.iter().enumerate() {
        let bj = &channels[j].b;
        let y = solve_lyapunov(a, &(bj * bj.transpose()))?;
        for (ci, &i) in act.iter().enumerate() {
            let c = &channels[i].c;
            g[(ci, cj)] = direction[j] * direction[j] * (c.transpose() * &y * c)[(0, 0)];
        }
    }
    let rho = g.complex_eigenvalues().iter().fold(T::zero(), |m, z| m.max((z.re * z.re + z.im * z.im).sqrt()));
    if rho <= T::zero() {
        Ok(T::lit(f64::INFINITY))
    } else {
        Ok(T::one() / rho.sqrt())
    }
}

/// Per-axis boundaries, one [`exact_critical_scale`] per unit direction.
pub fn channel_margins<T: Real>(a: &DMatrix<T>, channels: &[Channel<T>]) -> Result<ChannelMargin> {
    let m = channels.len();
    let mut bounds = Vec::with_capacity(m);
    for i in 0..m {
        let mut d = vec![T::zero(); m];
        d[i] = T::one();
        bounds.push(exact_critical_scale(a, channels, &d)?.to_f());
    }
    Ok(ChannelMargin::from_bounds(bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar(a: f64, b: f64, c: f64) -> (DMatrix<f64>, Vec<Channel<f64>>) {
        (DMatrix::from_element(1, 1, a), vec![Channel::new(DVector::from_element(1, b), DVector::from_element(1, c))])
    }

    #[test]
    fn scalar_verdicts() {
        let (a, ch) = scalar(-1.0, 1.0, 1.0);
        assert!(verify_mses(&a, &ch, &[1.0], 1e-8).unwrap().is_certified());
        assert!(!verify_mses(&a, &ch, &[1.5], 1e-8).unwrap().is_certified());
        assert!(verify_mses_dual(&a, &ch, &[1.0], 1e-8).unwrap().is_certified());
    }

    #[test]
    fn scalar_exact_boundary() {
        let (a, ch) = scalar(-2.0, 1.0, 2.0);
        assert!((exact_critical_scale(&a, &ch, &[1.0]).unwrap() - 1.0).abs() < 1e-12);
    }
}
