//! Controller synthesis by semidefinite programming.
//!
//! Full-state path (rank C0 = n): decision variables `Q̃, M̃, γ1, γ2, β` with
//!
//! ```text
//! minimize   −w1 γ1 − w2 γ2 + w3 Σ β_i + w4 ‖M̃‖_{1,p}
//! subject to I ⪰ Q̃ ≻ γ1 I,  [[β_i, M̃_i], [M̃_iᵀ, Q̃]] ≻ 0,
//!            A0 Q̃ + Q̃ A0ᵀ − B0 M̃ − M̃ᵀ B0ᵀ + B0 B0ᵀ ≺ −γ2 I
//! ```
//!
//! and `K0 = M̃ Q̃⁻¹ (C0ᵀC0)⁻¹ C0ᵀ`, `σ_i* = 1/√β_i`. Partial measurements use
//! the two-stage scheme: the same problem plus `A0 Q̃ + Q̃ A0ᵀ ≺ 0` fixes `Q*`,
//! then a gain `K̃` is found for that `Q*` with `σ_i = 1/‖K̃_i C0 √Q*‖₂`.

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, max_real_eig, numerical_rank, row_norm, solve_lyapunov, spectral_norm, sqrtm_psd, symmetrize};
use crate::msesana::add_sym_map;
use crate::netmodel::{check_assumptions, LinearModel};
use conic::{Affine, AffineSym, ConicSolution, LmiBuilder, Real, Settings, Status, SymVar};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormP {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl FromStr for NormP {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(NormP::One),
            "2" => Ok(NormP::Two),
            "inf" | "Inf" | "infinity" => Ok(NormP::Inf),
            _ => Err(Error::invalid("p", format!("expected 1, 2 or inf, got '{s}'"))),
        }
    }
}

impl fmt::Display for NormP {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormP::One => "1",
            NormP::Two => "2",
            NormP::Inf => "inf",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// sparsity weight, 0 disables the penalty
    pub w4: f64,
    pub p: NormP,
}

impl Default for SynthesisWeights {
    fn default() -> Self {
        Self { w1: 100.0, w2: 100.0, w3: 1.0, w4: 1.0, p: NormP::One }
    }
}

impl SynthesisWeights {
    pub fn new(w1: f64, w2: f64, w3: f64, w4: f64) -> Self {
        Self { w1, w2, w3, w4, p: NormP::One }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.w4 >= 0.0 && self.w4.is_finite()) {
            return Err(Error::invalid("w4", format!("must be non-negative, got {}", self.w4)));
        }
        Ok(())
    }
}

/// Numerical knobs shared by the synthesis problems.
#[derive(Clone, Debug)]
pub struct SynthOptions<T> {
    pub solver: Settings<T>,
    /// gain rows with norm at or below this are set to zero (σ* = ∞)
    pub zero_row: f64,
    /// relative threshold for [`row_support`]
    pub support_tol: f64,
}

impl<T: Real> Default for SynthOptions<T> {
    fn default() -> Self {
        Self { solver: Settings::default(), zero_row: 1e-7, support_tol: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPath {
    FullState,
    TwoStage,
}

#[derive(Clone, Debug)]
pub struct SynthesisResult<T> {
    pub path: SynthPath,
    pub q_star: DMatrix<T>,
    /// full-state path only
    pub m_star: Option<DMatrix<T>>,
    /// m×s output gain
    pub k0: DMatrix<T>,
    /// full-state path only
    pub gamma1_star: Option<T>,
    pub gamma2_star: T,
    /// full-state path only
    pub beta_star: Option<Vec<T>>,
    /// critical uncertainty per channel, `∞` for inactive channels
    pub sigma_star: Vec<T>,
    pub objective: T,
    pub status: Status,
    pub reduced_accuracy: bool,
    pub primal_residual: T,
    pub dual_residual: T,
    pub gap: T,
    pub iterations: usize,
    pub row_support: Vec<usize>,
    /// strictness margin used for `≻`/`≺`
    pub epsilon: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub w3: f64,
    /// `None` when the point solved, otherwise the error message
    pub error: Option<String>,
    pub gain_norms: Vec<f64>,
    pub sigma_star: Vec<f64>,
    pub gamma2_star: f64,
}

pub(crate) fn strictness<T: Real>(a0: &DMatrix<T>, tol: T) -> T {
    spectral_norm(a0).max(T::one()) * T::lit(1e-8).max(tol)
}

fn check_status<T: Real>(sol: &ConicSolution<T>, what: &str) -> Result<()> {
    match sol.status {
        Status::Optimal => {
            if sol.reduced_accuracy {
                log::warn!("{what}: solved to reduced accuracy");
            }
            Ok(())
        }
        Status::Infeasible => Err(Error::Inconsistent(format!("{what}: solver certified infeasibility"))),
        Status::Unbounded => Err(Error::Solver(format!("{what}: problem is unbounded; increase w3 or w4"))),
        Status::NumericalFailure => Err(Error::Solver(format!(
            "{what}: numerical failure after {} iterations (pres {:e}, dres {:e}, gap {:e})",
            sol.iterations,
            sol.primal_residual.to_f(),
            sol.dual_residual.to_f(),
            sol.gap.to_f()
        ))),
    }
}

/// Epigraph variables and constraints for `Σ_i ‖row_i‖_p`, rows given as affine expressions.
fn add_l1p<T: Real>(lb: &mut LmiBuilder<T>, rows: &[Vec<Affine<T>>], p: NormP, weight: T) {
    if weight == T::zero() {
        return;
    }
    for row in rows {
        match p {
            NormP::One => {
                for a in row {
                    let u = lb.add_var();
                    lb.minimize(u, weight);
                    let mut pos = Affine::var(u);
                    pos.add_scaled(a, -T::one());
                    let mut neg = Affine::var(u);
                    neg.add_scaled(a, T::one());
                    lb.add_nonneg(pos);
                    lb.add_nonneg(neg);
                }
            }
            NormP::Two => {
                let t = lb.add_var();
                lb.minimize(t, weight);
                let mut cone = vec![Affine::var(t)];
                cone.extend(row.iter().cloned());
                lb.add_soc(cone);
            }
            NormP::Inf => {
                let t = lb.add_var();
                lb.minimize(t, weight);
                for a in row {
                    let mut pos = Affine::var(t);
                    pos.add_scaled(a, -T::one());
                    let mut neg = Affine::var(t);
                    neg.add_scaled(a, T::one());
                    lb.add_nonneg(pos);
                    lb.add_nonneg(neg);
                }
            }
        }
    }
}

struct FullVars {
    q: SymVar,
    m0: usize,
    g1: usize,
    g2: usize,
    beta: std::ops::Range<usize>,
}

fn full_state_program<T: Real>(model: &LinearModel<T>, w: &SynthesisWeights, eps: T, open_loop: bool) -> (LmiBuilder<T>, FullVars) {
    let (n, m) = (model.n(), model.m());
    let a0 = &model.a0;
    let b0 = &model.b0;
    let mut lb = LmiBuilder::<T>::new();
    let q = lb.add_sym_var(n);
    let m0 = lb.add_vars(m * n).start;
    let mv = |i: usize, j: usize| m0 + i * n + j;
    let g1 = lb.add_var();
    let g2 = lb.add_var();
    let beta = lb.add_vars(m);
    lb.minimize(g1, -T::lit(w.w1));
    lb.minimize(g2, -T::lit(w.w2));
    for b in beta.clone() {
        lb.minimize(b, T::lit(w.w3));
    }
    lb.add_nonneg(Affine::var(g1));
    lb.add_nonneg(Affine::var(g2));

    // I − Q ⪰ 0 and Q − γ1 I ≻ 0
    let mut upper = AffineSym::new(n);
    let mut lower = AffineSym::new(n);
    for j in 0..n {
        for i in j..n {
            upper.add_sym(i, j, q.idx(i, j), -T::one());
            lower.add_sym(i, j, q.idx(i, j), T::one());
        }
        upper.add_const(j, j, T::one());
        lower.add(j, j, g1, -T::one());
    }
    lb.add_lmi(upper, T::zero());
    lb.add_lmi(lower, eps);

    // [[β_i, M_i], [M_iᵀ, Q]] ≻ 0
    for i in 0..m {
        let mut blk = AffineSym::new(n + 1);
        blk.add(0, 0, beta.start + i, T::one());
        for j in 0..n {
            blk.add_sym(1 + j, 0, mv(i, j), T::one());
            for k in j..n {
                blk.add_sym(1 + k, 1 + j, q.idx(k, j), T::one());
            }
        }
        lb.add_lmi(blk, eps);
    }

    // −(A0Q + QA0ᵀ − B0M − MᵀB0ᵀ + B0B0ᵀ) − γ2 I ≻ 0
    let mut perf = AffineSym::new(n);
    add_sym_map(&mut perf, 0, q, -T::one(), |e| a0 * e + e * a0.transpose());
    for i in 0..m {
        for j in 0..n {
            for r in 0..n {
                let b = b0[(r, i)];
                if b != T::zero() {
                    perf.add(r, j, mv(i, j), b);
                    perf.add(j, r, mv(i, j), b);
                }
            }
        }
    }
    perf.add_const_block(0, 0, &(-(b0 * b0.transpose())));
    for j in 0..n {
        perf.add(j, j, g2, -T::one());
    }
    lb.add_lmi(perf, eps);

    if open_loop {
        let mut ol = AffineSym::new(n);
        add_sym_map(&mut ol, 0, q, -T::one(), |e| a0 * e + e * a0.transpose());
        lb.add_lmi(ol, eps);
    }

    let rows: Vec<Vec<Affine<T>>> = (0..m).map(|i| (0..n).map(|j| Affine::var(mv(i, j))).collect()).collect();
    add_l1p(&mut lb, &rows, w.p, T::lit(w.w4));
    (lb, FullVars { q, m0, g1, g2, beta })
}

struct FullSolution<T> {
    q: DMatrix<T>,
    m: DMatrix<T>,
    g1: T,
    g2: T,
    beta: Vec<T>,
    sol: ConicSolution<T>,
}

fn solve_full<T: Real>(model: &LinearModel<T>, w: &SynthesisWeights, opt: &SynthOptions<T>, open_loop: bool, what: &str) -> Result<(FullSolution<T>, T)> {
    w.validate()?;
    let eps = strictness(&model.a0, opt.solver.tol);
    let (lb, v) = full_state_program(model, w, eps, open_loop);
    let (prog, _) = lb.build()?;
    log::info!("{what}: {} variables, {} cone rows", prog.c.len(), prog.h.len());
    let sol = conic::solve(&prog, &opt.solver)?;
    check_status(&sol, what)?;
    let (n, m) = (model.n(), model.m());
    let q = symmetrize(&v.q.value(&sol.x));
    let mm = DMatrix::from_fn(m, n, |i, j| sol.x[v.m0 + i * n + j]);
    let beta = v.beta.clone().map(|k| sol.x[k]).collect();
    Ok((FullSolution { q, m: mm, g1: sol.x[v.g1], g2: sol.x[v.g2], beta, sol }, eps))
}

/// Full-state synthesis for full-rank measurements.
pub fn synthesize_full_state<T: Real>(model: &LinearModel<T>, weights: &SynthesisWeights) -> Result<SynthesisResult<T>> {
    synthesize_full_state_with(model, weights, &SynthOptions::default())
}

pub fn synthesize_full_state_with<T: Real>(model: &LinearModel<T>, weights: &SynthesisWeights, opt: &SynthOptions<T>) -> Result<SynthesisResult<T>> {
    let n = model.n();
    let rank = numerical_rank(&model.c0);
    if rank < n {
        return Err(Error::Precondition(format!("rank(C0) = {rank} < n = {n}; use the two-stage synthesis")));
    }
    let (fs, eps) = solve_full(model, weights, opt, false, "full-state synthesis")?;
    let mut m_star = fs.m.clone();
    let floor = T::lit(opt.zero_row);
    let mut sigma = Vec::with_capacity(model.m());
    for i in 0..model.m() {
        if row_norm(&m_star, i) <= floor {
            m_star.row_mut(i).fill(T::zero());
            sigma.push(T::lit(f64::INFINITY));
        } else {
            sigma.push(T::one() / fs.beta[i].max(T::zero()).sqrt());
        }
    }
    let k0 = recover_gain_full_rank(&m_star, &fs.q, &model.c0)?;
    Ok(SynthesisResult {
        path: SynthPath::FullState,
        row_support: row_support(&k0, opt.support_tol),
        q_star: fs.q,
        m_star: Some(m_star),
        k0,
        gamma1_star: Some(fs.g1),
        gamma2_star: fs.g2,
        beta_star: Some(fs.beta),
        sigma_star: sigma,
        objective: fs.sol.primal_objective,
        status: fs.sol.status,
        reduced_accuracy: fs.sol.reduced_accuracy,
        primal_residual: fs.sol.primal_residual,
        dual_residual: fs.sol.dual_residual,
        gap: fs.sol.gap,
        iterations: fs.sol.iterations,
        epsilon: eps,
    })
}

/// `K0 = M* Q*⁻¹ (C0ᵀC0)⁻¹ C0ᵀ`.
pub fn recover_gain_full_rank<T: Real>(m_star: &DMatrix<T>, q_star: &DMatrix<T>, c0: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = q_star.nrows();
    if m_star.ncols() != n || c0.ncols() != n {
        return Err(Error::Dimension(format!("M* is {}x{}, Q* is {n}x{n}, C0 has {} columns", m_star.nrows(), m_star.ncols(), c0.ncols())));
    }
    let rank = numerical_rank(c0);
    if rank < n {
        return Err(Error::Precondition(format!("rank(C0) = {rank} < n = {n}; use the two-stage synthesis")));
    }
    let qinv = q_star.clone().cholesky().ok_or_else(|| Error::Numerical("Q* is not positive definite".into()))?.inverse();
    let mq = m_star * qinv;
    let ctc = c0.transpose() * c0;
    let ctc_inv = ctc.clone().cholesky().ok_or_else(|| Error::Numerical("C0ᵀC0 is singular".into()))?.inverse();
    let cond = spectral_norm(&ctc) * spectral_norm(&ctc_inv);
    if !(cond < T::one() / (T::lit(1e3) * T::machine_eps())) {
        return Err(Error::Numerical(format!("C0ᵀC0 is ill-conditioned (cond ≈ {:e})", cond.to_f())));
    }
    let k0 = &mq * ctc_inv * c0.transpose();
    let err = (&k0 * c0 - &mq).amax();
    if err > T::lit(1e-8) * mq.amax().max(T::one()) {
        return Err(Error::Numerical(format!("K0 C0 differs from M* Q*⁻¹ by {:e}", err.to_f())));
    }
    Ok(k0)
}

/// Stage 1: full-state problem with the added open-loop Lyapunov constraint; returns `Q*`.
pub fn stage1_precompute<T: Real>(model: &LinearModel<T>, weights: &SynthesisWeights) -> Result<DMatrix<T>> {
    stage1_precompute_with(model, weights, &SynthOptions::default())
}

pub fn stage1_precompute_with<T: Real>(model: &LinearModel<T>, weights: &SynthesisWeights, opt: &SynthOptions<T>) -> Result<DMatrix<T>> {
    let mre = max_real_eig(&model.a0);
    if !(mre < T::zero()) {
        return Err(Error::Precondition(format!("A0 is not Hurwitz (max Re λ = {:e})", mre.to_f())));
    }
    Ok(solve_full(model, weights, opt, true, "stage-1 precompute")?.0.q)
}

/// Stage 2: output gain for a fixed `Q*`. `γ2` is unconstrained in sign.
pub fn stage2_gain<T: Real>(model: &LinearModel<T>, q_star: &DMatrix<T>, weights: &SynthesisWeights) -> Result<SynthesisResult<T>> {
    stage2_gain_with(model, q_star, weights, &SynthOptions::default())
}

pub fn stage2_gain_with<T: Real>(model: &LinearModel<T>, q_star: &DMatrix<T>, weights: &SynthesisWeights, opt: &SynthOptions<T>) -> Result<SynthesisResult<T>> {
    weights.validate()?;
    let (n, m, s) = (model.n(), model.m(), model.s());
    if q_star.nrows() != n || q_star.ncols() != n {
        return Err(Error::Dimension(format!("Q* is {}x{}, expected {n}x{n}", q_star.nrows(), q_star.ncols())));
    }
    let (a0, b0, c0) = (&model.a0, &model.b0, &model.c0);
    let q = symmetrize(q_star);
    let sq = sqrtm_psd(&q);
    let cq = c0 * &q;
    let csq = c0 * &sq;
    let eps = strictness(a0, opt.solver.tol);

    let mut lb = LmiBuilder::<T>::new();
    let k0v = lb.add_vars(m * s).start;
    let kv = |i: usize, j: usize| k0v + i * s + j;
    let g2 = lb.add_var();
    lb.minimize(g2, -T::lit(weights.w2));

    // −((A0 − B0 K C0) Q* + Q* (·)ᵀ + B0B0ᵀ) − γ2 I ≻ 0
    let mut perf = AffineSym::new(n);
    perf.add_const_block(0, 0, &(-(a0 * &q + &q * a0.transpose() + b0 * b0.transpose())));
    for i in 0..m {
        for j in 0..s {
            let v = kv(i, j);
            for r in 0..n {
                let b = b0[(r, i)];
                if b == T::zero() {
                    continue;
                }
                for c in 0..n {
                    let w = b * cq[(j, c)];
                    if w != T::zero() {
                        perf.add(r, c, v, w);
                        perf.add(c, r, v, w);
                    }
                }
            }
        }
    }
    for j in 0..n {
        perf.add(j, j, g2, -T::one());
    }
    lb.add_lmi(perf, eps);

    let row_expr = |basis: &DMatrix<T>, i: usize| -> Vec<Affine<T>> {
        (0..n)
            .map(|c| {
                let mut a = Affine::zero();
                for j in 0..s {
                    if basis[(j, c)] != T::zero() {
                        a = a.term(kv(i, j), basis[(j, c)]);
                    }
                }
                a
            })
            .collect()
    };
    // w3 Σ ‖K_i C0 √Q*‖₂
    for i in 0..m {
        let t = lb.add_var();
        lb.minimize(t, T::lit(weights.w3));
        let mut cone = vec![Affine::var(t)];
        cone.extend(row_expr(&csq, i));
        lb.add_soc(cone);
    }
    let rows: Vec<Vec<Affine<T>>> = (0..m).map(|i| row_expr(&cq, i)).collect();
    add_l1p(&mut lb, &rows, weights.p, T::lit(weights.w4));

    let (prog, _) = lb.build()?;
    log::info!("stage-2 gain: {} variables, {} cone rows", prog.c.len(), prog.h.len());
    let sol = conic::solve(&prog, &opt.solver)?;
    check_status(&sol, "stage-2 gain")?;

    let mut k0 = DMatrix::from_fn(m, s, |i, j| sol.x[kv(i, j)]);
    let floor = T::lit(opt.zero_row);
    let mut sigma = Vec::with_capacity(m);
    for i in 0..m {
        let nr = (k0.row(i) * &csq).norm();
        if nr <= floor {
            k0.row_mut(i).fill(T::zero());
            sigma.push(T::lit(f64::INFINITY));
        } else {
            sigma.push(T::one() / nr);
        }
    }
    Ok(SynthesisResult {
        path: SynthPath::TwoStage,
        row_support: row_support(&k0, opt.support_tol),
        q_star: q,
        m_star: None,
        k0,
        gamma1_star: None,
        gamma2_star: sol.x[g2],
        beta_star: None,
        sigma_star: sigma,
        objective: sol.primal_objective,
        status: sol.status,
        reduced_accuracy: sol.reduced_accuracy,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
        iterations: sol.iterations,
        epsilon: eps,
    })
}

/// Route on `rank(C0)`: full-state synthesis when it equals n, otherwise two stages.
pub fn synthesize<T: Real>(model: &LinearModel<T>, weights: &SynthesisWeights) -> Result<SynthesisResult<T>> {
    synthesize_with(model, weights, &SynthOptions::default())
}

pub fn synthesize_with<T: Real>(model: &LinearModel<T>, weights: &SynthesisWeights, opt: &SynthOptions<T>) -> Result<SynthesisResult<T>> {
    let rep = check_assumptions(model);
    if !rep.hurwitz {
        return Err(Error::Precondition(format!("A0 is not Hurwitz (max Re λ = {:e})", rep.max_real_eig)));
    }
    if !rep.controllable {
        log::warn!("(A0, B0) numerically uncontrollable: rank {} < {}", rep.controllability_rank, rep.n);
    }
    if !rep.observable {
        log::warn!("(A0, C0) numerically unobservable: rank {} < {}", rep.observability_rank, rep.n);
    }
    if rep.rank_c0 == model.n() {
        log::info!("rank(C0) = n = {}: full-state synthesis", model.n());
        synthesize_full_state_with(model, weights, opt)
    } else {
        log::info!("rank(C0) = {} < n = {}: two-stage synthesis", rep.rank_c0, model.n());
        let q = stage1_precompute_with(model, weights, opt)?;
        stage2_gain_with(model, &q, weights, opt)
    }
}

/// One synthesis per `w3` value, evaluated in parallel; failed points are kept.
pub fn pareto_sweep<T: Real>(model: &LinearModel<T>, weights: &SynthesisWeights, w3_grid: &[f64]) -> Result<Vec<ParetoPoint>> {
    if w3_grid.is_empty() {
        return Err(Error::invalid("w3_grid", "empty grid"));
    }
    if let Some(w) = w3_grid.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("w3_grid", format!("grid values must be positive, got {w}")));
    }
    Ok(w3_grid
        .par_iter()
        .map(|&w3| {
            let w = SynthesisWeights { w3, ..*weights };
            match synthesize(model, &w) {
                Ok(r) => ParetoPoint {
                    w3,
                    error: None,
                    gain_norms: (0..r.k0.nrows()).map(|i| row_norm(&r.k0, i).to_f()).collect(),
                    sigma_star: r.sigma_star.iter().map(|s| s.to_f()).collect(),
                    gamma2_star: r.gamma2_star.to_f(),
                },
                Err(e) => ParetoPoint { w3, error: Some(e.to_string()), gain_norms: vec![], sigma_star: vec![], gamma2_star: f64::NAN },
            }
        })
        .collect())
}

/// Rows with `‖K_i‖₂ > rel_tol · max_j ‖K_j‖₂`.
pub fn row_support<T: Real>(k0: &DMatrix<T>, rel_tol: f64) -> Vec<usize> {
    let norms: Vec<T> = (0..k0.nrows()).map(|i| row_norm(k0, i)).collect();
    let mx = norms.iter().fold(T::zero(), |a, b| a.max(*b));
    if mx == T::zero() {
        return vec![];
    }
    let thr = T::lit(rel_tol) * mx;
    (0..norms.len()).filter(|&i| norms[i] > thr).collect()
}

#[derive(Clone, Debug)]
pub struct LqrResult<T> {
    /// m×n state-feedback gain
    pub k: DMatrix<T>,
    pub p: DMatrix<T>,
    pub iterations: usize,
    /// Riccati residual after each iteration
    pub residuals: Vec<f64>,
}

/// Continuous-time LQR by Newton–Kleinman iteration from the zero gain.
pub fn design_lqr<T: Real>(model: &LinearModel<T>, state_weight: &DMatrix<T>, input_weight: &DMatrix<T>) -> Result<LqrResult<T>> {
    let (a, b) = (&model.a0, &model.b0);
    let (n, m) = (model.n(), model.m());
    if state_weight.shape() != (n, n) || input_weight.shape() != (m, m) {
        return Err(Error::Dimension(format!("Q must be {n}x{n} and R {m}x{m}")));
    }
    if !is_hurwitz(a) {
        return Err(Error::Precondition("Newton–Kleinman from K = 0 needs a Hurwitz A0".into()));
    }
    let qw = symmetrize(state_weight);
    let rchol = symmetrize(input_weight).cholesky().ok_or_else(|| Error::invalid("input_weight", "must be positive definite"))?;
    let rinv = rchol.inverse();
    let r = symmetrize(input_weight);
    let mut k = DMatrix::zeros(m, n);
    let mut p_prev: Option<DMatrix<T>> = None;
    let mut residuals = vec![];
    let scale = qw.amax().max(T::lit(1e-300));
    for it in 1..=100 {
        let ak = a - b * &k;
        let w = &qw + k.transpose() * &r * &k;
        let p = solve_lyapunov(&ak.transpose(), &w)?;
        k = &rinv * b.transpose() * &p;
        let ric = a.transpose() * &p + &p * a - &p * b * &rinv * b.transpose() * &p + &qw;
        let res = ric.amax() / scale;
        residuals.push(res.to_f());
        if !res.is_finite_val() {
            return Err(Error::NoConvergence { iters: it, residual: f64::INFINITY });
        }
        let done = match &p_prev {
            Some(pp) => (&p - pp).amax() <= T::lit(1e3) * T::machine_eps() * p.amax().max(T::lit(1e-300)),
            None => false,
        };
        if done || res <= T::lit(1e2) * T::machine_eps() {
            return Ok(LqrResult { k, p, iterations: it, residuals });
        }
        p_prev = Some(p);
    }
    Err(Error::NoConvergence { iters: 100, residual: *residuals.last().unwrap() })
}

/// Output gain `K · C0⁺` from a state-feedback LQR design.
pub fn lqr_output_gain<T: Real>(model: &LinearModel<T>, lqr: &LqrResult<T>) -> Result<DMatrix<T>> {
    let pinv = model.c0.clone().pseudo_inverse(T::machine_eps() * T::lit(1e3)).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(&lqr.k * pinv)
}
