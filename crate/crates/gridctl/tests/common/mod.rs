#![allow(dead_code)]

use gridctl::msesana::verify_mses;
use gridctl::netmodel::{linearize, load_case, solve_equilibrium, LinearModel, MeasSelection};
use gridctl::stochastic::{channels_from, Channel};
use gridctl::synth::SynthesisResult;
use nalgebra::DMatrix;

pub fn data(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn case_model(file: &str, meas: MeasSelection) -> LinearModel<f64> {
    let case = load_case(data(file)).unwrap();
    let eq = solve_equilibrium::<f64>(&case, &case.nominal_injection()).unwrap();
    linearize(&case, &eq, &meas).unwrap()
}

pub fn scalar_model(a: f64, b: f64, c: f64) -> LinearModel<f64> {
    LinearModel::from_matrices(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), DMatrix::from_element(1, 1, c)).unwrap()
}

/// Eigenvalues from a Jacobi sweep, kept apart from the library's eigen code.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] * a[(i, j)]).sum();
        if off <= 1e-30 * a.norm_squared().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    jacobi_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue over every LMI of the full-state program (14b–d form).
pub fn full_state_violation(model: &LinearModel<f64>, r: &SynthesisResult<f64>) -> f64 {
    let n = model.n();
    let q = &r.q_star;
    let m = r.m_star.as_ref().unwrap();
    let g1 = r.gamma1_star.unwrap();
    let beta = r.beta_star.as_ref().unwrap();
    let i = DMatrix::<f64>::identity(n, n);
    let mut worst = min_eig(&(&i - q)).min(min_eig(&(q - g1 * &i)));
    for k in 0..model.m() {
        let mut blk = DMatrix::zeros(n + 1, n + 1);
        blk[(0, 0)] = beta[k];
        for j in 0..n {
            blk[(0, j + 1)] = m[(k, j)];
            blk[(j + 1, 0)] = m[(k, j)];
        }
        blk.view_mut((1, 1), (n, n)).copy_from(q);
        worst = worst.min(min_eig(&blk));
    }
    let (a0, b0) = (&model.a0, &model.b0);
    let perf = -(a0 * q + q * a0.transpose() - b0 * m - m.transpose() * b0.transpose() + b0 * b0.transpose()) - r.gamma2_star * &i;
    worst.min(min_eig(&perf))
}

/// Smallest eigenvalue of the stage-2 performance LMI.
pub fn two_stage_violation(model: &LinearModel<f64>, r: &SynthesisResult<f64>) -> f64 {
    let n = model.n();
    let a = &model.a0 - &model.b0 * &r.k0 * &model.c0;
    let q = &r.q_star;
    let perf = -(&a * q + q * a.transpose() + &model.b0 * model.b0.transpose()) - r.gamma2_star * DMatrix::<f64>::identity(n, n);
    min_eig(&perf)
}

pub fn closed_loop(model: &LinearModel<f64>, k0: &DMatrix<f64>) -> (DMatrix<f64>, Vec<Channel<f64>>) {
    let c = k0 * &model.c0;
    (&model.a0 - &model.b0 * &c, channels_from(&model.b0, &c))
}

/// MSES of the closed loop at `scale·σ*`, treating unbounded channels as noise-free.
pub fn certified_at(model: &LinearModel<f64>, r: &SynthesisResult<f64>, scale: f64) -> bool {
    let (a, ch) = closed_loop(model, &r.k0);
    let sigma: Vec<f64> = r.sigma_star.iter().map(|s| if s.is_finite() { scale * s } else { 0.0 }).collect();
    verify_mses(&a, &ch, &sigma, 1e-8).unwrap().is_certified()
}

/// Spectral abscissa of the vectorized second-moment generator.
pub fn moment_abscissa(a: &DMatrix<f64>, ch: &[Channel<f64>], sigma: &[f64]) -> f64 {
    let n = a.nrows();
    let i = DMatrix::<f64>::identity(n, n);
    let mut l = i.kronecker(a) + a.kronecker(&i);
    for (c, s) in ch.iter().zip(sigma) {
        let g = c.outer();
        l += s * s * g.kronecker(&g);
    }
    l.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}
