use gridctl::linalg::solve_lyapunov;
use gridctl::msesana::*;
use gridctl::stochastic::{channels_from, Channel};
use gridctl::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar(a: f64, b: f64, c: f64) -> (DMatrix<f64>, Vec<Channel<f64>>) {
    (DMatrix::from_element(1, 1, a), vec![Channel::new(DVector::from_element(1, b), DVector::from_element(1, c))])
}

const TOL: f64 = 1e-8;

/// Spectral abscissa of the second-moment generator
/// `X ↦ AX + XAᵀ + Σ σ_i² (B_iC_i) X (B_iC_i)ᵀ`, vectorized with Kronecker products.
fn moment_abscissa(a: &DMatrix<f64>, ch: &[Channel<f64>], sigma: &[f64]) -> f64 {
    let n = a.nrows();
    let i = DMatrix::<f64>::identity(n, n);
    let mut l = i.kronecker(a) + a.kronecker(&i);
    for (c, s) in ch.iter().zip(sigma) {
        let g = c.outer();
        l += s * s * g.kronecker(&g);
    }
    l.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn kron_lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let i = DMatrix::<f64>::identity(n, n);
    let l = i.kronecker(a) + a.kronecker(&i);
    let rhs = -DVector::from_column_slice(w.as_slice());
    let x = l.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(n, n, x.as_slice())
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DMatrix<f64>, Vec<Channel<f64>>) {
    loop {
        let a = DMatrix::from_fn(n, n, |i, j| rng.random_range(-1.0..1.0) - if i == j { 1.5 } else { 0.0 });
        if a.complex_eigenvalues().iter().all(|z| z.re < -0.1) {
            let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            return (a, channels_from(&b, &c));
        }
    }
}

fn lmi_primal(a: &DMatrix<f64>, ch: &[Channel<f64>], sigma: &[f64], p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut r = a.transpose() * p + p * a;
    for (c, s) in ch.iter().zip(sigma) {
        let g = c.outer();
        r += s * s * g.transpose() * p * g;
    }
    r
}

fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = m.clone().symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

#[test]
fn scalar_verdicts() {
    let (a, ch) = scalar(-1.0, 1.0, 1.0);
    assert!(verify_mses(&a, &ch, &[1.0], TOL).unwrap().is_certified());
    assert!(!verify_mses(&a, &ch, &[1.5], TOL).unwrap().is_certified());
    assert!(verify_mses_dual(&a, &ch, &[1.0], TOL).unwrap().is_certified());
    assert!(!verify_mses_dual(&a, &ch, &[1.5], TOL).unwrap().is_certified());
    assert!(!verify_mses_dual(&a, &ch, &[1e4], TOL).unwrap().is_certified());
}

#[test]
fn hurwitz_without_noise_is_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let (a, ch) = random_instance(&mut rng, 4, 2);
        let out = verify_mses(&a, &ch, &[0.0, 0.0], TOL).unwrap();
        assert!(out.is_certified());
    }
}

#[test]
fn scalar_critical_values() {
    let (a, ch) = scalar(-1.0, 1.0, 1.0);
    let t = critical_sigma_search(&a, &ch, &[1.0], 1e-4).unwrap();
    assert!((t - 2f64.sqrt()).abs() <= 1e-3);
    let (a, ch) = scalar(-2.0, 1.0, 2.0);
    let t = critical_sigma_search(&a, &ch, &[1.0], 1e-4).unwrap();
    assert!((t - 1.0).abs() <= 1e-3);
    let (a, ch) = scalar(-1.0, 1.0, 0.0);
    assert_eq!(critical_sigma_search(&a, &ch, &[1.0], 1e-4).unwrap(), f64::INFINITY);
    assert_eq!(exact_critical_scale(&a, &ch, &[1.0]).unwrap(), f64::INFINITY);
}

#[test]
fn critical_search_preconditions() {
    let (a, ch) = scalar(1.0, 1.0, 1.0);
    assert!(matches!(critical_sigma_search(&a, &ch, &[1.0], 1e-3), Err(Error::Precondition(_))));
    let (a, ch) = scalar(-1.0, 1.0, 1.0);
    assert!(matches!(critical_sigma_search(&a, &ch, &[0.0], 1e-3), Err(Error::Validation { .. })));
}

#[test]
fn random_scalar_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let a = -rng.random_range(0.1..5.0);
        let b = rng.random_range(0.2..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let c = rng.random_range(0.2..3.0);
        let (am, ch) = scalar(a, b, c);
        let want = (-2.0 * a).sqrt() / (b * c).abs();
        let t = critical_sigma_search(&am, &ch, &[1.0], 1e-4).unwrap();
        assert!((t / want - 1.0).abs() <= 1e-3, "a={a} b={b} c={c}: {t} vs {want}");
        let e = exact_critical_scale(&am, &ch, &[1.0]).unwrap();
        assert!((e / want - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn exact_scale_matches_moment_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let (a, ch) = random_instance(&mut rng, 3, 2);
        let d = [rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)];
        let t = exact_critical_scale(&a, &ch, &d).unwrap();
        let at = |s: f64| moment_abscissa(&a, &ch, &[s * d[0], s * d[1]]);
        assert!(at(0.999 * t) < 0.0);
        assert!(at(1.001 * t) > 0.0);
    }
}

#[test]
fn primal_dual_agree_with_moment_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut checked = 0;
    while checked < 20 {
        let n = rng.random_range(2..=5);
        let (a, ch) = random_instance(&mut rng, n, 2);
        let sigma = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
        let ab = moment_abscissa(&a, &ch, &sigma);
        if ab.abs() < 1e-2 {
            continue;
        }
        checked += 1;
        let p = verify_mses(&a, &ch, &sigma, TOL).unwrap();
        let q = verify_mses_dual(&a, &ch, &sigma, TOL).unwrap();
        assert_eq!(p.is_certified(), ab < 0.0, "primal vs oracle, abscissa {ab}");
        assert_eq!(q.is_certified(), ab < 0.0, "dual vs oracle, abscissa {ab}");
    }
}

#[test]
fn certificates_pass_independent_recheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..10 {
        let (a, ch) = random_instance(&mut rng, 4, 2);
        let d = [1.0, 1.0];
        let t = exact_critical_scale(&a, &ch, &d).unwrap();
        let sigma = [0.7 * t, 0.7 * t];
        let cert = verify_mses(&a, &ch, &sigma, TOL).unwrap();
        let cert = cert.certificate().expect("certified");
        let p = &cert.matrix;
        assert!((p - p.transpose()).amax() <= 1e-12);
        assert!(eig_range(p).0 > 0.0);
        assert!((p.trace() - 4.0).abs() < 1e-6);
        assert!(eig_range(&lmi_primal(&a, &ch, &sigma, p)).1 < 0.0);
        // the same P stays valid for every smaller σ
        for f in [0.0, 0.3, 0.9] {
            let s = [f * sigma[0], sigma[1]];
            assert!(eig_range(&lmi_primal(&a, &ch, &s, p)).1 < 0.0);
        }
        let db = cert.decay_bounds.unwrap();
        assert!(db.gain >= 1.0 && db.rate > 0.0);
    }
}

#[test]
fn channel_margins_axes() {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
    let ch = channels_from(&DMatrix::identity(2, 2), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    let m = channel_margins(&a, &ch).unwrap();
    assert!((m.bounds[0] - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(m.bounds[1], f64::INFINITY);
    assert_eq!(m.binding, Some(0));
}

#[test]
fn lyapunov_examples() {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let q = solve_lyapunov(&(-&i2), &i2).unwrap();
    assert!((q - 0.5 * &i2).amax() < 1e-14);
    let q: DMatrix<f64> = solve_lyapunov(&DMatrix::from_element(1, 1, -2.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
    assert!((q[(0, 0)] - 1.0).abs() < 1e-14);
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
    let q = solve_lyapunov(&a, &i2).unwrap();
    assert!((&q - kron_lyapunov(&a, &i2)).amax() < 1e-12);
    assert!((&a * &q + &q * a.transpose() + &i2).amax() <= 1e-10);
}

#[test]
fn lyapunov_random_against_kronecker() {
    let mut rng = ChaCha8Rng::seed_from_u64(89);
    for n in 1..=7 {
        let (a, _) = random_instance(&mut rng, n, 1);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let w = &g * g.transpose();
        let q = solve_lyapunov(&a, &w).unwrap();
        assert!((&q - kron_lyapunov(&a, &w)).amax() <= 1e-10 * q.amax().max(1.0));
        assert!((&q - q.transpose()).amax() <= 1e-12 * q.amax().max(1.0));
        assert!(eig_range(&q).0 >= -1e-12);
    }
}

#[test]
fn lyapunov_ill_posed() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(solve_lyapunov(&a, &DMatrix::identity(2, 2)).is_err());
}
