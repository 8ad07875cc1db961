mod common;

use common::*;
use gridctl::netmodel::*;
use gridctl::sde::*;
use gridctl::stochastic::*;
use gridctl::synth::*;
use gridctl::Error;
use nalgebra::{DMatrix, DVector};

fn loop_of(lm: &LinearModel<f64>, k: f64, sigma: Vec<f64>) -> ClosedLoopModel<f64> {
    let k0 = DMatrix::from_element(lm.m(), lm.s(), k);
    assemble_closed_loop(lm, &k0, &UncertaintySpec::multiplicative(sigma), &vec![0.0; lm.m()]).unwrap()
}

fn sim(cl: &ClosedLoopModel<f64>) -> SimModel<f64> {
    SimModel::build(ModelSource::Linear, cl, None).unwrap()
}

#[test]
fn deterministic_decay_matches_euler_recursion() {
    let i2 = DMatrix::<f64>::identity(2, 2);
    let lm = LinearModel::from_matrices(-&i2, i2.clone(), i2.clone()).unwrap();
    let cl = assemble_closed_loop(&lm, &DMatrix::zeros(2, 2), &UncertaintySpec::multiplicative(vec![0.0, 0.0]), &[0.0, 0.0]).unwrap();
    let m = sim(&cl);
    for dt in [1e-3, 1e-4] {
        let cfg = SimConfig { dt, horizon: 1.0, paths: 1, initial: InitialState::Explicit(vec![1.0, 0.0]), ..Default::default() };
        let tr = simulate_path(&m, &cfg, 0).unwrap();
        let z = tr.states.last().unwrap();
        assert_eq!(*tr.times.last().unwrap(), 1.0);
        let euler = (1.0 - dt).powi((1.0 / dt).round() as i32);
        assert!((z[0] - euler).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        if dt == 1e-4 {
            assert!((z[0] - (-1f64).exp()).abs() <= 1e-3);
        }
    }
}

#[test]
fn record_grid_has_endpoints() {
    let cfg = SimConfig { dt: 1e-3, horizon: 10.0, ..Default::default() };
    let r = cfg.record_steps();
    assert_eq!(r[0], 0);
    assert_eq!(*r.last().unwrap(), 10_000);
    assert!(r.len() <= 1002);
    let cfg = SimConfig { dt: 0.3, horizon: 1.0, record_points: 1000, ..Default::default() };
    assert_eq!(cfg.record_steps(), vec![0, 1, 2, 3]);
}

#[test]
fn gbm_second_moment() {
    let lm = scalar_model(0.0, 1.0, 1.0);
    let cl = loop_of(&lm, 1.0, vec![1.0]);
    let cfg = SimConfig { dt: 1e-3, horizon: 1.0, paths: 4000, seed: 0, ..Default::default() };
    let st = simulate_ensemble(&sim(&cl), &cfg).unwrap();
    let (m, se) = (*st.mean_sq.last().unwrap(), *st.stderr.last().unwrap());
    let want = (-1f64).exp();
    assert!((m - want).abs() <= 3.0 * se + 1e-3, "{m} ± {se}");
    assert_eq!(st.initial_mean_sq, 1.0);
    assert!(!st.unstable);
    assert_eq!(st.counts[0], 4000);
}

#[test]
fn ensembles_are_reproducible_across_thread_counts() {
    let lm = case_model("smib.json", MeasSelection::Full);
    let cl = loop_of(&lm, 0.3, vec![0.5]);
    let m = sim(&cl);
    let cfg = SimConfig { dt: 1e-3, horizon: 1.0, paths: 100, seed: 7, additive: false, ..Default::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&simulate_ensemble(&m, &cfg).unwrap()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
    let other = SimConfig { seed: 8, ..cfg.clone() };
    assert_ne!(one, serde_json::to_string(&simulate_ensemble(&m, &other).unwrap()).unwrap());
}

#[test]
fn path_matches_its_ensemble_member() {
    let lm = scalar_model(0.0, 1.0, 1.0);
    let cl = loop_of(&lm, 1.0, vec![1.0]);
    let m = sim(&cl);
    let cfg = SimConfig { dt: 1e-3, horizon: 1.0, paths: 1, seed: 3, keep_terminal: true, ..Default::default() };
    let st = simulate_ensemble(&m, &cfg).unwrap();
    let tr = simulate_path(&m, &cfg, 0).unwrap();
    assert_eq!(st.terminal.as_ref().unwrap()[0], *tr.states.last().unwrap());
    assert!(simulate_path(&m, &cfg, 1).is_err());
}

#[test]
fn additive_noise_stationary_variance() {
    let lm = scalar_model(-1.0, 1.0, 1.0);
    let k0 = DMatrix::zeros(1, 1);
    let spec = UncertaintySpec::with_additive_all(vec![0.0], 1.0);
    let cl = assemble_closed_loop(&lm, &k0, &spec, &[0.0]).unwrap();
    let cfg = SimConfig { dt: 1e-3, horizon: 10.0, paths: 2000, additive: true, initial: InitialState::Zero, ..Default::default() };
    let st = simulate_ensemble(&sim(&cl), &cfg).unwrap();
    // Euler stationary variance h / (1 − (1 − h)²)
    let want = 1.0 / (2.0 - cfg.dt);
    let (m, se) = (*st.mean_sq.last().unwrap(), *st.stderr.last().unwrap());
    assert!((m - want).abs() <= 3.0 * se, "{m} ± {se}");
    assert!((st.freq_variance[0] - 0.5).abs() < 0.05);
    assert_eq!(st.initial_mean_sq, 0.0);
    assert!(!st.unstable);
}

/// Classic fourth-order Runge–Kutta for `ż = A z + f(t)`.
fn rk4(a: &DMatrix<f64>, f: impl Fn(f64) -> DVector<f64>, z0: DVector<f64>, h: f64, t_end: f64) -> Vec<(f64, DVector<f64>)> {
    let mut out = vec![(0.0, z0.clone())];
    let mut z = z0;
    let steps = (t_end / h).round() as usize;
    for k in 0..steps {
        let t = k as f64 * h;
        let d = |t: f64, z: &DVector<f64>| a * z + f(t);
        let k1 = d(t, &z);
        let k2 = d(t + h / 2.0, &(&z + &k1 * (h / 2.0)));
        let k3 = d(t + h / 2.0, &(&z + &k2 * (h / 2.0)));
        let k4 = d(t + h, &(&z + &k3 * h));
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(((k + 1) as f64 * h, z.clone()));
    }
    out
}

fn smib_step_event() -> Vec<ScenarioEvent> {
    vec![ScenarioEvent { time: 1.0, bus: 1, kind: EventKind::GenerationStep, magnitude: -0.2 }]
}

#[test]
fn smib_generation_loss_dips_then_recovers() {
    let case = load_case(data("smib.json")).unwrap();
    let eq = solve_equilibrium::<f64>(&case, &case.nominal_injection()).unwrap();
    let lm = linearize(&case, &eq, &MeasSelection::Full).unwrap();
    let cl = loop_of(&lm, 0.0, vec![0.0]);
    let cfg = SimConfig { dt: 1e-4, horizon: 40.0, paths: 1, multiplicative: false, initial: InitialState::Zero, events: smib_step_event(), ..Default::default() };
    let tr = simulate_path(&sim(&cl), &cfg, 0).unwrap();
    let g = lm.gen_freq[0];
    let w: Vec<f64> = tr.frequencies.iter().map(|f| f[g]).collect();
    let (imin, nadir) = w.iter().enumerate().fold((0, 0.0), |b, (i, v)| if *v < b.1 { (i, *v) } else { b });
    assert!(tr.times[imin] > 1.0);
    assert!(nadir < -1e-3);
    assert!(w.iter().zip(&tr.times).all(|(v, t)| *t > 1.0 || *v == 0.0));
    assert!(w.last().unwrap().abs() < 0.05 * nadir.abs());

    // independent reference solution
    let bcol: DVector<f64> = lm.b_bus.column(lm.bus_ids.iter().position(|&b| b == 1).unwrap()) * -0.2;
    let refsol = rk4(&lm.a0, |t| if t >= 1.0 - 1e-12 { bcol.clone() } else { DVector::zeros(3) }, DVector::zeros(3), 1e-3, 40.0);
    let scale = refsol.iter().map(|(_, z)| z.amax()).fold(0.0, f64::max);
    for (t, z) in tr.times.iter().zip(&tr.states) {
        let k = (t / 1e-3).round() as usize;
        let diff = (DVector::from_column_slice(z) - &refsol[k].1).amax();
        assert!(diff <= 2e-3 * scale, "t = {t}: {diff}");
    }

    // the nonlinear plant follows the same dip for a small step
    let sm = SimModel::build(ModelSource::Nonlinear, &cl, Some((&case, &eq))).unwrap();
    let cfg_nl = SimConfig { source: ModelSource::Nonlinear, ..cfg.clone() };
    let tn = simulate_path(&sm, &cfg_nl, 0).unwrap();
    let nl_nadir = tn.frequencies.iter().map(|f| f[g]).fold(0.0, f64::min);
    assert!((nl_nadir / nadir - 1.0).abs() < 0.1, "{nl_nadir} vs {nadir}");
}

#[test]
fn nonlinear_equilibrium_is_stationary() {
    let case = load_case(data("case9.json")).unwrap();
    let eq = solve_equilibrium::<f64>(&case, &case.nominal_injection()).unwrap();
    let lm = linearize(&case, &eq, &MeasSelection::Full).unwrap();
    let cl = loop_of(&lm, 0.0, vec![0.0; lm.m()]);
    let sm = SimModel::build(ModelSource::Nonlinear, &cl, Some((&case, &eq))).unwrap();
    let cfg = SimConfig { dt: 1e-3, horizon: 2.0, paths: 1, source: ModelSource::Nonlinear, initial: InitialState::Zero, ..Default::default() };
    let tr = simulate_path(&sm, &cfg, 0).unwrap();
    assert!(tr.states.iter().flatten().all(|v| v.abs() < 1e-9));
    assert!(matches!(SimModel::build(ModelSource::Nonlinear, &cl, None), Err(Error::Precondition(_))));
}

#[test]
fn feedback_raises_the_nadir() {
    let case = load_case(data("smib.json")).unwrap();
    let eq = solve_equilibrium::<f64>(&case, &case.nominal_injection()).unwrap();
    let lm = linearize(&case, &eq, &MeasSelection::Full).unwrap();
    let r = synthesize(&lm, &SynthesisWeights::new(100.0, 100.0, 1.0, 0.0)).unwrap();
    let spec = UncertaintySpec::multiplicative(vec![0.0]);
    let cfg = SimConfig { dt: 1e-3, horizon: 10.0, paths: 1, multiplicative: false, initial: InitialState::Zero, events: smib_step_event(), ..Default::default() };
    let rep = compare_controllers(&lm, &r.k0, &DMatrix::zeros(1, 3), &spec, &cfg, None).unwrap();
    assert!(rep.a.nadir_mean > rep.b.nadir_mean);
    assert_eq!(rep.a.engaged_fraction, 1.0);
    assert_eq!(rep.b.engaged_fraction, 0.0);
    assert!(rep.b.control.iter().all(|c| c.max_abs == 0.0));
    assert!(rep.a.nadir_hz < 60.0);
}

#[test]
fn identical_gains_give_identical_reports() {
    let lm = case_model("smib.json", MeasSelection::Full);
    let k = DMatrix::from_row_slice(1, 3, &[0.5, 0.1, 0.2]);
    let spec = UncertaintySpec::multiplicative(vec![0.4]);
    let cfg = SimConfig { dt: 1e-3, horizon: 2.0, paths: 64, ..Default::default() };
    let rep = compare_controllers(&lm, &k, &k, &spec, &cfg, None).unwrap();
    assert_eq!(rep.a, rep.b);
}

#[test]
fn lyapunov_function_decreases_without_noise() {
    let lm = case_model("smib.json", MeasSelection::Full);
    let r = synthesize(&lm, &SynthesisWeights::new(100.0, 100.0, 1.0, 0.0)).unwrap();
    let cl = assemble_closed_loop(&lm, &r.k0, &UncertaintySpec::multiplicative(vec![0.0]), &[0.0]).unwrap();
    let p = gridctl::linalg::solve_lyapunov(&cl.a.transpose(), &DMatrix::identity(3, 3)).unwrap();
    let cfg = SimConfig { dt: 1e-4, horizon: 5.0, paths: 1, ..Default::default() };
    let tr = simulate_path(&sim(&cl), &cfg, 0).unwrap();
    let v: Vec<f64> = tr.states.iter().map(|z| {
        let z = DVector::from_column_slice(z);
        (z.transpose() * &p * &z)[(0, 0)]
    }).collect();
    assert!(v.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn blowup_is_truncated_not_fatal() {
    let lm = scalar_model(50.0, 1.0, 1.0);
    let cl = loop_of(&lm, 0.0, vec![0.0]);
    let cfg = SimConfig { dt: 1e-3, horizon: 2.0, paths: 3, ..Default::default() };
    let st = simulate_ensemble(&sim(&cl), &cfg).unwrap();
    assert_eq!(st.truncated_paths, 3);
    assert!(st.unstable);
    // no surviving paths after the blow-up, so those grid points carry no estimate
    assert_eq!(*st.counts.last().unwrap(), 0);
    assert!(st.mean_sq.last().unwrap().is_nan());
    assert!(st.counts.iter().zip(&st.mean_sq).all(|(c, v)| (*c == 0) == v.is_nan()));
    let tr = simulate_path(&sim(&cl), &cfg, 0).unwrap();
    assert!(tr.truncated);
    let t = tr.truncated_at.unwrap();
    assert!(t > 1.0 && t < 2.0);
}

#[test]
fn supercritical_growth_is_flagged() {
    let lm = scalar_model(0.0, 1.0, 1.0);
    let cl = loop_of(&lm, 1.0, vec![2.0]);
    let cfg = SimConfig { dt: 1e-3, horizon: 5.0, paths: 2000, ..Default::default() };
    let st = simulate_ensemble(&sim(&cl), &cfg).unwrap();
    assert!(st.unstable);
}

#[test]
fn config_validation() {
    let lm = scalar_model(-1.0, 1.0, 1.0);
    let m = sim(&loop_of(&lm, 0.0, vec![0.0]));
    let bad = [
        SimConfig { dt: 0.0, ..Default::default() },
        SimConfig { paths: 0, ..Default::default() },
        SimConfig { horizon: 1.0, events: vec![ScenarioEvent { time: 2.0, bus: 0, kind: EventKind::LoadStep, magnitude: 1.0 }], ..Default::default() },
        SimConfig { horizon: 1.0, events: vec![ScenarioEvent { time: 0.5, bus: 99, kind: EventKind::LoadStep, magnitude: 1.0 }], ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(simulate_ensemble(&m, &cfg), Err(Error::Validation { .. })), "{cfg:?}");
    }
    let cfg = SimConfig { initial: InitialState::Explicit(vec![1.0, 2.0]), ..Default::default() };
    assert!(matches!(simulate_path(&m, &cfg, 0), Err(Error::Dimension(_))));
}

#[test]
fn event_signs() {
    let g = ScenarioEvent { time: 0.0, bus: 1, kind: EventKind::GenerationStep, magnitude: 0.3 };
    let l = ScenarioEvent { kind: EventKind::LoadStep, ..g.clone() };
    assert_eq!(g.injection(), 0.3);
    assert_eq!(l.injection(), -0.3);
    assert_eq!(serde_json::to_string(&EventKind::GenerationStep).unwrap(), "\"generation-step\"");
}

#[test]
fn histogram_edge_cases() {
    let h = histogram(&[0.25; 10], 5).unwrap();
    assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
    assert_eq!(h.total, 10);
    assert_eq!(h.excess_kurtosis, 0.0);
    let v: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
    let h = histogram(&v, 1).unwrap();
    assert_eq!(h.counts, vec![1000]);
    assert!((h.density[0] - 1.0).abs() < 1e-12);
    let h = histogram(&v, 10).unwrap();
    assert_eq!(h.counts.iter().sum::<usize>(), 1000);
    let area: f64 = h.density.iter().zip(h.edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
    assert!((area - 1.0).abs() < 1e-12);
    // uniform distribution has excess kurtosis −6/5
    assert!((h.excess_kurtosis + 1.2).abs() < 0.01);
    assert!(matches!(histogram(&v, 0), Err(Error::Validation { .. })));
    assert!(matches!(histogram(&[], 4), Err(Error::Precondition(_))));
}

#[test]
fn frequency_samples_come_from_the_stationary_window() {
    let lm = scalar_model(-1.0, 1.0, 1.0);
    let spec = UncertaintySpec::with_additive_all(vec![0.0], 1.0);
    let cl = assemble_closed_loop(&lm, &DMatrix::zeros(1, 1), &spec, &[0.0]).unwrap();
    let cfg = SimConfig { dt: 1e-3, horizon: 10.0, paths: 50, additive: true, initial: InitialState::Zero, samples_per_path: 20, ..Default::default() };
    let st = simulate_ensemble(&sim(&cl), &cfg).unwrap();
    assert!(st.samples_per_path <= 20);
    assert_eq!(st.freq_samples.len(), 50 * st.samples_per_path);
    let h = frequency_distribution(&st, 20).unwrap();
    assert_eq!(h.total, st.freq_samples.len());
    assert!(h.excess_kurtosis.abs() < 0.6);
    assert!(st.to_csv().starts_with("time,mean_sq,stderr\n"));
}
