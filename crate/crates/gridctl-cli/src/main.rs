use clap::{Args, Parser, Subcommand, ValueEnum};
use gridctl::io::{read_input, read_json, to_json_pretty, CertificateFile, GainFile, Input, ModelFile};
use gridctl::msesana::{exact_critical_scale, verify_mses};
use gridctl::netmodel::{check_assumptions, linearize, solve_equilibrium, EquilibriumPoint, LinearModel, MeasSelection, NetworkCase};
use gridctl::sde::{
    compare_controllers, frequency_distribution, simulate_ensemble, simulate_path, to_hz, EventKind, InitialState, ModelSource, ScenarioEvent, SimConfig, SimModel,
};
use gridctl::stochastic::{assemble_closed_loop, multiplicative_channels, UncertaintySpec};
use gridctl::synth::{design_lqr, lqr_output_gain, pareto_sweep, row_support, synthesize, NormP, SynthesisWeights};
use gridctl::Error;
use nalgebra::DMatrix;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gridctl", version, about = "Sparse stochastic load-control synthesis and validation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium and write model.json and assumptions.json
    Linearize(Common),
    /// Design a gain; writes gain.json, certificate.json and support.csv
    Synth(SynthArgs),
    /// Sweep w3 and write pareto.csv
    Pareto(ParetoArgs),
    /// Monte Carlo validation; writes ensemble.csv, stats.json and hist.json
    Simulate(SimArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// network case or model file (JSON)
    #[arg(long)]
    case: PathBuf,
    /// full | generators | rows=i,j,...
    #[arg(long, default_value = "full")]
    meas: MeasSelection,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct WeightArgs {
    #[arg(long, default_value_t = 100.0)]
    w1: f64,
    #[arg(long, default_value_t = 100.0)]
    w2: f64,
    #[arg(long, default_value_t = 1.0)]
    w3: f64,
    /// sparsity weight, 0 disables the penalty
    #[arg(long, default_value_t = 1.0)]
    w4: f64,
    /// row norm in the sparsity penalty: 1, 2 or inf
    #[arg(long, default_value = "1")]
    p: NormP,
}

impl WeightArgs {
    fn weights(&self) -> SynthesisWeights {
        SynthesisWeights { w1: self.w1, w2: self.w2, w3: self.w3, w4: self.w4, p: self.p }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct ParetoArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    weights: WeightArgs,
    /// comma-separated w3 values
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    w3_grid: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaBasis {
    /// exact mean-square boundary along the certified σ* direction
    Critical,
    /// the certified σ* itself
    Certificate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Initial {
    Zero,
    Unit,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    weights: WeightArgs,
    /// gain.json; synthesized from the weights when absent
    #[arg(long)]
    gain: Option<PathBuf>,
    /// certificate.json holding σ*; defaults to the one next to the gain
    #[arg(long)]
    certificate: Option<PathBuf>,
    /// explicit σ, one value for every channel or a comma-separated list
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    sigma_scale: f64,
    #[arg(long, value_enum, default_value = "critical")]
    sigma_basis: SigmaBasis,
    /// additive noise level on every channel, 0 disables it
    #[arg(long, default_value_t = 0.0)]
    additive: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// simulate the nonlinear swing model instead of the linearization
    #[arg(long)]
    nonlinear: bool,
    /// scenario event time:bus:generation|load:magnitude (repeatable)
    #[arg(long = "event")]
    events: Vec<String>,
    #[arg(long, value_enum, default_value = "unit")]
    initial: Initial,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// also design an LQR baseline and write compare.json
    #[arg(long)]
    lqr: bool,
    /// exit with code 5 when a path is truncated
    #[arg(long)]
    strict: bool,
    /// write trajectory.json for path 0 (large for long horizons)
    #[arg(long)]
    trajectory: bool,
}

enum Failure {
    Lib(Error),
    Strict(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Strict(_) => 5,
            Failure::Lib(e) => match e {
                Error::Parse(_) | Error::Validation { .. } | Error::Dimension(_) | Error::Io(_) => 2,
                Error::Precondition(_) | Error::Numerical(_) | Error::NoConvergence { .. } => 3,
                Error::Solver(_) | Error::Inconsistent(_) | Error::Conic(_) => 4,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Strict(m) => write!(f, "{m}"),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).format_timestamp(None).format_target(false).parse_default_env().init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let r = match cli.cmd {
        Command::Linearize(a) => cmd_linearize(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Pareto(a) => cmd_pareto(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

struct Loaded {
    model: LinearModel<f64>,
    plant: Option<(NetworkCase, EquilibriumPoint<f64>)>,
}

fn load(c: &Common) -> Res<Loaded> {
    match read_input(&c.case)? {
        Input::Case(case) => {
            let eq = solve_equilibrium(&case, &case.nominal_injection::<f64>())?;
            log::info!("equilibrium: residual {:.2e} after {} Newton steps", eq.residual_norm, eq.iterations);
            let model = linearize(&case, &eq, &c.meas)?;
            Ok(Loaded { model, plant: Some((case, eq)) })
        }
        Input::Model(file) => {
            let model = file.to_model::<f64>()?;
            let model = match &c.meas {
                MeasSelection::Full => model,
                MeasSelection::Rows(rows) => {
                    if let Some(r) = rows.iter().find(|&&r| r >= model.s()) {
                        return Err(Error::Validation { path: "meas".into(), msg: format!("row {r} out of range for {} measurements", model.s()) }.into());
                    }
                    let c0 = DMatrix::from_fn(rows.len(), model.n(), |i, j| model.c0[(rows[i], j)]);
                    let labels = rows.iter().map(|&r| model.measurement_labels[r].clone()).collect();
                    model.with_measurement(c0, labels)?
                }
                MeasSelection::Generators => {
                    return Err(Error::Validation { path: "meas".into(), msg: "'generators' needs a network case".into() }.into());
                }
            };
            Ok(Loaded { model, plant: None })
        }
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Res<()> {
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    std::fs::write(dir.join(name), text).map_err(Error::Io)?;
    Ok(())
}

fn csv_text<F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>>(f: F) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    f(&mut w).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

fn cmd_linearize(a: &Common) -> Res<()> {
    let l = load(a)?;
    let rep = check_assumptions(&l.model);
    if !rep.hurwitz {
        log::warn!("A0 is not Hurwitz (max Re λ = {:e})", rep.max_real_eig);
    }
    write(&a.out, "model.json", &to_json_pretty(&ModelFile::from_model(&l.model)))?;
    write(&a.out, "assumptions.json", &to_json_pretty(&rep))?;
    println!("n={} m={} s={} hurwitz={} controllable={} observable={}", rep.n, l.model.m(), l.model.s(), rep.hurwitz, rep.controllable, rep.observable);
    Ok(())
}

fn certified_at<T: gridctl::Real>(model: &LinearModel<T>, k0: &DMatrix<T>, sigma: &[T], scale: f64) -> Result<bool, Error> {
    let spec = UncertaintySpec::multiplicative(sigma.iter().map(|s| if s.is_finite_val() { *s * T::lit(scale) } else { T::zero() }).collect());
    let cl = assemble_closed_loop(model, k0, &spec, &vec![T::zero(); model.m()])?;
    let ch = multiplicative_channels(&cl);
    Ok(verify_mses(&cl.a, &ch, &cl.spec.sigma, T::lit(1e-8))?.is_certified())
}

fn cmd_synth(a: &SynthArgs) -> Res<()> {
    let l = load(&a.common)?;
    let w = a.weights.weights();
    let r = synthesize(&l.model, &w)?;
    if r.reduced_accuracy {
        log::warn!("solver stopped at reduced accuracy");
    }
    let mut cert = CertificateFile::new(&l.model, &r);
    cert.mses_check = Some(certified_at(&l.model, &r.k0, &r.sigma_star, 0.99)?);
    let out = &a.common.out;
    write(out, "gain.json", &to_json_pretty(&GainFile::new(&l.model, &r.k0, r.path, w, r.row_support.clone())))?;
    write(out, "certificate.json", &to_json_pretty(&cert))?;
    let text = csv_text(|c| {
        c.write_record(["channel", "bus", "gain_norm", "sigma_star"])?;
        for &i in &r.row_support {
            let norm = r.k0.row(i).norm();
            let s = r.sigma_star[i];
            c.write_record([i.to_string(), l.model.injection_labels[i].to_string(), format!("{norm:e}"), if s.is_finite() { format!("{s:e}") } else { "inf".into() }])?;
        }
        Ok(())
    });
    write(out, "support.csv", &text)?;
    println!(
        "path={} engaged={}/{} gamma2={:.6e} iterations={} mses_check={}",
        serde_json::to_value(r.path).unwrap().as_str().unwrap_or(""),
        r.row_support.len(),
        l.model.m(),
        r.gamma2_star,
        r.iterations,
        cert.mses_check.unwrap_or(false)
    );
    Ok(())
}

fn cmd_pareto(a: &ParetoArgs) -> Res<()> {
    if a.w3_grid.is_empty() {
        return Err(Error::Validation { path: "w3_grid".into(), msg: "empty grid".into() }.into());
    }
    let l = load(&a.common)?;
    let pts = pareto_sweep(&l.model, &a.weights.weights(), &a.w3_grid)?;
    let text = csv_text(|c| {
        c.write_record(["w3", "bus", "gain_norm", "sigma_star", "gamma2_star", "status"])?;
        for p in &pts {
            match &p.error {
                None => {
                    for (i, bus) in l.model.injection_labels.iter().enumerate() {
                        let s = p.sigma_star[i];
                        c.write_record([
                            p.w3.to_string(),
                            bus.to_string(),
                            format!("{:e}", p.gain_norms[i]),
                            if s.is_finite() { format!("{s:e}") } else { "inf".into() },
                            format!("{:e}", p.gamma2_star),
                            "ok".into(),
                        ])?;
                    }
                }
                Some(e) => {
                    log::warn!("w3 = {}: {e}", p.w3);
                    c.write_record([p.w3.to_string(), String::new(), String::new(), String::new(), String::new(), format!("failed: {e}")])?;
                }
            }
        }
        Ok(())
    });
    write(&a.common.out, "pareto.csv", &text)?;
    let failed = pts.iter().filter(|p| p.error.is_some()).count();
    println!("points={} failed={failed}", pts.len());
    Ok(())
}

fn parse_event(s: &str, i: usize) -> Result<ScenarioEvent, Error> {
    let bad = |msg: &str| Error::Validation { path: format!("event[{i}]"), msg: format!("'{s}': {msg}") };
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(bad("expected time:bus:generation|load:magnitude"));
    }
    let kind = match parts[2] {
        "generation" => EventKind::GenerationStep,
        "load" => EventKind::LoadStep,
        _ => return Err(bad("kind must be generation or load")),
    };
    Ok(ScenarioEvent {
        time: parts[0].parse().map_err(|_| bad("bad time"))?,
        bus: parts[1].parse().map_err(|_| bad("bad bus id"))?,
        kind,
        magnitude: parts[3].parse().map_err(|_| bad("bad magnitude"))?,
    })
}

#[derive(Serialize)]
struct HistFile {
    #[serde(flatten)]
    hist: gridctl::sde::FrequencyHistogram,
    edges_hz: Vec<f64>,
}

fn cmd_simulate(a: &SimArgs) -> Res<()> {
    let l = load(&a.common)?;
    let model = &l.model;
    let m = model.m();
    let (k0, sigma_star): (DMatrix<f64>, Option<Vec<f64>>) = match &a.gain {
        Some(g) => {
            let gf: GainFile = read_json(g)?;
            let cert_path = a.certificate.clone().or_else(|| g.parent().map(|d| d.join("certificate.json")).filter(|p| p.exists()));
            let sig = match cert_path {
                Some(p) => Some(read_json::<CertificateFile>(&p)?.sigma_star.iter().map(|s| s.unwrap_or(f64::INFINITY)).collect()),
                None => None,
            };
            (gf.gain(model)?, sig)
        }
        None => {
            let r = synthesize(model, &a.weights.weights())?;
            (r.k0, Some(r.sigma_star))
        }
    };
    let sigma: Vec<f64> = match (&a.sigma, &sigma_star) {
        (Some(v), _) if v.len() == 1 => vec![v[0]; m],
        (Some(v), _) => v.clone(),
        (None, Some(s)) => {
            let dir: Vec<f64> = s.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
            match a.sigma_basis {
                SigmaBasis::Certificate => dir,
                SigmaBasis::Critical => {
                    let cl = assemble_closed_loop(model, &k0, &UncertaintySpec::multiplicative(dir.clone()), &vec![0.0; m])?;
                    let c = exact_critical_scale(&cl.a, &multiplicative_channels(&cl), &dir)?;
                    log::info!("mean-square boundary at {c:.6} x certified sigma*");
                    if c.is_finite() {
                        dir.iter().map(|v| v * c).collect()
                    } else {
                        dir
                    }
                }
            }
        }
        (None, None) => return Err(Error::Validation { path: "sigma".into(), msg: "give --sigma or a certificate".into() }.into()),
    };
    let sigma: Vec<f64> = sigma.iter().map(|s| s * a.sigma_scale).collect();
    let spec = if a.additive > 0.0 { UncertaintySpec::with_additive_all(sigma, a.additive) } else { UncertaintySpec::multiplicative(sigma) };
    let events = a.events.iter().enumerate().map(|(i, s)| parse_event(s, i)).collect::<Result<Vec<_>, _>>()?;
    let cfg = SimConfig {
        dt: a.dt,
        horizon: a.horizon,
        paths: a.paths,
        seed: a.seed,
        multiplicative: true,
        additive: a.additive > 0.0,
        events,
        source: if a.nonlinear { ModelSource::Nonlinear } else { ModelSource::Linear },
        initial: match a.initial {
            Initial::Zero => InitialState::Zero,
            Initial::Unit => InitialState::Unit,
        },
        ..SimConfig::default()
    };
    cfg.validate()?;
    let plant = l.plant.as_ref().map(|(c, e)| (c, e));
    let cl = assemble_closed_loop(model, &k0, &spec, &vec![0.0; m])?;
    let sim = SimModel::build(cfg.source, &cl, plant)?;
    let stats = simulate_ensemble(&sim, &cfg)?;
    let out = &a.common.out;
    write(out, "ensemble.csv", &stats.to_csv())?;
    write(out, "stats.json", &to_json_pretty(&stats))?;
    let hist = frequency_distribution(&stats, a.bins)?;
    let edges_hz = hist.edges.iter().map(|w| to_hz(*w)).collect();
    write(out, "hist.json", &to_json_pretty(&HistFile { hist, edges_hz }))?;
    let var_csv = csv_text(|c| {
        c.write_record(["bus", "variance_rad2", "std_hz"])?;
        for (b, v) in stats.freq_labels.iter().zip(&stats.freq_variance) {
            c.write_record([b.to_string(), format!("{v:e}"), format!("{:e}", v.sqrt() / (2.0 * std::f64::consts::PI))])?;
        }
        Ok(())
    });
    write(out, "variance.csv", &var_csv)?;
    if a.trajectory {
        log::warn!("trajectory.json holds every recorded state of path 0");
        write(out, "trajectory.json", &to_json_pretty(&simulate_path(&sim, &cfg, 0)?))?;
    }
    if a.lqr {
        let lqr = design_lqr(model, &DMatrix::identity(model.n(), model.n()), &DMatrix::identity(m, m))?;
        let k_lqr = lqr_output_gain(model, &lqr)?;
        log::info!("LQR baseline engages {}/{m} loads", row_support(&k_lqr, 1e-6).len());
        let rep = compare_controllers(model, &k0, &k_lqr, &spec, &cfg, plant)?;
        write(out, "compare.json", &to_json_pretty(&rep))?;
    }
    println!(
        "final_mean_sq={:e} stderr={:e} unstable={} truncated={}/{}",
        stats.terminal_mean_sq(),
        stats.stderr.last().copied().unwrap_or(f64::NAN),
        stats.unstable,
        stats.truncated_paths,
        stats.paths
    );
    if a.strict && stats.truncated_paths > 0 {
        return Err(Failure::Strict(format!("{} of {} paths truncated", stats.truncated_paths, stats.paths)));
    }
    Ok(())
}
