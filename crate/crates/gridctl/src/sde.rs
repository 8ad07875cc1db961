//! Euler–Maruyama Monte Carlo for the closed-loop Itô SDE.
//!
//! Each path owns a ChaCha8 stream selected by `(seed, path)`; every step draws
//! one normal per channel for the multiplicative noise and, when enabled, one per
//! channel for the additive noise, always in channel order. Ensembles are reduced
//! block by block in path order with compensated sums, so the statistics do not
//! depend on how rayon schedules the blocks.

use crate::error::{Error, Result};
use crate::linalg::KahanSum;
use crate::netmodel::{EquilibriumPoint, LinearModel, Network, NetworkCase};
use crate::stochastic::{assemble_closed_loop, shift_coordinates, ClosedLoopModel, ShiftedModel, UncertaintySpec};
use crate::synth::row_support;
use conic::Real;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const NOMINAL_HZ: f64 = 60.0;

/// Frequency deviation in rad/s to absolute frequency in Hz.
pub fn to_hz(omega: f64) -> f64 {
    NOMINAL_HZ + omega / (2.0 * std::f64::consts::PI)
}

const BLOCK: usize = 16;
const BLOWUP: f64 = 1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// change of generation, negative for a loss
    GenerationStep,
    /// change of non-controllable load, positive for extra demand
    LoadStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    pub time: f64,
    pub bus: i64,
    pub kind: EventKind,
    pub magnitude: f64,
}

impl ScenarioEvent {
    /// Signed change of the bus injection.
    pub fn injection(&self) -> f64 {
        match self.kind {
            EventKind::GenerationStep => self.magnitude,
            EventKind::LoadStep => -self.magnitude,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSource {
    #[default]
    Linear,
    Nonlinear,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// start at the equilibrium
    Zero,
    /// deviation `1/√n` in every state, so that `‖z0‖ = 1`
    #[default]
    Unit,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub multiplicative: bool,
    pub additive: bool,
    pub events: Vec<ScenarioEvent>,
    pub source: ModelSource,
    pub initial: InitialState,
    /// trailing share of the horizon used for stationary statistics
    pub stationary_fraction: f64,
    /// approximate number of points on the output time grid
    pub record_points: usize,
    /// cap on stored histogram and control samples per path
    pub samples_per_path: usize,
    pub keep_terminal: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            paths: 10_000,
            seed: 0,
            multiplicative: true,
            additive: false,
            events: vec![],
            source: ModelSource::Linear,
            initial: InitialState::Unit,
            stationary_fraction: 0.2,
            record_points: 1000,
            samples_per_path: 200,
            keep_terminal: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be at least dt"));
        }
        if self.paths == 0 {
            return Err(Error::invalid("paths", "must be at least 1"));
        }
        if !(self.stationary_fraction > 0.0 && self.stationary_fraction <= 1.0) {
            return Err(Error::invalid("stationary_fraction", "must lie in (0, 1]"));
        }
        if self.record_points == 0 {
            return Err(Error::invalid("record_points", "must be at least 1"));
        }
        if self.samples_per_path == 0 {
            return Err(Error::invalid("samples_per_path", "must be at least 1"));
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(e.time >= 0.0 && e.time <= self.horizon) {
                return Err(Error::invalid(format!("events[{i}].time"), format!("{} outside [0, {}]", e.time, self.horizon)));
            }
            if !e.magnitude.is_finite() {
                return Err(Error::invalid(format!("events[{i}].magnitude"), "must be finite"));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    /// Step indices written to the output grid, always including 0 and the last step.
    pub fn record_steps(&self) -> Vec<usize> {
        let steps = self.steps();
        let every = steps.div_ceil(self.record_points).max(1);
        let mut v: Vec<usize> = (0..=steps).step_by(every).collect();
        if *v.last().unwrap() != steps {
            v.push(steps);
        }
        v
    }
}

enum Plant<T> {
    Linear {
        /// row-major closed-loop A
        a: Vec<T>,
        /// row-major frequency map and its bus-injection part
        fmap: Vec<T>,
        fbus: Vec<T>,
        /// injection columns for every bus, row-major n × nb
        b_bus: Vec<T>,
    },
    Nonlinear {
        net: Network<T>,
        dyn_buses: Vec<usize>,
        p_nom: Vec<T>,
    },
}

/// A closed loop prepared for simulation.
pub struct SimModel<T> {
    plant: Plant<T>,
    n: usize,
    m: usize,
    nb: usize,
    /// row-major `K0 C0`
    c: Vec<T>,
    /// point the control acts around (`z_offset` or `x_e`)
    u_ref: Vec<T>,
    /// point deviations are measured from (0 or `x_e`)
    origin: Vec<T>,
    sigma: Vec<T>,
    additive: Vec<bool>,
    additive_scale: T,
    p_in0: Vec<T>,
    /// state column of each channel
    b_ch: Vec<Vec<T>>,
    channel_bus: Vec<usize>,
    bus_ids: Vec<i64>,
    freq_labels: Vec<i64>,
    gen_freq: Vec<usize>,
    channel_labels: Vec<i64>,
}

fn row_major<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    m.transpose().as_slice().to_vec()
}

impl<T: Real> SimModel<T> {
    /// Linear or nonlinear plant closed by the loop's gain. A nonzero `P_in0` in the
    /// linear case moves to shifted coordinates, which needs a Hurwitz loop.
    pub fn build(source: ModelSource, cl: &ClosedLoopModel<T>, plant: Option<(&NetworkCase, &EquilibriumPoint<T>)>) -> Result<Self> {
        match source {
            ModelSource::Linear => {
                let z_off = if cl.p_in0.iter().all(|v| *v == T::zero()) {
                    vec![T::zero(); cl.n()]
                } else {
                    shift_coordinates(cl)?.z_offset.as_slice().to_vec()
                };
                Ok(Self::linear(cl, z_off))
            }
            ModelSource::Nonlinear => {
                let (case, eq) = plant.ok_or_else(|| Error::Precondition("nonlinear simulation needs the network case and equilibrium".into()))?;
                Self::nonlinear(cl, case, eq)
            }
        }
    }

    pub fn from_shifted(sh: &ShiftedModel<T>) -> Self {
        Self::linear(&sh.cl, sh.z_offset.as_slice().to_vec())
    }

    fn linear(cl: &ClosedLoopModel<T>, z_off: Vec<T>) -> Self {
        let (n, m) = (cl.n(), cl.m());
        let mut additive = vec![false; m];
        for &j in &cl.spec.additive_channels {
            additive[j] = true;
        }
        Self {
            plant: Plant::Linear { a: row_major(&cl.a), fmap: row_major(&cl.freq_map), fbus: row_major(&cl.freq_bus), b_bus: row_major(&cl.b_bus) },
            n,
            m,
            nb: cl.bus_ids.len(),
            c: row_major(&cl.c),
            u_ref: z_off,
            origin: vec![T::zero(); n],
            sigma: cl.spec.sigma.clone(),
            additive,
            additive_scale: cl.spec.additive_scale,
            p_in0: cl.p_in0.as_slice().to_vec(),
            b_ch: (0..m).map(|i| cl.b.column(i).iter().copied().collect()).collect(),
            channel_bus: cl.channel_bus.clone(),
            bus_ids: cl.bus_ids.clone(),
            freq_labels: cl.freq_labels.clone(),
            gen_freq: cl.gen_freq.clone(),
            channel_labels: cl.channel_bus.iter().map(|&b| cl.bus_ids[b]).collect(),
        }
    }

    fn nonlinear(cl: &ClosedLoopModel<T>, case: &NetworkCase, eq: &EquilibriumPoint<T>) -> Result<Self> {
        let net = Network::<T>::new(case);
        if net.num_states() != cl.n() || eq.x_e.len() != cl.n() {
            return Err(Error::Dimension(format!("network has {} states, loop has {}", net.num_states(), cl.n())));
        }
        let channel_bus = cl
            .channel_bus
            .iter()
            .map(|&b| net.bus_index(cl.bus_ids[b]).ok_or_else(|| Error::Inconsistent(format!("channel bus {} not in the case", cl.bus_ids[b]))))
            .collect::<Result<Vec<_>>>()?;
        let dyn_buses = net.dynamic_buses();
        let gen_freq = (0..dyn_buses.len()).filter(|&r| net.is_generator(dyn_buses[r])).collect();
        let mut s = Self::linear(cl, eq.x_e.clone());
        s.origin = eq.x_e.clone();
        s.nb = net.num_buses();
        s.channel_bus = channel_bus;
        s.bus_ids = net.bus_ids.clone();
        s.freq_labels = dyn_buses.iter().map(|&i| net.bus_ids[i]).collect();
        s.gen_freq = gen_freq;
        let bmap = net.injection_map();
        s.b_ch = s.channel_bus.iter().map(|&b| bmap.column(b).iter().copied().collect()).collect();
        s.plant = Plant::Nonlinear { p_nom: net.p_nominal.clone(), net, dyn_buses };
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn freq_labels(&self) -> &[i64] {
        &self.freq_labels
    }
    /// Bus id of each control channel.
    pub fn channel_labels(&self) -> &[i64] {
        &self.channel_labels
    }

    fn initial(&self, init: &InitialState) -> Result<Vec<T>> {
        let dev: Vec<T> = match init {
            InitialState::Zero => vec![T::zero(); self.n],
            InitialState::Unit => vec![T::one() / T::from_usize(self.n).unwrap().sqrt(); self.n],
            InitialState::Explicit(v) => {
                if v.len() != self.n {
                    return Err(Error::Dimension(format!("initial state has {} entries, model has {} states", v.len(), self.n)));
                }
                v.iter().map(|x| T::lit(*x)).collect()
            }
        };
        Ok(dev.iter().zip(&self.origin).map(|(d, o)| *d + *o).collect())
    }

    /// Event schedule as (step, bus index, injection change), in step order.
    fn schedule(&self, cfg: &SimConfig) -> Result<Vec<(usize, usize, T)>> {
        let mut v = cfg
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let b = self.bus_ids.iter().position(|id| *id == e.bus).ok_or_else(|| Error::invalid(format!("events[{i}].bus"), format!("unknown bus {}", e.bus)))?;
                Ok(((e.time / cfg.dt).round() as usize, b, T::lit(e.injection())))
            })
            .collect::<Result<Vec<_>>>()?;
        v.sort_by_key(|e| e.0);
        Ok(v)
    }
}

/// Everything recorded along one path.
struct PathRecord {
    dev_sq: Vec<f64>,
    freq: Vec<Vec<f64>>,
    control: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    terminal: Vec<f64>,
    nadir: f64,
    zenith: f64,
    truncated_at: Option<usize>,
}

struct Workspace<T> {
    z: Vec<T>,
    znew: Vec<T>,
    u: Vec<T>,
    dp: Vec<T>,
    forcing: Vec<T>,
    p: Vec<T>,
    rates: Vec<T>,
    freq: Vec<T>,
}

impl<T: Real> SimModel<T> {
    fn control(&self, z: &[T], u: &mut [T]) {
        let n = self.n;
        for (i, ui) in u.iter_mut().enumerate() {
            let row = &self.c[i * n..(i + 1) * n];
            let mut acc = T::zero();
            for k in 0..n {
                acc += row[k] * (z[k] - self.u_ref[k]);
            }
            *ui = acc;
        }
    }

    /// Drift into `w.znew` (as `z + dt·f`); fills `w.rates` in the nonlinear case.
    fn drift_step(&self, w: &mut Workspace<T>, dt: T) {
        let n = self.n;
        match &self.plant {
            Plant::Linear { a, .. } => {
                for r in 0..n {
                    let row = &a[r * n..(r + 1) * n];
                    let mut acc = w.forcing[r];
                    for k in 0..n {
                        acc += row[k] * w.z[k];
                    }
                    w.znew[r] = w.z[r] + dt * acc;
                }
            }
            Plant::Nonlinear { net, p_nom, .. } => {
                for b in 0..self.nb {
                    w.p[b] = p_nom[b] + w.dp[b];
                }
                for (i, &b) in self.channel_bus.iter().enumerate() {
                    w.p[b] += self.p_in0[i] - w.u[i];
                }
                let (f, rates) = net.rhs_with_rates(&w.z, &w.p);
                for r in 0..n {
                    w.znew[r] = w.z[r] + dt * f[r];
                }
                w.rates = rates;
            }
        }
    }

    /// Bus frequencies at the current state into `w.freq`; only generator rows when `gens_only`.
    fn frequencies(&self, w: &mut Workspace<T>, gens_only: bool) {
        match &self.plant {
            Plant::Linear { fmap, fbus, .. } => {
                let (n, nb) = (self.n, self.nb);
                let row_val = |r: usize| {
                    let mut acc = T::zero();
                    for k in 0..n {
                        acc += fmap[r * n + k] * (w.z[k] - self.u_ref[k]);
                    }
                    for b in 0..nb {
                        if w.dp[b] != T::zero() {
                            acc += fbus[r * nb + b] * w.dp[b];
                        }
                    }
                    for (i, &b) in self.channel_bus.iter().enumerate() {
                        acc += fbus[r * nb + b] * (self.p_in0[i] - w.u[i]);
                    }
                    acc
                };
                if gens_only {
                    for &r in &self.gen_freq {
                        w.freq[r] = row_val(r);
                    }
                } else {
                    for r in 0..w.freq.len() {
                        w.freq[r] = row_val(r);
                    }
                }
            }
            Plant::Nonlinear { dyn_buses, .. } => {
                for (r, &b) in dyn_buses.iter().enumerate() {
                    w.freq[r] = w.rates[b];
                }
            }
        }
    }

    fn apply_event(&self, w: &mut Workspace<T>, bus: usize, dp: T) {
        w.dp[bus] += dp;
        if let Plant::Linear { b_bus, .. } = &self.plant {
            for r in 0..self.n {
                w.forcing[r] += b_bus[r * self.nb + bus] * dp;
            }
        }
    }

    fn run_path(&self, cfg: &SimConfig, events: &[(usize, usize, T)], rec: &[usize], path: usize, keep_states: bool) -> Result<PathRecord> {
        let (n, m) = (self.n, self.m);
        let k = self.freq_labels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path as u64);
        let dt = T::lit(cfg.dt);
        let sdt = cfg.dt.sqrt();
        let mut w = Workspace {
            z: self.initial(&cfg.initial)?,
            znew: vec![T::zero(); n],
            u: vec![T::zero(); m],
            dp: vec![T::zero(); self.nb],
            forcing: vec![T::zero(); n],
            p: vec![T::zero(); self.nb],
            rates: vec![T::zero(); self.nb],
            freq: vec![T::zero(); k],
        };
        let mut out = PathRecord {
            dev_sq: Vec::with_capacity(rec.len()),
            freq: Vec::with_capacity(rec.len()),
            control: Vec::with_capacity(rec.len()),
            states: vec![],
            terminal: vec![],
            nadir: f64::INFINITY,
            zenith: f64::NEG_INFINITY,
            truncated_at: None,
        };
        let steps = *rec.last().unwrap();
        let mut next_ev = 0;
        let mut next_rec = 0;
        let nonlinear = matches!(self.plant, Plant::Nonlinear { .. });
        let mut dw = vec![0.0f64; m];
        let mut dz = vec![0.0f64; m];
        for step in 0..=steps {
            while next_ev < events.len() && events[next_ev].0 <= step {
                let (_, b, v) = events[next_ev];
                self.apply_event(&mut w, b, v);
                next_ev += 1;
            }
            self.control(&w.z, &mut w.u);
            // the drift also yields the nonlinear bus rates used for frequencies
            self.drift_step(&mut w, dt);
            let recording = next_rec < rec.len() && rec[next_rec] == step;
            self.frequencies(&mut w, !recording && !nonlinear);
            for &r in &self.gen_freq {
                let f = w.freq[r].to_f();
                out.nadir = out.nadir.min(f);
                out.zenith = out.zenith.max(f);
            }
            if recording {
                out.dev_sq.push(w.z.iter().zip(&self.origin).map(|(a, o)| (*a - *o).to_f().powi(2)).sum());
                out.freq.push(w.freq.iter().map(|v| v.to_f()).collect());
                out.control.push(w.u.iter().map(|v| v.to_f()).collect());
                if keep_states {
                    out.states.push(w.z.iter().zip(&self.origin).map(|(a, o)| (*a - *o).to_f()).collect());
                }
                next_rec += 1;
            }
            if step == steps {
                break;
            }
            for v in dw.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = g * sdt;
            }
            if cfg.additive {
                for v in dz.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *v = g * sdt;
                }
            }
            if cfg.multiplicative {
                for i in 0..m {
                    if self.sigma[i] != T::zero() && w.u[i] != T::zero() {
                        let coef = self.sigma[i] * w.u[i] * T::lit(dw[i]);
                        for (zr, br) in w.znew.iter_mut().zip(&self.b_ch[i]) {
                            *zr += coef * *br;
                        }
                    }
                }
            }
            if cfg.additive {
                for i in 0..m {
                    if self.additive[i] {
                        let coef = self.additive_scale * T::lit(dz[i]);
                        for (zr, br) in w.znew.iter_mut().zip(&self.b_ch[i]) {
                            *zr += coef * *br;
                        }
                    }
                }
            }
            std::mem::swap(&mut w.z, &mut w.znew);
            let bad = w.z.iter().any(|v| !v.is_finite_val() || v.to_f().abs() > BLOWUP);
            if bad {
                out.truncated_at = Some(step + 1);
                break;
            }
        }
        out.terminal = w.z.iter().zip(&self.origin).map(|(a, o)| (*a - *o).to_f()).collect();
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// deviation from the equilibrium (shifted coordinates in the linear case)
    pub states: Vec<Vec<f64>>,
    /// bus frequency deviations (rad/s), columns as `freq_labels`
    pub frequencies: Vec<Vec<f64>>,
    pub freq_labels: Vec<i64>,
    /// deterministic control action `K0 C0 Δx` per channel
    pub control: Vec<Vec<f64>>,
    pub truncated: bool,
    pub truncated_at: Option<f64>,
}

fn check_path_model<T: Real>(model: &SimModel<T>, cfg: &SimConfig) -> Result<()> {
    cfg.validate()?;
    if let InitialState::Explicit(v) = &cfg.initial {
        if v.len() != model.n {
            return Err(Error::Dimension(format!("initial state has {} entries, model has {} states", v.len(), model.n)));
        }
    }
    Ok(())
}

/// One Euler–Maruyama path on the output grid of `cfg`.
pub fn simulate_path<T: Real>(model: &SimModel<T>, cfg: &SimConfig, path_index: usize) -> Result<Trajectory> {
    check_path_model(model, cfg)?;
    if path_index >= cfg.paths {
        return Err(Error::invalid("path_index", format!("{path_index} not below paths = {}", cfg.paths)));
    }
    let events = model.schedule(cfg)?;
    let rec = cfg.record_steps();
    let r = model.run_path(cfg, &events, &rec, path_index, true)?;
    let len = r.dev_sq.len();
    Ok(Trajectory {
        times: rec[..len].iter().map(|&k| k as f64 * cfg.dt).collect(),
        states: r.states,
        frequencies: r.freq,
        freq_labels: model.freq_labels.clone(),
        control: r.control,
        truncated: r.truncated_at.is_some(),
        truncated_at: r.truncated_at.map(|k| k as f64 * cfg.dt),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// empirical `E‖z(t)‖²`
    pub mean_sq: Vec<f64>,
    /// sample standard deviation over `√count`
    pub stderr: Vec<f64>,
    /// paths still running at each time
    pub counts: Vec<usize>,
    pub paths: usize,
    pub truncated_paths: usize,
    pub initial_mean_sq: f64,
    /// mean square grew past 10× its reference level, or a path was truncated
    pub unstable: bool,
    pub freq_labels: Vec<i64>,
    /// per-bus frequency variance (rad/s)² over the stationary window
    pub freq_variance: Vec<f64>,
    /// generator frequency samples from the stationary window
    #[serde(skip)]
    pub freq_samples: Vec<f64>,
    pub samples_per_path: usize,
    /// per-path extremes of the generator frequencies (rad/s)
    pub nadir: Vec<f64>,
    pub zenith: Vec<f64>,
    pub channel_labels: Vec<i64>,
    /// `|ΔP_cd|` samples per channel
    #[serde(skip)]
    pub control_samples: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Vec<Vec<f64>>>,
}

impl EnsembleStats {
    /// `time,mean_sq,stderr` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mean_sq,stderr\n");
        for i in 0..self.times.len() {
            let _ = writeln!(s, "{},{:e},{:e}", self.times[i], self.mean_sq[i], self.stderr[i]);
        }
        s
    }
    pub fn terminal_mean_sq(&self) -> f64 {
        *self.mean_sq.last().unwrap_or(&f64::NAN)
    }
}

struct Acc {
    s1: Vec<KahanSum>,
    s2: Vec<KahanSum>,
    cnt: Vec<usize>,
    f1: Vec<KahanSum>,
    f2: Vec<KahanSum>,
    fcnt: usize,
    samples: Vec<f64>,
    ctrl: Vec<Vec<f64>>,
    nadir: Vec<f64>,
    zenith: Vec<f64>,
    truncated: usize,
    terminal: Vec<Vec<f64>>,
}

impl Acc {
    fn new(nrec: usize, k: usize, m: usize) -> Self {
        Self {
            s1: vec![KahanSum::default(); nrec],
            s2: vec![KahanSum::default(); nrec],
            cnt: vec![0; nrec],
            f1: vec![KahanSum::default(); k],
            f2: vec![KahanSum::default(); k],
            fcnt: 0,
            samples: vec![],
            ctrl: vec![vec![]; m],
            nadir: vec![],
            zenith: vec![],
            truncated: 0,
            terminal: vec![],
        }
    }

    fn merge(&mut self, o: Acc) {
        for i in 0..self.s1.len() {
            self.s1[i].merge(&o.s1[i]);
            self.s2[i].merge(&o.s2[i]);
            self.cnt[i] += o.cnt[i];
        }
        for i in 0..self.f1.len() {
            self.f1[i].merge(&o.f1[i]);
            self.f2[i].merge(&o.f2[i]);
        }
        self.fcnt += o.fcnt;
        self.samples.extend(o.samples);
        for (a, b) in self.ctrl.iter_mut().zip(o.ctrl) {
            a.extend(b);
        }
        self.nadir.extend(o.nadir);
        self.zenith.extend(o.zenith);
        self.truncated += o.truncated;
        self.terminal.extend(o.terminal);
    }
}

fn strided(idx: impl Iterator<Item = usize>, cap: usize) -> Vec<usize> {
    let v: Vec<usize> = idx.collect();
    let stride = v.len().div_ceil(cap).max(1);
    v.into_iter().step_by(stride).collect()
}

/// Monte Carlo ensemble; identical output for any thread count.
pub fn simulate_ensemble<T: Real>(model: &SimModel<T>, cfg: &SimConfig) -> Result<EnsembleStats> {
    check_path_model(model, cfg)?;
    let events = model.schedule(cfg)?;
    let rec = cfg.record_steps();
    let nrec = rec.len();
    let k = model.freq_labels.len();
    let m = model.m;
    let t_start = (1.0 - cfg.stationary_fraction) * cfg.horizon - 1e-9 * cfg.horizon;
    let window: Vec<usize> = (0..nrec).filter(|&i| rec[i] as f64 * cfg.dt >= t_start).collect();
    let hist_idx = strided(window.iter().copied(), cfg.samples_per_path);
    let ctrl_idx = strided(0..nrec, cfg.samples_per_path);
    let nblocks = cfg.paths.div_ceil(BLOCK);

    let blocks: Vec<Result<Acc>> = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = Acc::new(nrec, k, m);
            for path in b * BLOCK..((b + 1) * BLOCK).min(cfg.paths) {
                let r = model.run_path(cfg, &events, &rec, path, false)?;
                for (i, v) in r.dev_sq.iter().enumerate() {
                    acc.s1[i].add(*v);
                    acc.s2[i].add(v * v);
                    acc.cnt[i] += 1;
                }
                let len = r.dev_sq.len();
                for &i in window.iter().filter(|&&i| i < len) {
                    for (j, f) in r.freq[i].iter().enumerate() {
                        acc.f1[j].add(*f);
                        acc.f2[j].add(f * f);
                    }
                    acc.fcnt += 1;
                }
                for &i in hist_idx.iter().filter(|&&i| i < len) {
                    acc.samples.extend(model.gen_freq.iter().map(|&g| r.freq[i][g]));
                }
                for &i in ctrl_idx.iter().filter(|&&i| i < len) {
                    for (c, v) in r.control[i].iter().enumerate() {
                        acc.ctrl[c].push(v.abs());
                    }
                }
                acc.nadir.push(r.nadir);
                acc.zenith.push(r.zenith);
                if r.truncated_at.is_some() {
                    acc.truncated += 1;
                }
                if cfg.keep_terminal && r.truncated_at.is_none() {
                    acc.terminal.push(r.terminal);
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = Acc::new(nrec, k, m);
    for b in blocks {
        total.merge(b?);
    }
    let mut mean_sq = vec![0.0; nrec];
    let mut stderr = vec![0.0; nrec];
    for i in 0..nrec {
        let c = total.cnt[i] as f64;
        if c == 0.0 {
            mean_sq[i] = f64::NAN;
            stderr[i] = f64::NAN;
            continue;
        }
        let mean = total.s1[i].value() / c;
        mean_sq[i] = mean;
        stderr[i] = if c > 1.0 { ((total.s2[i].value() - c * mean * mean).max(0.0) / (c - 1.0) / c).sqrt() } else { 0.0 };
    }
    let freq_variance = (0..k)
        .map(|j| {
            let c = total.fcnt as f64;
            if c == 0.0 {
                return 0.0;
            }
            let mu = total.f1[j].value() / c;
            (total.f2[j].value() / c - mu * mu).max(0.0)
        })
        .collect();
    let initial = mean_sq[0];
    let unstable = total.truncated > 0 || growth_flag(&rec, cfg, &mean_sq, initial);
    Ok(EnsembleStats {
        times: rec.iter().map(|&s| s as f64 * cfg.dt).collect(),
        mean_sq,
        stderr,
        counts: total.cnt,
        paths: cfg.paths,
        truncated_paths: total.truncated,
        initial_mean_sq: initial,
        unstable,
        freq_labels: model.freq_labels.clone(),
        freq_variance,
        freq_samples: total.samples,
        samples_per_path: hist_idx.len() * model.gen_freq.len(),
        nadir: total.nadir,
        zenith: total.zenith,
        channel_labels: model.channel_labels.clone(),
        control_samples: total.ctrl,
        terminal: cfg.keep_terminal.then_some(total.terminal),
    })
}

/// Mean square exceeding 10× the initial one at some recorded time. From rest the
/// reference is the level over (0.2T, 0.4T] and only later times are compared.
fn growth_flag(rec: &[usize], cfg: &SimConfig, mean_sq: &[f64], initial: f64) -> bool {
    if mean_sq.iter().any(|v| v.is_nan()) {
        return true;
    }
    let time = |i: usize| rec[i] as f64 * cfg.dt;
    let (reference, from) = if initial > 0.0 {
        (initial, 0.0)
    } else {
        let sel: Vec<f64> = (0..rec.len()).filter(|&i| time(i) > 0.2 * cfg.horizon && time(i) <= 0.4 * cfg.horizon).map(|i| mean_sq[i]).collect();
        if sel.is_empty() {
            return false;
        }
        (sel.iter().sum::<f64>() / sel.len() as f64, 0.4 * cfg.horizon)
    };
    reference > 0.0 && (0..rec.len()).any(|i| time(i) > from && mean_sq[i] > 10.0 * reference)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// counts normalized to unit area
    pub density: Vec<f64>,
    pub total: usize,
    pub mean: f64,
    pub variance: f64,
    /// fourth standardized moment minus 3; zero for a degenerate sample
    pub excess_kurtosis: f64,
}

pub fn excess_kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (KahanSum::default(), KahanSum::default());
    for x in v {
        let d = x - mean;
        m2.add(d * d);
        m4.add(d * d * d * d);
    }
    let (m2, m4) = (m2.value() / n, m4.value() / n);
    if m2 <= 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}

/// Normalized histogram of the generator frequency samples.
pub fn frequency_distribution(stats: &EnsembleStats, bins: usize) -> Result<FrequencyHistogram> {
    histogram(&stats.freq_samples, bins)
}

pub fn histogram(v: &[f64], bins: usize) -> Result<FrequencyHistogram> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    if v.is_empty() {
        return Err(Error::Precondition("empty frequency sample set".into()));
    }
    let lo = v.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    let hi = v.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for x in v {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total = v.len();
    let mean = v.iter().sum::<f64>() / total as f64;
    let variance = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / total as f64;
    Ok(FrequencyHistogram {
        edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
        density: counts.iter().map(|&c| c as f64 / (total as f64 * width)).collect(),
        counts,
        total,
        mean,
        variance,
        excess_kurtosis: excess_kurtosis(v),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChannelPower {
    pub bus: i64,
    pub mean_abs: f64,
    pub p95_abs: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ControllerSummary {
    /// mean over paths of the lowest generator frequency deviation (rad/s)
    pub nadir_mean: f64,
    pub nadir_worst: f64,
    pub zenith_mean: f64,
    pub zenith_worst: f64,
    pub nadir_hz: f64,
    pub zenith_hz: f64,
    pub control: Vec<ChannelPower>,
    pub support: Vec<usize>,
    pub engaged_fraction: f64,
    pub terminal_mean_sq: f64,
    pub truncated_paths: usize,
    pub unstable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CompareReport {
    pub a: ControllerSummary,
    pub b: ControllerSummary,
}

fn percentile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)]
}

pub fn summarize<T: Real>(stats: &EnsembleStats, k0: &DMatrix<T>) -> ControllerSummary {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let support = row_support(k0, 1e-6);
    let nadir_mean = mean(&stats.nadir);
    let zenith_mean = mean(&stats.zenith);
    ControllerSummary {
        nadir_mean,
        nadir_worst: stats.nadir.iter().fold(f64::INFINITY, |a, b| a.min(*b)),
        zenith_mean,
        zenith_worst: stats.zenith.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)),
        nadir_hz: to_hz(nadir_mean),
        zenith_hz: to_hz(zenith_mean),
        control: stats
            .control_samples
            .iter()
            .zip(&stats.channel_labels)
            .map(|(s, &bus)| ChannelPower {
                bus,
                mean_abs: mean(s),
                p95_abs: percentile(s, 0.95),
                max_abs: s.iter().fold(0.0, |a, b| a.max(*b)),
            })
            .collect(),
        engaged_fraction: support.len() as f64 / k0.nrows().max(1) as f64,
        support,
        terminal_mean_sq: stats.terminal_mean_sq(),
        truncated_paths: stats.truncated_paths,
        unstable: stats.unstable,
    }
}

/// Both gains on the same plant with the same noise streams.
pub fn compare_controllers<T: Real>(
    model: &LinearModel<T>,
    k_a: &DMatrix<T>,
    k_b: &DMatrix<T>,
    spec: &UncertaintySpec<T>,
    cfg: &SimConfig,
    plant: Option<(&NetworkCase, &EquilibriumPoint<T>)>,
) -> Result<CompareReport> {
    let run = |k: &DMatrix<T>| -> Result<ControllerSummary> {
        let cl = assemble_closed_loop(model, k, spec, &vec![T::zero(); model.m()])?;
        let sim = SimModel::build(cfg.source, &cl, plant)?;
        let stats = simulate_ensemble(&sim, cfg)?;
        Ok(summarize(&stats, k))
    };
    Ok(CompareReport { a: run(k_a)?, b: run(k_b)? })
}
