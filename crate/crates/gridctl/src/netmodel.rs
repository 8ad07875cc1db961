//! Network-preserving swing model: case data, equilibrium and linearization.
//!
//! Generator internal buses carry `M ω̇ + D δ̇ = P_g − P_e`, load buses carry
//! `D δ̇ = P_in − P_e`, and `P_e,i = Σ_j E_i E_j Y_ij cos(δ_i − δ_j − θ_ij)`.
//! A reference bus without a generator or load record is an infinite bus
//! (fixed angle, no dynamics). The state is `(ω_g for each generator,
//! δ_i − δ_R for each non-reference bus)`, both in bus order.

use crate::error::{Error, Result};
use crate::linalg::{max_real_eig, numerical_rank};
use conic::Real;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    #[serde(alias = "generator-internal")]
    Generator,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: i64,
    pub kind: BusKind,
    /// voltage magnitude E (p.u.)
    pub voltage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: i64,
    pub to: i64,
    /// admittance modulus (p.u.)
    pub y: f64,
    /// admittance angle (rad)
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: i64,
    pub inertia: f64,
    pub damping: f64,
    pub p_mech: f64,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: i64,
    /// frequency coefficient
    pub damping: f64,
    pub p_demand: f64,
    pub p_cd0: f64,
    pub p_ncd0: f64,
    /// whether the load is a control channel
    #[serde(default = "yes")]
    pub controllable: bool,
}

fn default_base() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub reference_bus: i64,
}

pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    NetworkCase::from_json(&text)
}

impl NetworkCase {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: NetworkCase = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let mut kinds = BTreeMap::new();
        for (k, b) in self.buses.iter().enumerate() {
            if kinds.insert(b.id, b.kind).is_some() {
                return Err(Error::invalid(format!("buses[{k}].id"), format!("duplicate bus id {}", b.id)));
            }
            if !(b.voltage > 0.0 && b.voltage.is_finite()) {
                return Err(Error::invalid(format!("buses[{k}].voltage"), "must be positive"));
            }
        }
        if !kinds.contains_key(&self.reference_bus) {
            return Err(Error::invalid("reference_bus", format!("bus {} does not exist", self.reference_bus)));
        }
        let mut has_dyn = BTreeMap::new();
        for (k, g) in self.generators.iter().enumerate() {
            let p = |f: &str| format!("generators[{k}].{f}");
            match kinds.get(&g.bus) {
                None => return Err(Error::invalid(p("bus"), format!("bus {} does not exist", g.bus))),
                Some(BusKind::Load) => {
                    return Err(Error::invalid(p("bus"), format!("bus {} is a load bus; generator and load sets must be disjoint", g.bus)))
                }
                _ => {}
            }
            if !(g.inertia > 0.0 && g.inertia.is_finite()) {
                return Err(Error::invalid(p("inertia"), format!("generator at bus {} needs M > 0, got {}", g.bus, g.inertia)));
            }
            if !(g.damping > 0.0 && g.damping.is_finite()) {
                return Err(Error::invalid(p("damping"), format!("generator at bus {} needs D > 0, got {}", g.bus, g.damping)));
            }
            if !g.p_mech.is_finite() {
                return Err(Error::invalid(p("p_mech"), "not finite"));
            }
            if has_dyn.insert(g.bus, ()).is_some() {
                return Err(Error::invalid(p("bus"), format!("bus {} has more than one dynamic record", g.bus)));
            }
        }
        for (k, l) in self.loads.iter().enumerate() {
            let p = |f: &str| format!("loads[{k}].{f}");
            match kinds.get(&l.bus) {
                None => return Err(Error::invalid(p("bus"), format!("bus {} does not exist", l.bus))),
                Some(BusKind::Generator) => {
                    return Err(Error::invalid(p("bus"), format!("bus {} is a generator bus; generator and load sets must be disjoint", l.bus)))
                }
                _ => {}
            }
            if !(l.damping > 0.0 && l.damping.is_finite()) {
                return Err(Error::invalid(p("damping"), format!("load at bus {} needs D > 0, got {}", l.bus, l.damping)));
            }
            let sum = l.p_cd0 + l.p_ncd0;
            if !(l.p_demand.is_finite() && sum.is_finite()) || (l.p_demand - sum).abs() > 1e-9 * l.p_demand.abs().max(1.0) {
                return Err(Error::invalid(p("p_demand"), format!("p_demand {} != p_cd0 + p_ncd0 = {}", l.p_demand, sum)));
            }
            if has_dyn.insert(l.bus, ()).is_some() {
                return Err(Error::invalid(p("bus"), format!("bus {} has more than one dynamic record", l.bus)));
            }
        }
        for (k, b) in self.buses.iter().enumerate() {
            if b.id != self.reference_bus && !has_dyn.contains_key(&b.id) {
                return Err(Error::invalid(format!("buses[{k}]"), format!("bus {} has no generator or load record", b.id)));
            }
        }
        let mut pairs = BTreeMap::new();
        for (k, l) in self.lines.iter().enumerate() {
            for (f, id) in [("from", l.from), ("to", l.to)] {
                if !kinds.contains_key(&id) {
                    return Err(Error::invalid(format!("lines[{k}].{f}"), format!("bus {id} does not exist")));
                }
            }
            if !(l.y >= 0.0 && l.y.is_finite() && l.theta.is_finite()) {
                return Err(Error::invalid(format!("lines[{k}].y"), "admittance must be finite and non-negative"));
            }
            if pairs.insert((l.from, l.to), (l.y, l.theta)).is_some() {
                return Err(Error::invalid(format!("lines[{k}]"), format!("duplicate entry ({}, {})", l.from, l.to)));
            }
        }
        for (k, l) in self.lines.iter().enumerate() {
            match pairs.get(&(l.to, l.from)) {
                Some(&(y, th)) if (y - l.y).abs() <= 1e-12 * y.abs().max(1.0) && (th - l.theta).abs() <= 1e-12 => {}
                Some(_) => return Err(Error::invalid(format!("lines[{k}]"), format!("entry ({}, {}) differs from its reverse", l.from, l.to))),
                None => return Err(Error::invalid(format!("lines[{k}]"), format!("missing reverse entry ({}, {})", l.to, l.from))),
            }
        }
        Ok(())
    }

    /// Nominal bus injection `P_g − P_d`, in bus order.
    pub fn nominal_injection<T: Real>(&self) -> Vec<T> {
        let net = Network::<T>::new(self);
        net.p_nominal.clone()
    }

    pub fn controllable_buses(&self) -> Vec<i64> {
        Network::<f64>::new(self).channels.iter().map(|&i| self.buses[i].id).collect()
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Dynamics<T> {
    Generator { m: T, d: T, state: usize },
    Load { d: T },
    Infinite,
}

/// Indexed form of a case used by all numerical routines.
#[derive(Clone, Debug)]
pub struct Network<T> {
    pub bus_ids: Vec<i64>,
    pub(crate) index: BTreeMap<i64, usize>,
    /// per bus: (neighbour, E_i E_j Y_ij, θ_ij)
    pub(crate) adj: Vec<Vec<(usize, T, T)>>,
    pub(crate) dynamics: Vec<Dynamics<T>>,
    /// generator bus indices in state order
    pub gens: Vec<usize>,
    pub reference: usize,
    /// bus index → angle state index
    pub(crate) angle_state: Vec<Option<usize>>,
    /// controllable load bus indices, in bus order
    pub channels: Vec<usize>,
    pub p_nominal: Vec<T>,
    pub p_cd0: Vec<T>,
}

impl<T: Real> Network<T> {
    /// Build from a validated case.
    pub fn new(case: &NetworkCase) -> Self {
        let nb = case.buses.len();
        let index: BTreeMap<i64, usize> = case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let e: Vec<T> = case.buses.iter().map(|b| T::lit(b.voltage)).collect();
        let mut adj = vec![vec![]; nb];
        for l in &case.lines {
            let (i, j) = (index[&l.from], index[&l.to]);
            adj[i].push((j, e[i] * e[j] * T::lit(l.y), T::lit(l.theta)));
        }
        let reference = index[&case.reference_bus];
        let mut dynamics = vec![Dynamics::Infinite; nb];
        let mut p_nominal = vec![T::zero(); nb];
        let mut p_cd0 = vec![T::zero(); nb];
        let mut load_ctrl = vec![false; nb];
        for l in &case.loads {
            let i = index[&l.bus];
            dynamics[i] = Dynamics::Load { d: T::lit(l.damping) };
            p_nominal[i] = -T::lit(l.p_demand);
            p_cd0[i] = T::lit(l.p_cd0);
            load_ctrl[i] = l.controllable;
        }
        let mut gen_rec = BTreeMap::new();
        for g in &case.generators {
            gen_rec.insert(index[&g.bus], g);
        }
        let gens: Vec<usize> = gen_rec.keys().copied().collect();
        for (k, &i) in gens.iter().enumerate() {
            let g = gen_rec[&i];
            dynamics[i] = Dynamics::Generator { m: T::lit(g.inertia), d: T::lit(g.damping), state: k };
            p_nominal[i] = T::lit(g.p_mech);
        }
        let ng = gens.len();
        let mut angle_state = vec![None; nb];
        let mut k = ng;
        for (i, slot) in angle_state.iter_mut().enumerate() {
            if i != reference {
                *slot = Some(k);
                k += 1;
            }
        }
        let channels = (0..nb).filter(|&i| load_ctrl[i]).collect();
        Self {
            bus_ids: case.buses.iter().map(|b| b.id).collect(),
            index,
            adj,
            dynamics,
            gens,
            reference,
            angle_state,
            channels,
            p_nominal,
            p_cd0,
        }
    }

    pub fn num_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn num_states(&self) -> usize {
        self.gens.len() + self.num_buses() - 1
    }

    pub fn bus_index(&self, id: i64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn pe(&self, delta: &[T]) -> Vec<T> {
        (0..self.num_buses())
            .map(|i| self.adj[i].iter().fold(T::zero(), |acc, &(j, k, th)| acc + k * (delta[i] - delta[j] - th).cos()))
            .collect()
    }

    /// ∂P_e,i/∂δ_j over all buses.
    pub fn pe_jacobian(&self, delta: &[T]) -> DMatrix<T> {
        let nb = self.num_buses();
        let mut j = DMatrix::zeros(nb, nb);
        for i in 0..nb {
            for &(k, c, th) in &self.adj[i] {
                if k == i {
                    continue;
                }
                let s = c * (delta[i] - delta[k] - th).sin();
                j[(i, k)] += s;
                j[(i, i)] -= s;
            }
        }
        j
    }

    /// Absolute bus angles from a state vector (reference angle zero).
    pub fn angles(&self, x: &[T]) -> Vec<T> {
        (0..self.num_buses()).map(|i| self.angle_state[i].map_or(T::zero(), |k| x[k])).collect()
    }

    /// Angle rates δ̇ for every bus.
    pub fn angle_rates(&self, x: &[T], pe: &[T], p_bus: &[T]) -> Vec<T> {
        (0..self.num_buses())
            .map(|i| match self.dynamics[i] {
                Dynamics::Generator { state, .. } => x[state],
                Dynamics::Load { d } => (p_bus[i] - pe[i]) / d,
                Dynamics::Infinite => T::zero(),
            })
            .collect()
    }

    /// Right-hand side of the reduced nonlinear model for bus injections `p_bus`.
    pub fn rhs(&self, x: &[T], p_bus: &[T]) -> Vec<T> {
        self.rhs_with_rates(x, p_bus).0
    }

    /// `rhs` together with every bus angle rate δ̇_i.
    pub fn rhs_with_rates(&self, x: &[T], p_bus: &[T]) -> (Vec<T>, Vec<T>) {
        let delta = self.angles(x);
        let pe = self.pe(&delta);
        let rates = self.angle_rates(x, &pe, p_bus);
        let mut f = vec![T::zero(); self.num_states()];
        for &i in &self.gens {
            if let Dynamics::Generator { m, d, state } = self.dynamics[i] {
                f[state] = (p_bus[i] - pe[i] - d * x[state]) / m;
            }
        }
        let rr = rates[self.reference];
        for i in 0..self.num_buses() {
            if let Some(k) = self.angle_state[i] {
                f[k] = rates[i] - rr;
            }
        }
        (f, rates)
    }

    /// Sensitivity of the state derivative to a unit injection at each bus (n × nb).
    pub fn injection_map(&self) -> DMatrix<T> {
        let n = self.num_states();
        let nb = self.num_buses();
        let mut b = DMatrix::zeros(n, nb);
        for i in 0..nb {
            match self.dynamics[i] {
                Dynamics::Generator { m, .. } => {
                    if let Dynamics::Generator { state, .. } = self.dynamics[i] {
                        b[(state, i)] = T::one() / m;
                    }
                }
                Dynamics::Load { d } => {
                    if i == self.reference {
                        for k in self.angle_state.iter().flatten() {
                            b[(*k, i)] -= T::one() / d;
                        }
                    } else {
                        b[(self.angle_state[i].unwrap(), i)] = T::one() / d;
                    }
                }
                Dynamics::Infinite => {}
            }
        }
        b
    }

    /// Jacobian of every bus angle rate δ̇_i with respect to the state (nb × n).
    pub fn rate_jacobian(&self, x: &[T]) -> DMatrix<T> {
        let n = self.num_states();
        let nb = self.num_buses();
        let jpe = self.pe_jacobian(&self.angles(x));
        let mut rate = DMatrix::zeros(nb, n);
        for i in 0..nb {
            match self.dynamics[i] {
                Dynamics::Generator { state, .. } => rate[(i, state)] = T::one(),
                Dynamics::Load { d } => {
                    for j in 0..nb {
                        if let Some(k) = self.angle_state[j] {
                            rate[(i, k)] = -jpe[(i, j)] / d;
                        }
                    }
                }
                Dynamics::Infinite => {}
            }
        }
        rate
    }

    /// Buses with dynamics (generators and loads), in bus order.
    pub fn dynamic_buses(&self) -> Vec<usize> {
        (0..self.num_buses()).filter(|&i| !matches!(self.dynamics[i], Dynamics::Infinite)).collect()
    }

    pub fn is_generator(&self, bus: usize) -> bool {
        matches!(self.dynamics[bus], Dynamics::Generator { .. })
    }

    /// Jacobian of `rhs` with respect to the state.
    pub fn state_jacobian(&self, x: &[T]) -> DMatrix<T> {
        let n = self.num_states();
        let nb = self.num_buses();
        let jpe = self.pe_jacobian(&self.angles(x));
        let rate = self.rate_jacobian(x);
        let mut a = DMatrix::zeros(n, n);
        for &i in &self.gens {
            if let Dynamics::Generator { m, d, state } = self.dynamics[i] {
                a[(state, state)] = -d / m;
                for j in 0..nb {
                    if let Some(k) = self.angle_state[j] {
                        a[(state, k)] = -jpe[(i, j)] / m;
                    }
                }
            }
        }
        let r = self.reference;
        for i in 0..nb {
            if let Some(k) = self.angle_state[i] {
                for c in 0..n {
                    a[(k, c)] = rate[(i, c)] - rate[(r, c)];
                }
            }
        }
        a
    }

    pub fn state_labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self.gens.iter().map(|&i| format!("omega_{}", self.bus_ids[i])).collect();
        let rid = self.bus_ids[self.reference];
        for i in 0..self.num_buses() {
            if self.angle_state[i].is_some() {
                v.push(format!("delta_{}-delta_{rid}", self.bus_ids[i]));
            }
        }
        v
    }

    /// Rows of the state that are generator frequencies or generator angles.
    pub fn generator_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.gens.len()).collect();
        for &i in &self.gens {
            if let Some(k) = self.angle_state[i] {
                rows.push(k);
            }
        }
        rows
    }
}

pub fn electrical_power<T: Real>(case: &NetworkCase, delta: &[T]) -> Result<Vec<T>> {
    if delta.len() != case.buses.len() {
        return Err(Error::Dimension(format!("{} angles for {} buses", delta.len(), case.buses.len())));
    }
    Ok(Network::<T>::new(case).pe(delta))
}

#[derive(Clone, Debug)]
pub struct EquilibriumPoint<T> {
    pub x_e: Vec<T>,
    pub residual_norm: T,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct EquilibriumOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50 }
    }
}

pub fn solve_equilibrium<T: Real>(case: &NetworkCase, p_in0: &[T]) -> Result<EquilibriumPoint<T>> {
    solve_equilibrium_with(case, p_in0, &EquilibriumOptions::default())
}

/// Full-step Newton on the non-reference angles from a flat start.
pub fn solve_equilibrium_with<T: Real>(case: &NetworkCase, p_in0: &[T], opt: &EquilibriumOptions) -> Result<EquilibriumPoint<T>> {
    let net = Network::<T>::new(case);
    let nb = net.num_buses();
    if p_in0.len() != nb {
        return Err(Error::Dimension(format!("{} injections for {nb} buses", p_in0.len())));
    }
    let free: Vec<usize> = (0..nb).filter(|&i| i != net.reference).collect();
    let mut delta = vec![T::zero(); nb];
    // f32 cannot reach the f64 default
    let tol = T::lit(opt.tol).max(T::lit(1e2) * T::machine_eps());
    let inf_norm = |v: &[T]| v.iter().fold(T::zero(), |a, b| a.max(b.abs()));
    let to_state = |delta: &[T]| {
        let mut x = vec![T::zero(); net.num_states()];
        for i in 0..nb {
            if let Some(k) = net.angle_state[i] {
                x[k] = delta[i];
            }
        }
        x
    };
    let mut iters = 0;
    loop {
        let x = to_state(&delta);
        let full = inf_norm(&net.rhs(&x, p_in0));
        if !full.is_finite_val() {
            return Err(Error::NoConvergence { iters, residual: f64::INFINITY });
        }
        if full <= tol {
            return Ok(EquilibriumPoint { x_e: x, residual_norm: full, iterations: iters });
        }
        if iters >= opt.max_iter {
            return Err(Error::NoConvergence { iters, residual: full.to_f() });
        }
        let pe = net.pe(&delta);
        let r: Vec<T> = free.iter().map(|&i| p_in0[i] - pe[i]).collect();
        let jpe = net.pe_jacobian(&delta);
        let j = DMatrix::from_fn(free.len(), free.len(), |a, b| jpe[(free[a], free[b])]);
        let rv = nalgebra::DVector::from_vec(r);
        let step = j.lu().solve(&rv).ok_or_else(|| Error::Numerical("singular power-flow Jacobian".into()))?;
        for (a, &i) in free.iter().enumerate() {
            delta[i] += step[a];
        }
        iters += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasSelection {
    Full,
    Generators,
    Rows(Vec<usize>),
}

impl FromStr for MeasSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "generators" => Ok(Self::Generators),
            _ => {
                let rows = s.strip_prefix("rows=").ok_or_else(|| Error::invalid("meas", format!("unknown selection '{s}'")))?;
                let v: std::result::Result<Vec<usize>, _> = rows.split(',').filter(|t| !t.is_empty()).map(|t| t.trim().parse()).collect();
                let v = v.map_err(|e| Error::invalid("meas", format!("bad row list '{rows}': {e}")))?;
                Ok(Self::Rows(v))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearModel<T> {
    pub a0: DMatrix<T>,
    pub b0: DMatrix<T>,
    pub c0: DMatrix<T>,
    pub state_labels: Vec<String>,
    /// bus id of each injection channel (column of `b0`)
    pub injection_labels: Vec<i64>,
    pub measurement_labels: Vec<String>,
    /// injection map for every bus, used for scenario events
    pub b_bus: DMatrix<T>,
    pub bus_ids: Vec<i64>,
    /// bus frequencies `F Δx + G Δp_bus` for every bus with dynamics
    pub freq_map: DMatrix<T>,
    pub freq_bus: DMatrix<T>,
    pub freq_labels: Vec<i64>,
    /// rows of `freq_map` belonging to generators
    pub gen_freq: Vec<usize>,
}

impl<T: Real> LinearModel<T> {
    pub fn n(&self) -> usize {
        self.a0.nrows()
    }
    pub fn m(&self) -> usize {
        self.b0.ncols()
    }
    pub fn s(&self) -> usize {
        self.c0.nrows()
    }

    /// Plain model from matrices, without network metadata.
    pub fn from_matrices(a0: DMatrix<T>, b0: DMatrix<T>, c0: DMatrix<T>) -> Result<Self> {
        let n = a0.nrows();
        if a0.ncols() != n || b0.nrows() != n || c0.ncols() != n {
            return Err(Error::Dimension(format!(
                "A0 {}x{}, B0 {}x{}, C0 {}x{}",
                a0.nrows(),
                a0.ncols(),
                b0.nrows(),
                b0.ncols(),
                c0.nrows(),
                c0.ncols()
            )));
        }
        let m = b0.ncols();
        Ok(Self {
            state_labels: (0..n).map(|i| format!("x{i}")).collect(),
            injection_labels: (0..m as i64).collect(),
            measurement_labels: (0..c0.nrows()).map(|i| format!("y{i}")).collect(),
            b_bus: b0.clone(),
            bus_ids: (0..m as i64).collect(),
            freq_map: DMatrix::identity(n, n),
            freq_bus: DMatrix::zeros(n, m),
            freq_labels: (0..n as i64).collect(),
            gen_freq: (0..n).collect(),
            a0,
            b0,
            c0,
        })
    }

    /// Position in `bus_ids` of each injection channel.
    pub fn channel_buses(&self) -> Result<Vec<usize>> {
        self.injection_labels
            .iter()
            .map(|id| {
                self.bus_ids.iter().position(|b| b == id).ok_or_else(|| Error::Inconsistent(format!("channel bus {id} missing from the bus list")))
            })
            .collect()
    }

    /// Same plant with a different measurement matrix.
    pub fn with_measurement(&self, c0: DMatrix<T>, labels: Vec<String>) -> Result<Self> {
        if c0.ncols() != self.n() || labels.len() != c0.nrows() {
            return Err(Error::Dimension("measurement matrix does not match the state".into()));
        }
        Ok(Self { c0, measurement_labels: labels, ..self.clone() })
    }
}

pub fn measurement_matrix<T: Real>(net: &Network<T>, labels: &[String], meas: &MeasSelection) -> Result<(DMatrix<T>, Vec<String>)> {
    let n = net.num_states();
    let rows: Vec<usize> = match meas {
        MeasSelection::Full => (0..n).collect(),
        MeasSelection::Generators => net.generator_rows(),
        MeasSelection::Rows(r) => {
            if let Some(bad) = r.iter().find(|&&k| k >= n) {
                return Err(Error::invalid("meas", format!("row {bad} out of range for {n} states")));
            }
            r.clone()
        }
    };
    if rows.is_empty() {
        return Err(Error::invalid("meas", "empty measurement selection"));
    }
    let mut c = DMatrix::zeros(rows.len(), n);
    for (a, &k) in rows.iter().enumerate() {
        c[(a, k)] = T::one();
    }
    Ok((c, rows.iter().map(|&k| labels[k].clone()).collect()))
}

pub fn linearize<T: Real>(case: &NetworkCase, eq: &EquilibriumPoint<T>, meas: &MeasSelection) -> Result<LinearModel<T>> {
    let net = Network::<T>::new(case);
    let n = net.num_states();
    if eq.x_e.len() != n {
        return Err(Error::Dimension(format!("equilibrium has {} entries, model has {n} states", eq.x_e.len())));
    }
    let resid = net.rhs(&eq.x_e, &net.p_nominal).iter().fold(T::zero(), |a, b| a.max(b.abs()));
    if resid > T::lit(1e-8).max(T::lit(1e3) * T::machine_eps()) {
        return Err(Error::Numerical(format!("equilibrium residual {:e} above tolerance", resid.to_f())));
    }
    let a0 = net.state_jacobian(&eq.x_e);
    let b_bus = net.injection_map();
    let b0 = DMatrix::from_fn(n, net.channels.len(), |r, c| b_bus[(r, net.channels[c])]);
    let labels = net.state_labels();
    let (c0, meas_labels) = measurement_matrix(&net, &labels, meas)?;
    let dynb = net.dynamic_buses();
    let rate = net.rate_jacobian(&eq.x_e);
    let freq_map = DMatrix::from_fn(dynb.len(), n, |r, c| rate[(dynb[r], c)]);
    let freq_bus = DMatrix::from_fn(dynb.len(), net.num_buses(), |r, c| match net.dynamics[dynb[r]] {
        Dynamics::Load { d } if c == dynb[r] => T::one() / d,
        _ => T::zero(),
    });
    Ok(LinearModel {
        freq_map,
        freq_bus,
        freq_labels: dynb.iter().map(|&i| net.bus_ids[i]).collect(),
        gen_freq: (0..dynb.len()).filter(|&r| net.is_generator(dynb[r])).collect(),
        a0,
        b0,
        c0,
        state_labels: labels,
        injection_labels: net.channels.iter().map(|&i| net.bus_ids[i]).collect(),
        measurement_labels: meas_labels,
        b_bus,
        bus_ids: net.bus_ids.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n: usize,
    pub hurwitz: bool,
    pub max_real_eig: f64,
    pub controllable: bool,
    pub controllability_rank: usize,
    pub observable: bool,
    pub observability_rank: usize,
    pub rank_c0: usize,
}

/// Krylov matrix `[X, MX, …, M^{n−1}X]` with each block normalized.
fn krylov<T: Real>(m: &DMatrix<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    let k = x.ncols();
    let mut out = DMatrix::zeros(n, n * k);
    let mut blk = x.clone();
    for p in 0..n {
        let s = blk.amax();
        if s > T::zero() {
            blk /= s;
        }
        out.view_mut((0, p * k), (n, k)).copy_from(&blk);
        blk = m * &blk;
    }
    out
}

pub fn check_assumptions<T: Real>(model: &LinearModel<T>) -> AssumptionReport {
    let n = model.n();
    let mre = max_real_eig(&model.a0);
    let crank = numerical_rank(&krylov(&model.a0, &model.b0));
    let orank = numerical_rank(&krylov(&model.a0.transpose(), &model.c0.transpose()));
    AssumptionReport {
        n,
        hurwitz: mre < T::zero(),
        max_real_eig: mre.to_f(),
        controllable: crank == n,
        controllability_rank: crank,
        observable: orank == n,
        observability_rank: orank,
        rank_c0: numerical_rank(&model.c0),
    }
}
