//! JSON files exchanged by the command-line tool.
//!
//! Matrices are nested row-major arrays with explicit row and column labels.
//! Non-finite numbers (unbounded σ*) are written as `null`.

use crate::error::{Error, Result};
use crate::netmodel::{LinearModel, NetworkCase};
use crate::synth::{SynthPath, SynthesisResult, SynthesisWeights};
use conic::{Real, Status};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_FORMAT: &str = "gridctl-model/1";
pub const GAIN_FORMAT: &str = "gridctl-gain/1";
pub const CERTIFICATE_FORMAT: &str = "gridctl-certificate/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn new<T: Real>(m: &DMatrix<T>, rows: Vec<String>, cols: Vec<String>) -> Self {
        Self { data: (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.to_f()).collect()).collect(), rows, cols }
    }

    /// Matrix with numbered labels.
    pub fn plain<T: Real>(m: &DMatrix<T>) -> Self {
        Self::new(m, (0..m.nrows()).map(|i| i.to_string()).collect(), (0..m.ncols()).map(|i| i.to_string()).collect())
    }

    pub fn to_matrix<T: Real>(&self, what: &str) -> Result<DMatrix<T>> {
        let (r, c) = (self.rows.len(), self.cols.len());
        if self.data.len() != r {
            return Err(Error::invalid(format!("{what}.data"), format!("{} rows, {} row labels", self.data.len(), r)));
        }
        if let Some(i) = self.data.iter().position(|row| row.len() != c) {
            return Err(Error::invalid(format!("{what}.data[{i}]"), format!("expected {c} entries")));
        }
        if self.data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{what}.data"), "entries must be finite"));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| T::lit(self.data[i][j])))
    }
}

fn labels(v: &[i64]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn parse_labels(v: &[String], what: &str) -> Result<Vec<i64>> {
    v.iter().map(|s| s.parse().map_err(|_| Error::invalid(what, format!("label '{s}' is not a bus id")))).collect()
}

/// Linearized plant `(A0, B0, C0)` with the metadata simulation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub a0: LabeledMatrix,
    pub b0: LabeledMatrix,
    pub c0: LabeledMatrix,
    /// injection map for every bus, columns are bus ids
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_bus: Option<LabeledMatrix>,
    /// bus frequencies from state deviations, rows are bus ids
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_map: Option<LabeledMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_bus: Option<LabeledMatrix>,
    /// rows of `freq_map` holding generator frequencies
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_freq: Option<Vec<usize>>,
}

impl ModelFile {
    pub fn from_model<T: Real>(m: &LinearModel<T>) -> Self {
        let st = m.state_labels.clone();
        let inj = labels(&m.injection_labels);
        let buses = labels(&m.bus_ids);
        let fl = labels(&m.freq_labels);
        Self {
            format: MODEL_FORMAT.into(),
            a0: LabeledMatrix::new(&m.a0, st.clone(), st.clone()),
            b0: LabeledMatrix::new(&m.b0, st.clone(), inj),
            c0: LabeledMatrix::new(&m.c0, m.measurement_labels.clone(), st.clone()),
            b_bus: Some(LabeledMatrix::new(&m.b_bus, st.clone(), buses.clone())),
            freq_map: Some(LabeledMatrix::new(&m.freq_map, fl.clone(), st)),
            freq_bus: Some(LabeledMatrix::new(&m.freq_bus, fl, buses)),
            gen_freq: Some(m.gen_freq.clone()),
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<LinearModel<T>> {
        if self.format != MODEL_FORMAT {
            return Err(Error::invalid("format", format!("expected '{MODEL_FORMAT}', found '{}'", self.format)));
        }
        let a0 = self.a0.to_matrix("a0")?;
        let b0 = self.b0.to_matrix("b0")?;
        let c0 = self.c0.to_matrix("c0")?;
        let mut m = LinearModel::from_matrices(a0, b0, c0)?;
        m.state_labels = self.a0.rows.clone();
        m.measurement_labels = self.c0.rows.clone();
        let network = (&self.b_bus, &self.freq_map, &self.freq_bus, &self.gen_freq);
        match network {
            (Some(bb), Some(fm), Some(fb), Some(gf)) => {
                m.injection_labels = parse_labels(&self.b0.cols, "b0.cols")?;
                m.b_bus = bb.to_matrix("b_bus")?;
                m.bus_ids = parse_labels(&bb.cols, "b_bus.cols")?;
                m.freq_map = fm.to_matrix("freq_map")?;
                m.freq_bus = fb.to_matrix("freq_bus")?;
                m.freq_labels = parse_labels(&fm.rows, "freq_map.rows")?;
                m.gen_freq = gf.clone();
                let (n, nb, k) = (m.n(), m.bus_ids.len(), m.freq_labels.len());
                if m.b_bus.nrows() != n || m.freq_map.ncols() != n || m.freq_bus.shape() != (k, nb) {
                    return Err(Error::Dimension("network metadata does not match the model".into()));
                }
                if let Some(&g) = m.gen_freq.iter().find(|&&g| g >= k) {
                    return Err(Error::invalid("gen_freq", format!("row {g} out of range")));
                }
                m.channel_buses()?;
            }
            (None, None, None, None) => {}
            _ => return Err(Error::invalid("model", "b_bus, freq_map, freq_bus and gen_freq go together")),
        }
        Ok(m)
    }
}

/// Either input accepted by `--case`.
#[derive(Clone, Debug)]
pub enum Input {
    Case(NetworkCase),
    Model(ModelFile),
}

pub fn read_input(path: impl AsRef<Path>) -> Result<Input> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if v.get("a0").is_some() {
        let m: ModelFile = serde_json::from_value(v).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Ok(Input::Model(m))
    } else {
        Ok(Input::Case(NetworkCase::from_json(&text)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFile {
    pub format: String,
    /// rows are channel bus ids, columns measurement labels
    pub k0: LabeledMatrix,
    pub path: SynthPath,
    pub weights: SynthesisWeights,
    pub row_support: Vec<usize>,
}

impl GainFile {
    pub fn new<T: Real>(model: &LinearModel<T>, k0: &DMatrix<T>, path: SynthPath, weights: SynthesisWeights, row_support: Vec<usize>) -> Self {
        Self {
            format: GAIN_FORMAT.into(),
            k0: LabeledMatrix::new(k0, labels(&model.injection_labels), model.measurement_labels.clone()),
            path,
            weights,
            row_support,
        }
    }

    pub fn gain<T: Real>(&self, model: &LinearModel<T>) -> Result<DMatrix<T>> {
        if self.format != GAIN_FORMAT {
            return Err(Error::invalid("format", format!("expected '{GAIN_FORMAT}', found '{}'", self.format)));
        }
        let k = self.k0.to_matrix("k0")?;
        if k.shape() != (model.m(), model.s()) {
            return Err(Error::Dimension(format!("gain is {}x{}, model needs {}x{}", k.nrows(), k.ncols(), model.m(), model.s())));
        }
        Ok(k)
    }
}

fn opt_f<T: Real>(v: T) -> Option<f64> {
    let f = v.to_f();
    f.is_finite().then_some(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub format: String,
    pub path: SynthPath,
    pub status: Status,
    pub reduced_accuracy: bool,
    pub q_star: LabeledMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_star: Option<LabeledMatrix>,
    pub gamma1_star: Option<f64>,
    pub gamma2_star: f64,
    pub beta_star: Option<Vec<f64>>,
    /// per channel, `null` when the channel is inactive
    pub sigma_star: Vec<Option<f64>>,
    pub objective: f64,
    pub epsilon: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// mean-square verdict on the closed loop at 0.99·σ*, when checked
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mses_check: Option<bool>,
}

impl CertificateFile {
    pub fn new<T: Real>(model: &LinearModel<T>, r: &SynthesisResult<T>) -> Self {
        let st = model.state_labels.clone();
        Self {
            format: CERTIFICATE_FORMAT.into(),
            path: r.path,
            status: r.status,
            reduced_accuracy: r.reduced_accuracy,
            q_star: LabeledMatrix::new(&r.q_star, st.clone(), st.clone()),
            m_star: r.m_star.as_ref().map(|m| LabeledMatrix::new(m, labels(&model.injection_labels), st)),
            gamma1_star: r.gamma1_star.map(|v| v.to_f()),
            gamma2_star: r.gamma2_star.to_f(),
            beta_star: r.beta_star.as_ref().map(|b| b.iter().map(|v| v.to_f()).collect()),
            sigma_star: r.sigma_star.iter().map(|v| opt_f(*v)).collect(),
            objective: r.objective.to_f(),
            epsilon: r.epsilon.to_f(),
            primal_residual: r.primal_residual.to_f(),
            dual_residual: r.dual_residual.to_f(),
            gap: r.gap.to_f(),
            iterations: r.iterations,
            mses_check: None,
        }
    }
}

pub fn to_json_pretty<S: Serialize>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<D> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
