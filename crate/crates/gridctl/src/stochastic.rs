//! Closed-loop stochastic model `dx = (A x + B P_in0) dt + Σ σ_i B_i C_i x dW_i + B dζ`.

use crate::error::{Error, Result};
use crate::linalg::max_real_eig;
use crate::netmodel::LinearModel;
use conic::Real;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec<T> {
    /// multiplicative standard deviation per control channel
    pub sigma: Vec<T>,
    /// channels carrying additive noise η
    pub additive_channels: Vec<usize>,
    /// standard deviation of the additive noise
    pub additive_scale: T,
}

impl<T: Real> UncertaintySpec<T> {
    /// Multiplicative noise only.
    pub fn multiplicative(sigma: Vec<T>) -> Self {
        Self { sigma, additive_channels: vec![], additive_scale: T::zero() }
    }

    /// Multiplicative noise plus additive noise of size `scale` on every channel.
    pub fn with_additive_all(sigma: Vec<T>, scale: T) -> Self {
        let m = sigma.len();
        Self { sigma, additive_channels: (0..m).collect(), additive_scale: scale }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.sigma.len() != m {
            return Err(Error::Dimension(format!("sigma has {} entries for {m} channels", self.sigma.len())));
        }
        if let Some(i) = self.sigma.iter().position(|s| !(*s >= T::zero()) || !s.is_finite_val()) {
            return Err(Error::invalid(format!("sigma[{i}]"), "must be finite and non-negative"));
        }
        if let Some(&i) = self.additive_channels.iter().find(|&&i| i >= m) {
            return Err(Error::invalid("additive_channels", format!("channel {i} out of range for {m} channels")));
        }
        if !(self.additive_scale >= T::zero()) {
            return Err(Error::invalid("additive_scale", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoopModel<T> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub k0: DMatrix<T>,
    pub c0: DMatrix<T>,
    pub p_in0: DVector<T>,
    pub spec: UncertaintySpec<T>,
    /// bus frequencies `freq_map Δx + freq_bus Δp_bus`
    pub freq_map: DMatrix<T>,
    pub freq_bus: DMatrix<T>,
    pub freq_labels: Vec<i64>,
    pub gen_freq: Vec<usize>,
    /// bus index of each control channel
    pub channel_bus: Vec<usize>,
    /// injection map for every bus (events), with the matching bus ids
    pub b_bus: DMatrix<T>,
    pub bus_ids: Vec<i64>,
}

pub fn assemble_closed_loop<T: Real>(model: &LinearModel<T>, k0: &DMatrix<T>, spec: &UncertaintySpec<T>, p_in0: &[T]) -> Result<ClosedLoopModel<T>> {
    let (m, s) = (model.m(), model.s());
    if k0.nrows() != m || k0.ncols() != s {
        return Err(Error::Dimension(format!("gain is {}x{}, expected {m}x{s}", k0.nrows(), k0.ncols())));
    }
    if p_in0.len() != m {
        return Err(Error::Dimension(format!("P_in0 has {} entries for {m} channels", p_in0.len())));
    }
    spec.validate(m)?;
    let c = k0 * &model.c0;
    let a = &model.a0 - &model.b0 * &c;
    Ok(ClosedLoopModel {
        a,
        b: model.b0.clone(),
        c,
        k0: k0.clone(),
        c0: model.c0.clone(),
        p_in0: DVector::from_column_slice(p_in0),
        spec: spec.clone(),
        freq_map: model.freq_map.clone(),
        freq_bus: model.freq_bus.clone(),
        freq_labels: model.freq_labels.clone(),
        gen_freq: model.gen_freq.clone(),
        channel_bus: model.channel_buses()?,
        b_bus: model.b_bus.clone(),
        bus_ids: model.bus_ids.clone(),
    })
}

impl<T: Real> ClosedLoopModel<T> {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Same loop with a different uncertainty description.
    pub fn with_spec(&self, spec: UncertaintySpec<T>) -> Result<Self> {
        spec.validate(self.m())?;
        Ok(Self { spec, ..self.clone() })
    }
}

/// Rank-one noise channel `B_i C_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel<T: Real> {
    pub b: DVector<T>,
    pub c: DVector<T>,
    pub active: bool,
}

impl<T: Real> Channel<T> {
    pub fn new(b: DVector<T>, c: DVector<T>) -> Self {
        let active = b.iter().any(|v| *v != T::zero()) && c.iter().any(|v| *v != T::zero());
        Self { b, c, active }
    }
    /// `B_i C_i` as an n×n matrix.
    pub fn outer(&self) -> DMatrix<T> {
        &self.b * self.c.transpose()
    }
}

/// Column/row pairs of `B` and `C`; inactive when σ_i = 0 or either factor vanishes.
pub fn multiplicative_channels<T: Real>(cl: &ClosedLoopModel<T>) -> Vec<Channel<T>> {
    channels_from(&cl.b, &cl.c)
        .into_iter()
        .zip(&cl.spec.sigma)
        .map(|(mut ch, s)| {
            ch.active &= *s != T::zero();
            ch
        })
        .collect()
}

/// Channel pairs of an arbitrary `(B, C)` factorization.
pub fn channels_from<T: Real>(b: &DMatrix<T>, c: &DMatrix<T>) -> Vec<Channel<T>> {
    (0..b.ncols()).map(|i| Channel::new(b.column(i).into_owned(), c.row(i).transpose())).collect()
}

#[derive(Clone, Debug)]
pub struct ShiftedModel<T> {
    pub cl: ClosedLoopModel<T>,
    /// `A⁻¹ B P_in0`
    pub z_offset: DVector<T>,
    /// per-channel noise forcing `−B_i C_i z_offset`, scaled by σ_i in the SDE
    pub forcing: Vec<DVector<T>>,
}

/// Move the deterministic equilibrium to the origin: `z = x + A⁻¹ B P_in0`.
pub fn shift_coordinates<T: Real>(cl: &ClosedLoopModel<T>) -> Result<ShiftedModel<T>> {
    let mre = max_real_eig(&cl.a);
    if !(mre < T::zero()) {
        return Err(Error::Precondition(format!("shift undefined: closed-loop A is not Hurwitz (max Re λ = {:e})", mre.to_f())));
    }
    let rhs = &cl.b * &cl.p_in0;
    let z_offset = cl.a.clone().lu().solve(&rhs).ok_or_else(|| Error::Numerical("closed-loop A is singular".into()))?;
    let forcing = (0..cl.m()).map(|i| -(cl.b.column(i) * (cl.c.row(i) * &z_offset)[(0, 0)])).collect();
    Ok(ShiftedModel { cl: cl.clone(), z_offset, forcing })
}
