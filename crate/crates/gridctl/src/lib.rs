//! Sparse stochastic load-control synthesis for swing-equation networks.
//!
//! Pipeline: [`netmodel`] builds and linearizes a network case, [`stochastic`]
//! closes the loop with a gain and an uncertainty description, [`msesana`]
//! certifies mean-square exponential stability, [`synth`] designs gains by
//! semidefinite programming and [`sde`] checks everything by Monte Carlo.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`).

pub mod error;
pub mod io;
pub mod linalg;
pub mod msesana;
pub mod netmodel;
pub mod sde;
pub mod stochastic;
pub mod synth;

pub use conic::Real;
pub use error::{Error, Result};

pub type LinearModelF64 = netmodel::LinearModel<f64>;
pub type LinearModelF32 = netmodel::LinearModel<f32>;
pub type ClosedLoopF64 = stochastic::ClosedLoopModel<f64>;
pub type ClosedLoopF32 = stochastic::ClosedLoopModel<f32>;
pub type SynthesisResultF64 = synth::SynthesisResult<f64>;
pub type SynthesisResultF32 = synth::SynthesisResult<f32>;
pub type SimModelF64 = sde::SimModel<f64>;
pub type SimModelF32 = sde::SimModel<f32>;
