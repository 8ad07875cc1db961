//! Dense primal-dual interior-point solver for cone programs over products
//! of nonnegative orthants, second-order cones and PSD cones, plus a small
//! LMI modeling layer that compiles affine matrix inequalities into it.
//!
//! ```
//! use conic::{Cone, ConicProgram, CscMatrix, Settings, Status};
//!
//! // minimize x subject to x >= 3
//! let prog = ConicProgram {
//!     c: vec![1.0f64],
//!     a: CscMatrix::zeros(0, 1),
//!     b: vec![],
//!     g: CscMatrix::from_triplets(1, 1, &[(0, 0, -1.0)]),
//!     h: vec![-3.0],
//!     cones: vec![Cone::NonNeg(1)],
//! };
//! let sol = conic::solve(&prog, &Settings::default()).unwrap();
//! assert_eq!(sol.status, Status::Optimal);
//! assert!((sol.x[0] - 3.0).abs() < 1e-7);
//! ```

mod cones;
mod equil;
mod kkt;
pub mod lmi;
mod program;
mod real;
mod solver;
mod sparse;

pub use cones::{psd_side, smat, svec, svec_index, svec_len, svec_vec, Cone};
pub use kkt::{chol_solve, cholesky_in_place};
pub use lmi::{Affine, AffineSym, LmiBuilder, LmiLayout, SymVar};
pub use program::ConicProgram;
pub use real::Real;
pub use solver::{solve, ConicSolution, IterationLog, Settings, Status};
pub use sparse::CscMatrix;

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("matrix block {block} is not symmetric (max asymmetry {asym:e})")]
    Asymmetric { block: usize, asym: f64 },
}

pub type ProgramF64 = ConicProgram<f64>;
pub type ProgramF32 = ConicProgram<f32>;
pub type SolutionF64 = ConicSolution<f64>;
pub type SolutionF32 = ConicSolution<f32>;
