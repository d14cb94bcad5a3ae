//! Blind identification of fully observed linear time-varying systems.
//!
//! Given repeated experiments `z^(j)[k + 1] = A[k] z^(j)[k] + u^(j)[k] + w^(j)[k]`
//! with sparse unknown inputs `u`, the crate recovers both the dynamics
//! `A[k]` and the inputs by l1 minimization over a structured sensing
//! matrix, and certifies when that recovery is unique.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! experiment harness and the file formats use `f64`.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod sensing;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Dataset, Dims, InputPlan, LtvModel, Mode};
pub use scalar::Scalar;
pub use sensing::{Projector, RankPolicy, SensingSystem};
pub use solver::{solve_blind_id, Solution, SolveStatus, SolverOptions};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type LtvModel64 = LtvModel<f64>;
pub type LtvModel32 = LtvModel<f32>;
pub type SensingSystem64 = SensingSystem<f64>;
pub type SensingSystem32 = SensingSystem<f32>;
pub type Solution64 = Solution<f64>;
pub type Solution32 = Solution<f32>;
pub type SolverOptions64 = SolverOptions<f64>;
pub type SolverOptions32 = SolverOptions<f32>;
