//! Optimal control and stability analysis for linear time-delay systems
//! with both pointwise and distributed state delays.
//!
//! The crate builds everything from the fundamental matrix `K(t)` of the
//! closed loop:
//!
//! * [`ddesim`] — fixed-step integration of closed-loop trajectories, the
//!   fundamental matrix, the Cauchy-formula solution and an exponential
//!   decay fit.
//! * [`lyapmat`] — the delay Lyapunov matrix `U(τ, M) = ∫ Kᵀ(t) M K(t+τ) dt`
//!   and numerical verification of its defining properties.
//! * [`bellman`] — the quadratic cost functional
//!   `V(φ) = φᵀ(0)Π₀φ(0) + 2φᵀ(0)∫Π₁φ + ∬φᵀΠ₂φ` with kernels assembled
//!   from Lyapunov-matrix evaluations, plus direct cost simulation.
//! * [`synthesis`] — the optimal control law, Riccati-system residuals and
//!   policy-iteration synthesis.
//! * [`bounds`] — quadratic upper and local cubic lower bounds for the cost
//!   functional and the velocity bound check.
//! * [`plantbench`] — a scalar temperature-plant tracking benchmark
//!   (synthesized optimal law vs. a fixed-gain PI controller).
//!
//! All matrix norms are spectral norms. All matrix functions of the lag
//! `θ ∈ [−h, 0]` share one uniform grid (see [`sysmodel::ThetaGrid`]).
//! Every type is immutable after construction and safe to share across
//! threads.

pub mod bellman;
pub mod bounds;
pub mod ddesim;
pub mod error;
pub mod linalg;
pub mod lyapmat;
pub mod plantbench;
pub mod scenario;
pub mod synthesis;
pub mod sysmodel;

pub use bellman::{BellmanKernels, WeightKernels};
pub use bounds::{BoundsInputs, BoundsReport, UpperBound};
pub use ddesim::{FundamentalMatrix, StabilityFit, StabilityVerdict, Trajectory};
pub use error::Error;
pub use lyapmat::{LyapResiduals, LyapunovMatrix, LyapunovOperator};
pub use scenario::Scenario;
pub use sysmodel::{
    ClosedLoopSystem, ControlLaw, CostWeights, History, SystemModel, ThetaGrid,
};
pub use synthesis::{RiccatiResiduals, SynthesisResult};

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
