//! Safe model-based reinforcement learning from output feedback for
//! constrained Brunovsky-form systems.
//!
//! The crate is organized around the pipeline of the method:
//!
//! - [`barrier`]: the logarithmic barrier transform that maps each box
//!   constraint interval onto the whole real line, plus its inverse and
//!   rate factors.
//! - [`plant`]: Brunovsky-form plant models, their transformed dynamics,
//!   and the two built-in benchmark scenarios.
//! - [`estimator`]: the derivative-free output-feedback state estimator.
//! - [`basis`]: the quadratic value-function basis.
//! - [`learner`]: the actor–critic weight dynamics with Bellman-error
//!   extrapolation over a fixed grid.
//! - [`sim`]: fixed-step RK4 closed-loop integration, cost accumulation,
//!   divergence detection, and the equivalence-check drivers.

pub mod barrier;
pub mod basis;
pub mod estimator;
pub mod learner;
pub mod plant;
pub mod sim;

pub use barrier::{BarrierError, BarrierLimits, LimitPair};
pub use basis::QuadraticBasis;
pub use estimator::{EstimatorGains, EstimatorState};
pub use learner::{ExtrapolationGrid, LearnerGains, LearnerState};
pub use plant::{GainSet, GridSpec, PlantModel, Scenario};
pub use sim::{
    evaluation_rollout, run_closed_loop, DivergenceReason, RunStatus, SimConfig, SimLog, SimRow,
};
