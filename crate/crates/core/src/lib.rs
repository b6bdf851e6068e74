//! Modified Adam and RMSProp with `sqrt(v + zeta)` denominators, analysed
//! under coordinate-wise `(L0, L1)`-smoothness and affine gradient noise.
//!
//! The crate bundles the optimizer, synthetic oracles with known constants,
//! the hyperparameter schedules that guarantee an `eps`-stationary average,
//! executable forms of the supporting inequalities, constant estimators and
//! a seeded Monte-Carlo harness.

pub mod config;
pub mod estimators;
pub mod harness;
pub mod lemmas;
pub mod optim;
pub mod oracles;
pub mod rng;
pub mod schedule;
pub mod stats;

pub use config::{ConfigError, ExperimentConfig};
pub use estimators::{AffineFit, EstimatorError, SamplingScheme, SmoothnessFit, SmoothnessSample};
pub use harness::{
    monte_carlo_convergence, parity_study, run_trajectory, scaling_study, HarnessError, LogLevel, OptimizerKind,
    StudyRow, StudySettings, TrajectoryOptions, TrajectoryRecord,
};
pub use lemmas::{BoundCheck, LemmaError, SequenceCase};
pub use optim::{adam_step, rmsprop_step, OptimError, OptimizerConfig, OptimizerState, StepReport, Variant};
pub use oracles::{NoiseModel, ObjectiveOracle, ObjectiveSpec, OracleError, SmoothnessModel};
pub use schedule::{ProblemConstants, ScheduleError, ScheduleKind, ScheduleResult};
