//! Mixed H2/H∞ state feedback for discrete-time linear systems with
//! multiplicative noise: model-based coupled Riccati solves, a simulator,
//! Q-function algebra and a model-free Q-learning loop.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom fix it to `f64`.

pub mod bench;
pub mod error;
pub mod gare;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod probe;
pub mod qfunction;
pub mod qlearn;
pub mod random_systems;
pub mod report;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use gare::{
    closed_loop_stability, gains_from_values, gare_residuals, ms_stable, solve_coupled_gare,
    vi_value_update, SolveReport, StabilityCertificate,
};
pub use model::{
    validate_system, AlgoConfig, Block, CostSpec, Dims, ExpectationMode, GainPair, NoiseCase,
    QPair, SdltiSystem, StopRule, SystemParts, ValidationReport, ValuePair, Violation,
};
pub use oracle::{RecordingOracle, ReplayOracle, SimOracle, TrajectoryOracle};
pub use probe::{ProbingSchedule, SinusoidTerm, Wave};
pub use qfunction::{gains_from_q, h_from_values, values_from_q, vech, vecs, StackedInput};
pub use qlearn::{
    run_q_learning, run_value_iteration, AbortCause, QLearnReport, Reference, Termination,
};
pub use scalar::Scalar;
pub use sim::{simulate_closed_loop, NoiseDistribution, NoiseSource, Trajectory};

pub type System = SdltiSystem<f64>;
pub type Cost = CostSpec<f64>;
pub type Values = ValuePair<f64>;
pub type Gains = GainPair<f64>;
pub type QMatrices = QPair<f64>;
pub type Config = AlgoConfig<f64>;
pub type System32 = SdltiSystem<f32>;
pub type Gains32 = GainPair<f32>;
