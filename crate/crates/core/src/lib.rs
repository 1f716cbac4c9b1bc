//! HPC batch scheduling simulator with EASY and reinforcement-learned
//! backfilling.
//!
//! The numeric core (networks, optimizer, training) is generic over
//! [`Scalar`]; the aliases below fix it to `f64`, which is what the CLI and
//! the experiment harness use.

pub mod agent;
pub mod backfill;
pub mod harness;
pub mod policy;
pub mod scalar;
pub mod sim;
pub mod workload;

pub use backfill::{BackfillStrategy, Backfiller, EasyBackfill, NoBackfill};
pub use policy::PolicyKind;
pub use scalar::Scalar;
pub use sim::{bounded_slowdown, run_schedule, ClusterState, RuntimeEstimator, ScheduleResult};
pub use workload::{Job, Trace, TraceStats};

pub type AgentParams = agent::AgentParams<f64>;
pub type AgentParams32 = agent::AgentParams<f32>;
pub type Observation = agent::Observation<f64>;
pub type Observation32 = agent::Observation<f32>;
pub type Trajectory = agent::Trajectory<f64>;
pub type LearnedBackfill<'a> = backfill::LearnedBackfill<'a, f64>;
pub type TrainOutcome = agent::TrainOutcome<f64>;
