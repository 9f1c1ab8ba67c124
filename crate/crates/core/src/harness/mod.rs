//! Experiment orchestration: configuration, the round loop, metrics and
//! result files.

pub mod config;
pub mod emit;
pub mod metrics;
pub mod sim;

pub use config::{AttackKind, SimConfig};
pub use emit::emit;
pub use metrics::{eval_ba, eval_detection, eval_ma, RoundMetrics, FLAG_THRESHOLD};
pub use sim::{run, AppliedReport, RoundTrace, SimReport, Simulation, World};
