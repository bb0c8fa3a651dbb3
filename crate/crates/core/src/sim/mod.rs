//! Sampled-data grasp simulation: scenarios, estimation, nominal control,
//! the closed loop, traces, and the double-integrator benchmark.

pub mod benchmark;
pub mod engine;
pub mod estimate;
pub mod init;
pub mod scenario;
pub mod trace;

pub use engine::{run, run_from, truth_system, zoh_step, RunOutcome, RunResult};
pub use init::{grasp_initializer, Initialization};
pub use scenario::Scenario;
pub use trace::{Summary, Trace};
