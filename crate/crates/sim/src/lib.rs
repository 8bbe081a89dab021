//! Trace-driven simulator for the Virtual Block Interface and x86-style
//! baselines.

pub mod config;
pub mod core_model;
pub mod engine;
pub mod generate;
pub mod layout;
pub mod stats;
pub mod trace;

pub use config::{ConfigError, Scenario, SimConfig};
pub use engine::{RunError, RunOptions, RunOutput, run, run_with};
pub use generate::{GenSpec, generate};
pub use stats::StatsReport;
pub use trace::{TraceError, TraceEvent};
