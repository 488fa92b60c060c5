//! Deterministic discrete-event simulation of offloading under a changing
//! deployment context, with the adamec strategy and three baselines.

pub mod cache;
pub mod engine;
pub mod metrics;
pub mod scenario;

pub use cache::AtomCache;
pub use engine::{run_scenario, run_scenario_with, scenario_scheme, SimOutput};
pub use metrics::{MetricRow, MetricsLog, Summary};
pub use scenario::{Scenario, Strategy};
