pub mod builders;
pub mod context;
pub mod cost;
pub mod error;
pub mod graph;
pub mod manifest;
pub mod planner;
pub mod predictor;
pub mod prepartition;
pub mod search;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
