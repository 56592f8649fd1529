//! Experiment orchestration: configuration, the offline and online phases,
//! evaluation, and CSV/SVG outputs.

mod config;
mod output;
mod run;

pub use config::{OfflineAlgo, OnlineAlgo, RunConfig};
pub use output::*;
pub use run::*;
