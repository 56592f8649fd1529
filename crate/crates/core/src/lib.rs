//! Offline-to-online reinforcement learning with policy expansion.

mod binio;
pub mod bridge;
pub mod distributions;
pub mod envs;
pub mod harness;
pub mod iql;
pub mod error;
pub mod numcore;
pub mod replay;
pub mod sac;

pub use error::{Error, FormatError, Result};
