//! Situational persona neurons for decoder-only transformers: probing FFN
//! gates, identifying persona neurons per (domain, topic), retrieving the
//! closest situations for a new question and steering generation.

pub mod analysis;
pub mod bank;
pub mod error;
pub mod harness;
pub mod identify;
mod parallel;
pub mod probe;
pub mod retrieve;
pub mod runtime;
pub mod steer;
pub mod synthetic;
pub mod types;

pub use error::{IrisError, Result};
