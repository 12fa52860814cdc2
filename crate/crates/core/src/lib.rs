//! Grade prediction for MOOC assessments from click-stream logs.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod eventlog;
pub mod features;
pub mod plmr;
pub mod simgen;

pub use error::{Error, RecordError, Result};
