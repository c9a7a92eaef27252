//! Data plumbing, training orchestration and evaluation around the
//! trajectory models: trajectory file ingestion, scenario windowing, a
//! synthetic scene generator, the RMSE metric and report emission.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod records;
pub mod report;
pub mod synth;
pub mod train;
pub mod window;

pub use config::Settings;
pub use error::{HarnessError, Result};
