//! Configuration, orchestration and file layout of the damage-assessment
//! pipeline. The `damagescan` binary wraps [`stages`].

pub mod config;
pub mod error;
pub mod pipeline;
pub mod process;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{Error, Result};
