//! Pipeline library behind the `ilcf` binary: configuration, stage
//! orchestration, and the synthetic input bundle used by the tests and the
//! quick-start walkthrough.

pub mod config;
pub mod pipeline;
pub mod synth;

pub use config::PipelineConfig;
pub use pipeline::{Pipeline, Stage, STAGES};
