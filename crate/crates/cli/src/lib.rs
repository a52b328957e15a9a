//! Batch pipeline over directories of tiles: scoring, polygonization, filtering,
//! evaluation, labeling campaigns and census comparison.

pub mod config;
pub mod pipeline;
pub mod reports;
pub mod runner;
pub mod sample;

pub use config::{InvalidConfig, PipelineConfig};
pub use runner::RunSummary;
