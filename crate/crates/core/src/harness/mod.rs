//! Config-driven experiment orchestration: data preparation, source and
//! prompt training, ε-grid evaluation, temperature sweeps, the
//! loosening × adversarial-training ablation, and artifact export.

pub mod config;
mod experiment;
mod pixmap;

pub use config::{ExperimentConfig, Regime};
pub use experiment::*;
pub use pixmap::{export_prompt_image, read_pixmap, INTERIOR_GRAY};
