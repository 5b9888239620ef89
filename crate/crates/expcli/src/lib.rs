//! Experiment runner for `popcomm`: presets for each simulated condition,
//! deterministic seeding, a bounded worker pool and CSV/JSON outputs.
//!
//! A run directory holds `turns.csv`, `profiles.csv`, `manifest.json`,
//! `checkpoints/` and, after [`summarize`], `summary.json`.

pub mod config;
pub mod error;
pub mod run;
pub mod seed;
pub mod summary;

pub use config::{conditions, Condition, ConditionKind, ExperimentConfig, Preset, Scale, PRESETS};
pub use error::{Error, Result};
pub use run::{run_job, run_preset, run_preset_with, JobOutput, Manifest, ProfileRow, TurnRow};
pub use summary::{summarize, Check, Summary};
