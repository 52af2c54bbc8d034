//! Datasets on disk, training, evaluation and the `mimo-nerf` command line,
//! built on [`mimo_nerf_core`].
//!
//! - [`config`]: the plain-text experiment configuration.
//! - [`dataset`]: parallel dataset generation, manifest and PPM IO.
//! - [`trainer`]: sharded, thread-count independent training loop.
//! - [`checkpoint`]: versioned binary checkpoints with atomic writes.
//! - [`evalkit`]: whole-view rendering, PSNR/SSIM/#Run/timing reports.
//! - [`cli`]: subcommands `gen-data`, `train`, `render`, `eval`, `bench`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod evalkit;
pub mod trainer;

pub use error::{Error, Result};
