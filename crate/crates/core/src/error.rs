use alloc::string::String;

/// Errors raised by the core computations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("{n} samples are not divisible into groups of {group_size}; pad the sample count to a multiple of {group_size}")]
    Indivisible { n: usize, group_size: usize },
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
    #[error("repetition {repeat} does not divide group size {group_size}")]
    RepetitionMismatch { repeat: usize, group_size: usize },
    #[error("preset {preset} is incompatible with group size {group_size}: {reason}")]
    IncompatiblePreset {
        preset: &'static str,
        group_size: usize,
        reason: &'static str,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
