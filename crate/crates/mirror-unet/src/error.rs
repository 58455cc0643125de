//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid stage index {0} (must be in 1..=8)")]
    InvalidStageIndex(usize),
    #[error("patch dimension {0} is not divisible by 16")]
    PatchNotDivisible(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("missing output required by version: {0}")]
    MissingOutput(&'static str),
    #[error("non-3D payload: file has {0} dimensions")]
    Non3dPayload(usize),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("mask must be integer-valued")]
    NonIntegerMask,
    #[error("zero variance")]
    ZeroVariance,
    #[error("phantom lesion could not be placed inside the body after {0} attempts")]
    LesionPlacement(usize),
    #[error("spacing mismatch: checkpoint expects {expected:?}, dataset has {got:?}")]
    SpacingMismatch {
        expected: (f32, f32, f32),
        got: (f32, f32, f32),
    },
    #[error("NaN loss at step {step}: {dump}")]
    NanLoss { step: usize, dump: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("cli error: {0}")]
    Cli(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
