//! Twin-branch 3D U-Net framework for multimodal tumor segmentation.
//!
//! Two modality-specific encoder-decoder branches share a configurable set
//! of stages by parameter tying; a skip-free bottleneck decoder and a
//! bottleneck classifier consume the concatenated bottleneck features. The
//! crate covers model construction, the per-version multi-task losses,
//! self-supervision corruptions, NIfTI volume I/O, synthetic phantom data,
//! training/evaluation/sweeps, sliding-window inference, and lesion-wise
//! metrics, all deterministic under explicit seeds.

pub mod baselines;
pub mod brain;
pub mod cli;
pub mod corruption;
pub mod data;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
