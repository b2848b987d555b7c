//! Robust fine-tuning of contrastive image-text classifiers for
//! cross-region traffic sign recognition.
//!
//! The crate covers the whole workflow: prompt generation, dataset
//! manifests and region splits, tiny reference encoders, five fine-tuning
//! strategies (zero-shot, linear probe, full fine-tuning, post-hoc weight
//! interpolation, and per-epoch adaptive weight ensembling), and
//! cross-region evaluation.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod prompts;
pub mod schedule;
pub mod training;
pub mod weights;

pub use error::{Error, ErrorKind, Result};
