//! Semi/weakly-supervised hand part segmentation and joint regression on
//! synthetic depth images.
//!
//! The pipeline: generate paired depth/part-label/joint data ([`datagen`]),
//! pre-train a pixel segmenter on the clean split ([`models`]), build a
//! Hamming patch dictionary from synthetic label maps ([`patchdict`]),
//! restore noisy predicted label maps by patchwise alignment
//! ([`restoration`]), gate restored maps against ground-truth joints and
//! fine-tune the segmenter on accepted pseudo-labels ([`supervision`]), then
//! train per-joint regressors fusing depth with segmentation-derived masks
//! and evaluate everything ([`metrics`]).

pub mod datagen;
pub mod error;
pub mod metrics;
pub mod models;
pub mod patchdict;
pub mod pipeline;
pub mod restoration;
pub mod supervision;
pub mod types;

pub use error::{Error, Result};
