//! Semi-supervised semantic segmentation on procedurally generated scenes.
//!
//! The crate trains a small fully-convolutional network with explicit
//! backpropagation, mixes unlabelled images via class-based, rectangular or
//! smoothed-noise binary masks, pseudo-labels the mixed targets with a
//! mean-teacher model, and evaluates with mIoU plus spatial/mask analyses.

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mixing;
pub mod nn;
pub mod report;
pub mod runner;
pub mod scenes;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{BinaryMask, Image, ProbMap, SegMap, Tensor};
