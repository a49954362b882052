//! Handwritten text-line recognition toolkit.
//!
//! The crate covers the whole line-recognition pipeline:
//!
//! * [`imageproc`]: illumination compensation, Sauvola binarization, deslanting
//!   and size normalization of grayscale line scans.
//! * [`nn`]: a small dense tensor type, forward/backward kernels for every layer
//!   of the recognizer, and parameter / multiplication accounting.
//! * [`model`]: declarative builder for the convolutional-recurrent recognizer and
//!   its standard/depthwise-separable layout variants.
//! * [`ctc`]: CTC loss with log-space forward-backward and best-path decoding.
//! * [`wbs`]: lexicon-constrained word beam search with a word-bigram model.
//! * [`metrics`]: CER/WER and one-way ANOVA.
//! * [`data`]: manifests, augmentation and a synthetic micro dataset.
//! * [`train`]: training loop with early stopping, LR-on-plateau and prediction.

#![allow(clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod ctc;
pub mod data;
pub mod error;
pub mod imageproc;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod prob;
pub mod train;
pub mod wbs;

pub use error::{Error, Result};
pub use imageproc::{BinaryImage, GrayImage, PreprocConfig};
pub use model::{LayoutString, Model, ModelConfig};
pub use nn::{CostReport, Tensor};
pub use prob::ProbMatrix;
pub use wbs::{CharSet, DecoderConfig, DecoderMode, PrefixTree, WordLM};
