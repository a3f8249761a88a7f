//! Lightweight monocular depth estimation toolkit.
//!
//! The crate bundles everything needed to build, optimize and verify a tiny
//! encoder-decoder depth network at desk scale:
//!
//! - [`tensor`] — deterministic NCHW tensor arithmetic (conv, resize, ...).
//! - [`graph`] — the inference graph, the LiteDepth builder, the `.ldw`
//!   weight container and the normalization-folding rewrite pass.
//! - [`losses`] — the four-term training loss suite with validity masking
//!   and analytic gradients, plus affinity-map distillation and a toy
//!   gradient-descent fitter.
//! - [`augment`] — paired image/depth augmentation with R² crop.
//! - [`metrics`] — si-RMSE / RMSE / log10 / REL and the challenge score.
//! - [`data`] — 16-bit PNG depth IO, synthetic scenes and dataset splits.
//! - [`oracle`] — independent brute-force references used by the test
//!   suites (naive convolution, finite differences, chi-square bounds).

pub mod augment;
pub mod data;
pub mod graph;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod tensor;

pub use grid::Grid;
pub use tensor::Tensor;
