//! Speech emotion recognition pipeline built from first principles.
//!
//! The crate covers the full training and evaluation stack for a
//! spectrogram-based emotion classifier:
//!
//! - [`dsp`] — WAV ingestion and log-magnitude spectrograms,
//! - [`vtlp`] — vocal tract length perturbation (frequency-axis warping)
//!   for data augmentation and test-time augmentation,
//! - [`corpus`] — manifests, speaker-disjoint folds, oversampling, global
//!   normalization, padding, and a synthetic corpus generator,
//! - [`net`] — CNN + masked Bi-LSTM + softmax classifier with sequence-wise
//!   batch normalization and an analytic backward pass,
//! - [`optim`] — momentum SGD with a decoupled update scale `beta`,
//!   per-layer parameter groups, and gradient-norm telemetry,
//! - [`eval`] — WA/UA metrics, majority-vote test-time augmentation,
//!   per-fold training, and cross-validation aggregation.
//!
//! Batch and fold execution is data-parallel via rayon when the `parallel`
//! feature (default) is enabled; results are bit-identical to the
//! sequential build.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod net;
pub mod optim;
pub mod parallel;
pub mod vtlp;

mod rng;
mod tensor;

pub use error::{CoreError, Result};
pub use rng::substream;
pub use tensor::Tensor;
