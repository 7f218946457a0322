//! One-to-many neural emulation of guitar amplifier tones.
//!
//! The crate implements the whole pipeline as a library:
//!
//! * [`amps`] — a bank of synthetic virtual amplifier chains (waveshaper,
//!   tone stack, power-stage saturation, cabinet IR) used as rendering
//!   targets, plus THD measurement.
//! * [`dataset`] — synthetic clean-guitar generation, corpus rendering,
//!   content-based splits, pair construction and reference sampling.
//! * [`mel`] / [`stft`] — log-mel frontend for the tone encoder and the
//!   complex STFT training objective with its analytic gradient.
//! * [`encoder`] — the contrastively trained tone encoder (NT-Xent).
//! * [`generator`] — the gated causal convolutional generator with FiLM,
//!   concat, or no conditioning, fed by tone embeddings or a lookup table.
//! * [`training`] — deterministic, resumable training loops.
//! * [`zero_shot`] — retrieval index and embedding-selection strategies for
//!   cloning tones never seen during generator training.
//! * [`eval`] — result tables, embedding quality metrics, spectrogram export.
//! * [`pipeline`] — the end-to-end desk-scale demo used by the CLI.
//!
//! Every numeric kernel is generic over [`scalar::Scalar`]; the shipped
//! pipeline runs at [`Sample`] (`f32`) while tests exercise the identical
//! code at `f64` where finite-difference tolerances demand it.

pub mod amps;
pub mod audio;
pub mod container;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod generator;
pub mod mel;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod stft;
pub mod training;
pub mod zero_shot;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the shipped pipeline binaries.
pub type Sample = f32;
