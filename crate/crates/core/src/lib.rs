//! Speech enhancement by Taylor-series unfolding.
//!
//! The complex spectrum of a noisy utterance is recovered as the
//! superposition of a 0th-order term (a magnitude gain network coupled with
//! the noisy phase) and `Q` high-order residual terms linked by the
//! recursion `T(q+1) = q·T(q) + P(q)`, where each `P(q)` is a trainable
//! derivative module. Everything runs on a small deterministic CPU tensor
//! library with reverse-mode differentiation, so the whole pipeline — STFT
//! analysis, model, training, evaluation — is self-contained.
//!
//! The main entry points are:
//!
//! * [`dsp`] — STFT/iSTFT, spectral compression, WAV I/O, CSV/PGM export.
//! * [`autodiff`] — tensors, the recorded computation graph, gradient checks.
//! * [`model`] — the unfolded enhancement network and its building blocks.
//! * [`classical`] — spectral subtraction / Wiener baselines and the
//!   oracle-residual identity.
//! * [`train`] — synthetic mixtures, the compressed RI+magnitude loss, Adam,
//!   and the training loop.
//! * [`metrics`] — SISNR and log-spectral distance.
//!
//! See the `examples/` directory for one runnable program per capability,
//! and the `taylor-unfold` binary for the `train` / `enhance` / `eval` /
//! `inspect` / `selftest` commands.

pub mod autodiff;
pub mod classical;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
