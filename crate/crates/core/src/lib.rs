//! Adversarial stacked auto-encoders for fair representation learning.
//!
//! A stack of encoders is trained level by level. Each level pairs its encoder
//! with a decoder, a label classifier and an adversary that tries to recover
//! the sensitive attribute from the level's latent code; the encoder is pushed
//! to defeat that adversary. At inference only the encoders are kept.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: matrices, reverse-mode gradients, dense layers, Adam.
//! - [`data`]: UCI Adult / German Credit loaders, standardization, folds, batches.
//! - [`fairness`]: ΔDP / ΔEO / ΔEOpp and accuracy.
//! - [`stack`]: level architecture, encoder-only inference, model files.
//! - [`train`]: alternating min-max updates and sequential level training.
//! - [`downstream`]: probe MLP, logistic regression, random forest, cross-validation.
//! - [`experiments`]: config-driven `fit` / `transform` / `sweep` / `table1`.

pub mod autodiff;
pub mod data;
pub mod downstream;
mod error;
pub mod experiments;
pub mod fairness;
pub mod stack;
pub mod train;

pub use error::{Error, Result};
