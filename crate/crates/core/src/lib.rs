//! Test-time count steering for diffusion sampling.
//!
//! A variance-exploding sampler runs over an exact, prompt-conditioned
//! Gaussian-mixture denoiser whose components are rendered blob layouts.
//! Prompt leakage in the mixture makes plain sampling miscount; the
//! strategies in [`strategies`] steer the trajectory with a control prompt
//! and an intermediate blob count to recover the target count.
//!
//! - [`schedule`]: sigma ladder, sampler transition, plain sampling loop
//! - [`denoiser`]: denoiser trait, layout library, analytic noise prediction
//! - [`steering`]: steered noise estimate and the steered sampling loop
//! - [`counting`]: threshold + connected-component counter
//! - [`strategies`]: control prompts and the unsteered/static/feedback/adaptive runs
//! - [`benchgen`]: synthetic benchmark generation
//! - [`metrics`], [`experiment`], [`pgm`]: evaluation harness and output formats

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchgen;
pub mod counting;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod metrics;
pub mod pgm;
pub mod prompt;
pub mod schedule;
pub mod seed;
pub mod steering;
pub mod strategies;

pub use error::{Error, Result};
pub use grid::LatentGrid;
pub use prompt::{Level, PromptSpec};
