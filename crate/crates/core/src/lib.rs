//! Feynman-Kac steered diffusion sampling for test-time input adaptation.
//!
//! The crate works on analytically tractable Gaussian-mixture worlds, where
//! the noisy score, the Bayes classifier and the reward-tilted target are all
//! available in closed form. The pieces are:
//!
//! - [`schedule`]: forward noising, the DDPM reverse kernel, Tweedie denoising.
//! - [`models`]: the mixture world, its exact noise predictor and classifier,
//!   spectral corruptions and the low-pass filter.
//! - [`smc`]: particles, effective sample size, multinomial resampling,
//!   low-pass guided proposals and the full steering loop.
//! - [`reward`]: candidate sets and the annealed pseudo-label reward.
//! - [`harness`]: adaptation baselines, ensemble prediction, benchmark runs
//!   and the rejection-sampling oracle.
//! - [`config`] and [`commands`]: the flat key-value experiment config and the
//!   subcommands behind the `fkdiff` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
mod error;
pub mod harness;
pub mod models;
pub mod par;
pub mod reward;
pub mod rng;
pub mod schedule;
pub mod smc;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
