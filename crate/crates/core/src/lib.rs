//! Average treatment effect estimation with singly robust (IPW, g-computation)
//! and doubly robust (AIPW, TMLE) estimators, parametric and stacked-ensemble
//! nuisance models, and a Monte Carlo harness for comparing them.
//!
//! The crate is organised bottom-up:
//!
//! - [`dgp`]: synthetic cohorts with four normal confounders and their
//!   distorted transforms.
//! - [`glm`]: least squares, IRLS logistic regression and the one-parameter
//!   logistic fluctuation used by TMLE.
//! - [`learners`]: regression trees, bagged trees, k-NN and the cross-validated
//!   stacked ensemble.
//! - [`nuisance`]: propensity and outcome surfaces built from either family.
//! - [`estimators`] and [`inference`]: the four estimators and their standard
//!   errors.
//! - [`harness`]: scenario grids, replicate execution, summaries.
//! - [`plot`] and [`cli`]: SVG output and the `drbench` command line.

pub mod cli;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod harness;
pub mod inference;
pub mod learners;
pub mod nuisance;
pub mod plot;
pub mod rng;

pub use error::{Error, Result};
