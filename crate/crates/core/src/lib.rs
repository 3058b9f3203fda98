//! Pseudo-weighted overfitted latent class analysis for non-probability
//! samples.
//!
//! The pipeline estimates pseudo-inclusion probabilities for a
//! non-probability sample by stacking it with a reference probability sample
//! and fitting BART propensity and inclusion models ([`pseudo_weights`]),
//! propagates draws of the resulting pseudo-weights through a weighted
//! overfitted Bayesian latent class model ([`wolca`]), and relates the derived
//! classes to binary outcomes with a weighted Bayesian logistic regression
//! ([`outcome_reg`]). [`simgen`] and [`harness`] reproduce the simulation
//! studies used to validate the method.

pub mod assign;
pub mod bart;
pub mod error;
pub mod glm;
pub mod harness;
pub mod io;
pub mod items;
pub mod matrix;
pub mod outcome_reg;
pub mod par;
pub mod pseudo_weights;
pub mod rng;
pub mod sandwich;
pub mod simgen;
pub mod stats;
pub mod wolca;

pub use error::{Error, Result};
pub use matrix::Matrix;
