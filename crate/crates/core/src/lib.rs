//! Dictionary-attack search against a simulated biometric verifier.
//!
//! A synthetic enrolled population ([`population`]) is attacked with prints
//! produced by a latent-to-template map ([`generator`]) and judged by an
//! FMR-calibrated similarity matcher ([`matcher`]). Prints are evolved with
//! CMA-ES ([`cmaes`]) under four strategies ([`search`]), and [`eval`] runs the
//! multi-trial coverage experiment and renders its report.

pub mod cli;
pub mod cmaes;
pub mod error;
pub mod eval;
pub mod generator;
pub mod matcher;
pub mod population;
pub mod rng;
pub mod search;
pub mod template;

pub use error::{Error, Result};
