//! Estimation of the number of sample uniques that are also population
//! uniques (τ₁) in categorical microdata, using a hierarchical Dirichlet
//! process mixed-membership model fitted by MCMC.
//!
//! Start from [`data`] for the input types, [`hdp::Sampler`] or
//! [`hdp::run_chain`] to fit a model, and [`sz`] when the data has
//! structural zeros.

pub mod data;
pub mod distributions;
pub mod error;
pub mod hdp;
pub mod io;
pub mod risk;
pub mod rng;
pub mod synth;
pub mod sz;

pub use error::{Error, Result};
