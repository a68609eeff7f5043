//! Finite-dimensional simulation engine for quantum and classical measurement.

#[cfg(doctest)]
pub mod book;

pub mod causality;
pub mod cli;
pub mod error;
pub mod measurement;
pub mod operator;
pub mod uncertainty;
pub mod zeno;

pub use error::Error;

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex<f64>;
