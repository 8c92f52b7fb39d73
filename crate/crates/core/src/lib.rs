//! Discrete iterated Itô integrals along a partition, their order-reversed
//! counterparts, and a Monte Carlo harness that checks catalogued identities
//! between the two.
//!
//! Layout:
//! - [`domain`]: partitions, weight and kernel expressions, integral specs
//! - [`paths`]: counter-based sampling of Wiener and martingale increments
//! - [`eval`]: forward, reversed, combined and kernel evaluators
//! - [`catalog`]: the identity registry
//! - [`mc`]: mean-square verification, convergence sweeps, covariance checks
//! - [`report`]: versioned JSON and CSV report documents

pub mod catalog;
pub mod domain;
pub mod error;
pub mod eval;
pub mod mc;
pub mod numeric;
pub mod paths;
pub mod quadrature;
pub mod report;

pub use error::{Error, Result};
