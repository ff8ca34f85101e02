//! Reconstruction of the crystal size distribution in batch crystallization
//! from a single third-moment measurement, using a bank of KKL observers and
//! Tikhonov-regularized inversion.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod csvio;
pub mod error;
pub mod grid;
pub mod inversion;
pub mod observer;
pub mod pipeline;
pub mod process;

pub use error::{Error, Result};
pub use grid::{Grid, Signal};
