//! Relabeling transfer schemes for two-fluid compressible flow.
//!
//! The crate has three layers:
//!
//! * [`kernels`]: pointwise transfer formulas for the 20 schemes,
//! * [`analysis`]: parameter sweeps and property classification of the kernels,
//! * [`grid`], [`solver`] and [`cases`]: a 2-D C-grid multi-fluid Euler solver
//!   and the rising-bubble experiments built on it.

pub mod analysis;
pub mod cases;
pub mod constants;
pub mod grid;
pub mod kernels;
pub mod solver;

pub use constants::Constants;
pub use kernels::{Level, Method, Mode, PairState, SchemeConfig, TransferRates, Treatment};
