//! Ridge and ridgeless market timing under posterior drift: limiting
//! moments from random-matrix theory, a Monte-Carlo harness that checks
//! them, and an equity-premium backtest built on random Fourier features.

pub mod dgp;
pub mod error;
pub mod market;
pub mod montecarlo;
pub mod rng;
pub mod spectra;
pub mod stieltjes;
pub mod theory;

pub use error::{Error, Result};
