//! Time-warped wavelet synthesis model.
//!
//! Signals are modeled as the real part of a wavelet synthesis from complex
//! Gaussian coefficients whose scale covariance is translated along the
//! log-scale axis at every time sample:
//!
//! ```text
//! y = Re( sum_n Psi_n w_n ) + eps,   w_n ~ CN(0, C(theta_n)),   eps ~ N(0, sigma2 I)
//! ```
//!
//! The crate provides exact posterior inference for the coefficients, an EM
//! estimator for the per-sample scale shifts and the underlying power
//! spectrum, Wiener-style reconstruction, test-signal generators and the I/O
//! used by the `warpscale` command-line tool.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod io;
pub mod linalg;
pub mod posterior;
pub mod prior;
pub mod signal;
pub mod wavelet;

pub use error::{Error, Result};
pub use wavelet::C64;
