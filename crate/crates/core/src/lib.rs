//! Two-stage construction of a dynamic channel knowledge map (CKM) for
//! MIMO-OFDM links.
//!
//! Stage I extracts grid-level quasi-static path parameters (delay, azimuth,
//! zenith, power) from many historical measurements while calibrating a
//! per-measurement group-delay offset. Stage II uses the stored table as an
//! informative prior and estimates instantaneous coefficients, the current
//! group delay and transient dynamic paths from a single pilot-subsampled
//! OFDM symbol.
//!
//! Module map:
//! - [`manifold`]: steering vectors, dictionaries, reconstruction, NMSE
//! - [`beliefs`]: von Mises / complex Gaussian / Bernoulli-Gaussian families
//! - [`spectral`]: FFT coarse search + Newton refinement on the circle
//! - [`sim`]: synthetic dynamic channel scenarios and dataset files
//! - [`stage1`], [`stage2`]: the two estimators
//! - [`ckm`]: the grid → path table and its file format
//! - [`harness`]: presets, baselines and Monte-Carlo sweeps

pub mod beliefs;
pub mod ckm;
pub mod error;
pub mod harness;
pub mod manifold;
pub mod seeds;
pub mod sim;
pub mod spectral;
pub mod stage1;
pub mod stage2;

mod linalg;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;

/// Complex matrix used for channels, dictionaries and Gram matrices.
pub type CMatrix = DMatrix<Complex64>;
/// Complex column vector.
pub type CVector = DVector<Complex64>;
