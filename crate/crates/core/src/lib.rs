//! Dimensionality reduction and dynamical-mode recognition for multivariate
//! oscillator time series.
//!
//! Pipeline: [`synth`] generates ring-coupled oscillator data, [`vae`] and
//! [`baselines`] reduce windows to a 2-D latent plane, [`trainer`] fits them,
//! [`latent`] turns latent point sets into Gaussian-KDE probability grids and
//! [`wasserstein`] compares grids by Earth Mover's Distance to classify modes.
//!
//! The networks and linear algebra are generic over [`Real`] (`f32`/`f64`);
//! the aliases below fix the double-precision types the pipeline uses. The
//! density grids and transport solvers work in `f64` only.

pub mod baselines;
pub mod error;
pub mod latent;
pub mod linalg;
pub mod nn;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod vae;
pub mod wasserstein;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix64 = linalg::Matrix<f64>;
pub type BiLstmVae64 = vae::BiLstmVae<f64>;
pub type BiLstmVae32 = vae::BiLstmVae<f32>;
pub type MlpVae64 = baselines::MlpVae<f64>;
pub type PcaModel64 = baselines::PcaModel<f64>;
pub type LatentTrajectory64 = latent::LatentTrajectory<f64>;
