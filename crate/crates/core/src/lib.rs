//! Instrumental-variable quantile regression and unemployment tail-risk
//! estimation.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: monthly CSV panels, horizon changes, aligned datasets.
//! * [`qreg`]: exact check-loss quantile regression and kernel sandwich
//!   covariances.
//! * [`linear_iv`]: two-stage least squares and residual diagnostics.
//! * [`ivqr`]: inverse quantile regression (grid search on the endogenous
//!   coefficient) and the smoothed-moment GMM estimator, with automatic
//!   fallback between them.
//! * [`risk`]: quantile grids, monotone rearrangement, predictive densities,
//!   tail-risk reports and group contrasts.
//! * [`mc`]: a simulation laboratory with analytically known quantile
//!   coefficients.
//! * [`config`]: run configuration and reproducibility manifests.

pub mod config;
pub mod data;
pub mod error;
pub mod ivqr;
pub mod linear_iv;
pub mod mc;
pub mod qreg;
pub mod record;
pub mod risk;
pub mod rng;
pub mod stats;

pub use data::{DatasetSpec, EstimationDataset, Month, Series, TimeSeriesPanel};
pub use error::{Error, Result};
pub use ivqr::{AlphaGrid, IvqrFit, IvqrMethod, IvqrOptions, SmoothingBandwidth};
pub use linear_iv::LinearIvFit;
pub use qreg::{Bandwidth, CovarianceMode, QuantileFit, QuantileLevel};
pub use record::FitRecord;
pub use risk::{GroupContrast, PredictiveDensity, QuantileGridFit, TailRiskReport};
