//! Serializable fit records shared by every estimator.

use serde::{Deserialize, Serialize};

use crate::data::EstimationDataset;
use crate::error::Result;
use crate::ivqr::{self, IvqrFit, IvqrMethod, IvqrOptions, WaldPoint};
use crate::qreg::{self, QuantileFit};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    /// Quantile regression of `y` on `[d, X]`, treating `d` as exogenous.
    Qr,
    IvqrGrid,
    IvqrSmoothed,
    #[default]
    IvqrAuto,
}

impl EstimatorChoice {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorChoice::Qr => "qr",
            EstimatorChoice::IvqrGrid => "ivqr-grid",
            EstimatorChoice::IvqrSmoothed => "ivqr-smoothed",
            EstimatorChoice::IvqrAuto => "ivqr-auto",
        }
    }
}

impl std::str::FromStr for EstimatorChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "qr" => Ok(EstimatorChoice::Qr),
            "ivqr-grid" | "grid" => Ok(EstimatorChoice::IvqrGrid),
            "ivqr-smoothed" | "smoothed" => Ok(EstimatorChoice::IvqrSmoothed),
            "ivqr-auto" | "ivqr" | "auto" => Ok(EstimatorChoice::IvqrAuto),
            other => Err(format!("unknown estimator '{other}' (qr, ivqr-grid, ivqr-smoothed, ivqr-auto)")),
        }
    }
}

/// One fitted quantile. Coefficients are ordered `[d, controls..., const]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub dataset: String,
    pub tau: f64,
    /// `qr`, `grid` or `smoothed`.
    pub method: String,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub n: usize,
    /// Check loss for `qr`, Wald statistic at the estimate otherwise.
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wald_profile: Option<Vec<WaldPoint>>,
}

impl FitRecord {
    pub fn from_quantile(ds: &EstimationDataset, fit: &QuantileFit) -> Self {
        FitRecord {
            dataset: ds.label.clone(),
            tau: fit.tau.value(),
            method: "qr".into(),
            names: ds.regressor_names(),
            coefficients: fit.coefficients.iter().copied().collect(),
            standard_errors: fit
                .standard_errors()
                .map(|s| s.iter().copied().collect())
                .unwrap_or_else(|| vec![f64::NAN; fit.coefficients.len()]),
            n: ds.n(),
            objective: fit.objective,
            fallback_reason: None,
            wald_profile: None,
        }
    }

    pub fn from_ivqr(ds: &EstimationDataset, fit: &IvqrFit) -> Self {
        FitRecord {
            dataset: ds.label.clone(),
            tau: fit.tau.value(),
            method: match fit.method {
                IvqrMethod::Grid => "grid",
                IvqrMethod::Smoothed => "smoothed",
            }
            .into(),
            names: ds.regressor_names(),
            coefficients: fit.coefficients().iter().copied().collect(),
            standard_errors: fit.standard_errors().iter().copied().collect(),
            n: fit.n,
            objective: fit.wald_at_min,
            fallback_reason: fit.fallback_reason.clone(),
            wald_profile: (fit.method == IvqrMethod::Grid).then(|| fit.wald_profile.clone()),
        }
    }

    /// Coefficient on the endogenous regressor.
    pub fn alpha(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn alpha_se(&self) -> f64 {
        self.standard_errors[0]
    }

    /// `row' coefficients`; `row` follows the coefficient layout.
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit records always serialize")
    }
}

/// Fits one quantile with the chosen estimator.
pub fn estimate(ds: &EstimationDataset, tau: f64, choice: EstimatorChoice, opts: &IvqrOptions) -> Result<FitRecord> {
    match choice {
        EstimatorChoice::Qr => {
            let x = ds.regressors();
            let fit = qreg::fit_quantile_with(&x, &ds.y, tau, &opts.solver, None)?.with_covariance(
                &x,
                opts.density_bandwidth,
                opts.covariance,
            )?;
            Ok(FitRecord::from_quantile(ds, &fit))
        }
        EstimatorChoice::IvqrGrid => Ok(FitRecord::from_ivqr(ds, &ivqr::fit_ivqr_grid_default(ds, tau, opts)?)),
        EstimatorChoice::IvqrSmoothed => Ok(FitRecord::from_ivqr(
            ds,
            &ivqr::fit_ivqr_smoothed(ds, tau, opts.smoothing, None, opts)?,
        )),
        EstimatorChoice::IvqrAuto => Ok(FitRecord::from_ivqr(ds, &ivqr::fit_ivqr_auto(ds, tau, opts)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names_round_trip() {
        for c in [
            EstimatorChoice::Qr,
            EstimatorChoice::IvqrGrid,
            EstimatorChoice::IvqrSmoothed,
            EstimatorChoice::IvqrAuto,
        ] {
            assert_eq!(c.label().parse::<EstimatorChoice>().unwrap(), c);
        }
        assert!("ols".parse::<EstimatorChoice>().is_err());
    }
}
