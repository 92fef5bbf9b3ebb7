//! Instrumental-variable quantile regression.
//!
//! Two estimators of the structural quantile coefficients `(alpha, beta)`
//! in `P(y <= d alpha + x'beta | x, z) = tau`:
//!
//! * **Inverse quantile regression** ([`fit_ivqr_grid`]). For each candidate
//!   `alpha` on a grid, regress `y - d alpha` on `[X, d_hat]` by quantile
//!   regression, where `d_hat` is the first-stage projection of `d` on
//!   `[X, Z]`. The estimate is the candidate whose `d_hat` coefficient is
//!   closest to zero in Wald distance. The grid is refined around the
//!   incumbent by successive 10x shrinkage.
//! * **Smoothed estimating equations** ([`fit_ivqr_smoothed`]). The
//!   indicator in `E[(1{r <= 0} - tau) psi] = 0` is replaced by a
//!   piecewise-linear ramp of half-width `h`, with `psi = (d_hat, x)`, and the
//!   resulting just-identified system is solved by damped Newton steps.
//!
//! [`fit_ivqr_auto`] runs the grid estimator and falls back to the smoothed
//! one when the grid search hits its boundary, loses too many inner fits, or
//! produces a non-finite Wald value at its incumbent.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::EstimationDataset;
use crate::error::{Error, Result};
use crate::linear_iv::{self, FirstStage};
use crate::qreg::{self, Bandwidth, CovarianceMode, QuantileLevel, SolverOptions};
use crate::stats;

/// Candidate values for the endogenous coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
    pub refinement_rounds: usize,
}

impl AlphaGrid {
    pub fn new(lower: f64, upper: f64, step: f64, refinement_rounds: usize) -> Result<Self> {
        let g = AlphaGrid {
            lower,
            upper,
            step,
            refinement_rounds,
        };
        g.validate()?;
        Ok(g)
    }

    /// `points` evenly spaced values on `center ± half_width`.
    pub fn centered(center: f64, half_width: f64, points: usize, refinement_rounds: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::Parameter("alpha grid needs at least 3 points".into()));
        }
        AlphaGrid::new(
            center - half_width,
            center + half_width,
            2.0 * half_width / (points - 1) as f64,
            refinement_rounds,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lower.is_finite()
            && self.upper.is_finite()
            && self.lower < self.upper
            && self.step > 0.0
            && (self.upper - self.lower) / self.step <= 1e6;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "invalid alpha grid [{}, {}] step {}",
                self.lower, self.upper, self.step
            )))
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let k = ((self.upper - self.lower) / self.step + 1e-9).floor() as usize;
        let mut pts: Vec<f64> = (0..=k).map(|i| self.lower + i as f64 * self.step).collect();
        if self.upper - pts[k] > 1e-9 * self.step {
            pts.push(self.upper);
        }
        pts
    }

    /// Step after all refinement rounds.
    pub fn final_step(&self) -> f64 {
        self.step / 10f64.powi(self.refinement_rounds as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldPoint {
    pub alpha: f64,
    /// `None` where the inner quantile regression failed.
    pub wald: Option<f64>,
}

/// Smoothing half-width for the smoothed estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingBandwidth {
    pub value: f64,
    pub rule: SmoothingRule,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum SmoothingRule {
    /// `PLUG_IN_CONSTANT * robust_scale(residuals) * n^{-1/3}`.
    #[default]
    PlugIn,
    Fixed(f64),
}

/// Constant of the Gaussian-reference plug-in smoothing bandwidth.
pub const PLUG_IN_CONSTANT: f64 = 1.0;

impl SmoothingBandwidth {
    pub fn resolve(rule: SmoothingRule, residuals: &[f64]) -> Result<Self> {
        let value = match rule {
            SmoothingRule::Fixed(v) => v,
            SmoothingRule::PlugIn => {
                PLUG_IN_CONSTANT * stats::robust_scale(residuals) * (residuals.len() as f64).powf(-1.0 / 3.0)
            }
        };
        if value > 0.0 && value.is_finite() {
            Ok(SmoothingBandwidth { value, rule })
        } else {
            Err(Error::Parameter(format!("smoothing bandwidth must be positive, got {value}")))
        }
    }
}

/// Grid used when none is given: centred on 2SLS, ± `half_width_se` 2SLS
/// standard errors, `points` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoGrid {
    pub points: usize,
    pub half_width_se: f64,
    pub refinement_rounds: usize,
}

impl Default for AutoGrid {
    fn default() -> Self {
        AutoGrid {
            points: 201,
            half_width_se: 10.0,
            refinement_rounds: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvqrOptions {
    pub grid: Option<AlphaGrid>,
    pub auto_grid: AutoGrid,
    pub smoothing: SmoothingRule,
    /// Density bandwidth for Wald variances and standard errors.
    pub density_bandwidth: Bandwidth,
    pub covariance: CovarianceMode,
    pub solver: SolverOptions,
    pub newton_max_iterations: usize,
    pub newton_restarts: usize,
    /// Fraction of failed inner fits above which the grid is unstable.
    pub max_inner_failure_rate: f64,
}

impl Default for IvqrOptions {
    fn default() -> Self {
        IvqrOptions {
            grid: None,
            auto_grid: AutoGrid::default(),
            smoothing: SmoothingRule::PlugIn,
            density_bandwidth: Bandwidth::HallSheather,
            covariance: CovarianceMode::Robust,
            solver: SolverOptions::default(),
            newton_max_iterations: 200,
            newton_restarts: 5,
            max_inner_failure_rate: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvqrMethod {
    Grid,
    Smoothed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvqrFit {
    pub tau: QuantileLevel,
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub wald_at_min: f64,
    /// Every evaluated grid point, sorted by alpha (grid method only).
    pub wald_profile: Vec<WaldPoint>,
    /// Covariance of `[alpha, beta]`.
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub method: IvqrMethod,
    pub fallback_reason: Option<String>,
    pub n: usize,
    pub grid: Option<AlphaGrid>,
    pub smoothing: Option<SmoothingBandwidth>,
}

impl IvqrFit {
    pub fn fallback_triggered(&self) -> bool {
        self.fallback_reason.is_some()
    }

    pub fn coefficients(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.beta.len() + 1);
        c[0] = self.alpha;
        c.rows_mut(1, self.beta.len()).copy_from(&self.beta);
        c
    }

    pub fn standard_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn alpha_se(&self) -> f64 {
        self.covariance[(0, 0)].max(0.0).sqrt()
    }
}

/// First-stage projection `d_hat` of `d` on `[X, Z]`.
pub fn first_stage_fit(ds: &EstimationDataset) -> Result<FirstStage> {
    linear_iv::first_stage(ds)
}

fn inner_design(ds: &EstimationDataset, d_hat: &DVector<f64>) -> DMatrix<f64> {
    let p = ds.p_x();
    let mut w = ds.x.clone().insert_column(p, 0.0);
    w.set_column(p, d_hat);
    w
}

/// Instruments `(d_hat, X)` aligned with the parameter layout `(alpha, beta)`.
fn moment_instruments(ds: &EstimationDataset, d_hat: &DVector<f64>) -> DMatrix<f64> {
    let mut psi = ds.x.clone().insert_column(0, 0.0);
    psi.set_column(0, d_hat);
    psi
}

struct InnerEval {
    wald: f64,
    fit: qreg::QuantileFit,
}

fn evaluate(
    alpha: f64,
    ds: &EstimationDataset,
    tau: f64,
    w: &DMatrix<f64>,
    opts: &IvqrOptions,
    warm: Option<&[usize]>,
) -> Result<InnerEval> {
    let inner = || -> Result<InnerEval> {
        let y_alpha = &ds.y - &ds.d * alpha;
        let fit = qreg::fit_quantile_with(w, &y_alpha, tau, &opts.solver, warm)?;
        let cov = qreg::qreg_cov(&fit, w, opts.density_bandwidth, opts.covariance)?;
        let last = w.ncols() - 1;
        let gamma = fit.coefficients[last];
        let var = cov[(last, last)];
        let wald = if var > 0.0 { gamma * gamma / var } else { f64::INFINITY };
        Ok(InnerEval { wald, fit })
    };
    inner().map_err(|e| Error::InnerFit {
        alpha,
        source: Box::new(e),
    })
}

/// `gamma' V^{-1} gamma` for the `d_hat` coefficient of the quantile
/// regression of `y - d alpha` on `[X, d_hat]`.
pub fn wald_objective(
    alpha: f64,
    ds: &EstimationDataset,
    tau: f64,
    d_hat: &DVector<f64>,
    opts: &IvqrOptions,
) -> Result<f64> {
    QuantileLevel::new(tau)?;
    let w = inner_design(ds, d_hat);
    evaluate(alpha, ds, tau, &w, opts, None).map(|e| e.wald)
}

/// Default grid from 2SLS: centre, ± `half_width_se` standard errors.
pub fn default_grid(ds: &EstimationDataset, auto: &AutoGrid, covariance: CovarianceMode) -> Result<AlphaGrid> {
    let lin = linear_iv::fit_2sls_with(
        ds,
        &linear_iv::LinearIvOptions {
            covariance,
            ..Default::default()
        },
    )?;
    let se = lin.alpha_se();
    if !(se > 0.0 && se.is_finite() && lin.alpha.is_finite()) {
        return Err(Error::Parameter(format!("2SLS anchor unusable (alpha {}, se {se})", lin.alpha)));
    }
    AlphaGrid::centered(lin.alpha, auto.half_width_se * se, auto.points, auto.refinement_rounds)
}

fn argmin(points: &[WaldPoint]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(w) = p.wald.filter(|w| !w.is_nan()) {
            // strict comparison keeps the smaller alpha on ties
            if best.is_none_or(|(_, b)| w < b) {
                best = Some((i, w));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Inverse quantile regression by grid search over the endogenous
/// coefficient.
pub fn fit_ivqr_grid(ds: &EstimationDataset, tau: f64, grid: &AlphaGrid, opts: &IvqrOptions) -> Result<IvqrFit> {
    let tau_level = QuantileLevel::new(tau)?;
    grid.validate()?;
    let fs = first_stage_fit(ds)?;
    let w = inner_design(ds, &fs.fitted);

    let mut profile: Vec<WaldPoint> = Vec::new();
    let mut warm: Option<Vec<usize>> = None;
    let mut scan = |alphas: &[f64], profile: &mut Vec<WaldPoint>| -> (usize, Vec<WaldPoint>) {
        let mut failed = 0;
        let mut pts = Vec::with_capacity(alphas.len());
        for &a in alphas {
            match evaluate(a, ds, tau, &w, opts, warm.as_deref()) {
                Ok(e) => {
                    warm = Some(e.fit.basis.clone());
                    pts.push(WaldPoint { alpha: a, wald: Some(e.wald) });
                }
                Err(_) => {
                    failed += 1;
                    pts.push(WaldPoint { alpha: a, wald: None });
                }
            }
        }
        profile.extend(pts.iter().copied());
        (failed, pts)
    };

    let coarse = grid.points();
    let (failed, pts) = scan(&coarse, &mut profile);
    if failed as f64 > opts.max_inner_failure_rate * coarse.len() as f64 {
        return Err(Error::GridInstability {
            failed,
            total: coarse.len(),
        });
    }
    let boundary_err = |alpha: f64, profile: &[WaldPoint]| {
        let mut p = profile.to_vec();
        p.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        Error::GridBoundary {
            alpha,
            lower: grid.lower,
            upper: grid.upper,
            profile: p,
        }
    };
    let k = argmin(&pts).ok_or(Error::GridInstability {
        failed,
        total: coarse.len(),
    })?;
    if k == 0 || k == pts.len() - 1 {
        return Err(boundary_err(pts[k].alpha, &profile));
    }
    let mut incumbent = pts[k];
    let mut step = grid.step;
    for _ in 0..grid.refinement_rounds {
        let lo = (incumbent.alpha - step).max(grid.lower);
        let hi = (incumbent.alpha + step).min(grid.upper);
        step /= 10.0;
        let local: Vec<f64> = AlphaGrid {
            lower: lo,
            upper: hi,
            step,
            refinement_rounds: 0,
        }
        .points();
        let (_, pts) = scan(&local, &mut profile);
        if let Some(j) = argmin(&pts) {
            let cand = pts[j];
            let better = match (cand.wald, incumbent.wald) {
                (Some(c), Some(i)) => c < i || (c == i && cand.alpha < incumbent.alpha),
                (Some(_), None) => true,
                _ => false,
            };
            if better {
                incumbent = cand;
            }
        }
    }
    let wald_at_min = incumbent.wald.unwrap_or(f64::NAN);
    if !wald_at_min.is_finite() {
        return Err(Error::NonFiniteWald(incumbent.alpha));
    }
    if incumbent.alpha <= grid.lower || incumbent.alpha >= grid.upper {
        return Err(boundary_err(incumbent.alpha, &profile));
    }

    let alpha = incumbent.alpha;
    let e = evaluate(alpha, ds, tau, &w, opts, warm.as_deref())?;
    let p = ds.p_x();
    let beta = e.fit.coefficients.rows(0, p).into_owned();
    let residuals = &ds.y - &ds.d * alpha - &ds.x * &beta;

    profile.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    profile.dedup_by(|a, b| a.alpha == b.alpha);
    let mut fit = IvqrFit {
        tau: tau_level,
        alpha,
        beta,
        wald_at_min,
        wald_profile: profile,
        covariance: DMatrix::zeros(p + 1, p + 1),
        residuals,
        method: IvqrMethod::Grid,
        fallback_reason: None,
        n: ds.n(),
        grid: Some(*grid),
        smoothing: None,
    };
    fit.covariance = ivqr_covariance(&fit, ds, &fs.fitted, opts)?;
    Ok(fit)
}

/// Piecewise-linear smoothed indicator: 1 below -1, 0 above 1, `(1 - v)/2`
/// in between.
#[inline]
pub fn smoothed_indicator(v: f64) -> f64 {
    if v <= -1.0 {
        1.0
    } else if v >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 - v)
    }
}

fn intercept_index(ds: &EstimationDataset) -> Option<usize> {
    (0..ds.p_x()).find(|&j| ds.x.column(j).iter().all(|&v| v == 1.0))
}

/// Moment vector `(1/n) sum (I~(r/h) - tau) psi_i` and its Jacobian.
fn smoothed_moments(
    theta: &DVector<f64>,
    regressors: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    h: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, k) = psi.shape();
    let r = y - regressors * theta;
    let mut m = DVector::zeros(k);
    let mut g = DMatrix::zeros(k, k);
    let scale = 1.0 / (2.0 * n as f64 * h);
    for i in 0..n {
        let v = r[i] / h;
        let c = smoothed_indicator(v) - tau;
        for a in 0..k {
            m[a] += c * psi[(i, a)];
        }
        if v > -1.0 && v < 1.0 {
            for a in 0..k {
                let pa = psi[(i, a)] * scale;
                for b in 0..k {
                    g[(a, b)] += pa * regressors[(i, b)];
                }
            }
        }
    }
    m /= n as f64;
    (m, g)
}

/// Starting point with the given `alpha`: `beta` from the quantile
/// regression of `y - d alpha` on `X`.
fn profile_start(ds: &EstimationDataset, tau: f64, alpha: f64, solver: &SolverOptions) -> Result<DVector<f64>> {
    let fit = qreg::fit_quantile_with(&ds.x, &(&ds.y - &ds.d * alpha), tau, solver, None)?;
    let mut theta = DVector::zeros(ds.p_x() + 1);
    theta[0] = alpha;
    theta.rows_mut(1, ds.p_x()).copy_from(&fit.coefficients);
    Ok(theta)
}

/// Smoothed-moment GMM estimator. `start` is `[alpha, beta]`; when absent
/// the 2SLS slope is used.
pub fn fit_ivqr_smoothed(
    ds: &EstimationDataset,
    tau: f64,
    bandwidth: SmoothingRule,
    start: Option<&DVector<f64>>,
    opts: &IvqrOptions,
) -> Result<IvqrFit> {
    let tau_level = QuantileLevel::new(tau)?;
    if ds.p_z() < ds.p_d() {
        return Err(Error::Parameter("fewer instruments than endogenous regressors".into()));
    }
    if let SmoothingRule::Fixed(h) = bandwidth {
        if !(h > 0.0) {
            return Err(Error::Parameter(format!("smoothing bandwidth must be positive, got {h}")));
        }
    }
    let fs = first_stage_fit(ds)?;
    let psi = moment_instruments(ds, &fs.fitted);
    let regressors = ds.regressors();
    let k = regressors.ncols();

    let lin = linear_iv::fit_2sls(ds)?;
    let lin_se = lin.alpha_se().max(1e-8 * (1.0 + lin.alpha.abs()));
    let mut starts: Vec<DVector<f64>> = Vec::new();
    if let Some(s) = start {
        if s.len() != k {
            return Err(Error::Parameter(format!("start vector has length {}, expected {k}", s.len())));
        }
        starts.push(s.clone());
    }
    let mut alphas = vec![lin.alpha];
    for j in 1..=opts.newton_restarts {
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        alphas.push(lin.alpha + sign * lin_se * ((j + 1) / 2) as f64);
    }
    for a in alphas {
        if starts.len() > opts.newton_restarts {
            break;
        }
        starts.push(profile_start(ds, tau, a, &opts.solver)?);
    }

    let intercept = intercept_index(ds).map(|j| j + 1);
    let resid_at = |theta: &DVector<f64>| -> DVector<f64> { &ds.y - &regressors * theta };
    let psi_scale = (0..k)
        .map(|j| psi.column(j).iter().map(|v| v.abs()).sum::<f64>() / ds.n() as f64)
        .fold(0.0f64, f64::max);
    let tol = 1e-10 * (1.0 + psi_scale);

    let mut last = starts[0].clone();
    let mut last_norm = f64::INFINITY;
    for (attempt, mut theta) in starts.into_iter().enumerate() {
        // centre the intercept so that a tau share of residuals is negative
        if let Some(c) = intercept {
            let r = resid_at(&theta);
            theta[c] += stats::sample_quantile(r.as_slice(), tau);
        }
        let h = SmoothingBandwidth::resolve(bandwidth, resid_at(&theta).as_slice())?;
        let (mut m, mut g) = smoothed_moments(&theta, &regressors, &psi, &ds.y, tau, h.value);
        let mut norm = m.amax();
        for _ in 0..opts.newton_max_iterations {
            if norm <= tol {
                break;
            }
            let Some(step) = g.clone().lu().solve(&m) else { break };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &theta - &step * t;
                let (mc, gc) = smoothed_moments(&cand, &regressors, &psi, &ds.y, tau, h.value);
                let nc = mc.amax();
                if nc.is_finite() && nc < norm {
                    theta = cand;
                    m = mc;
                    g = gc;
                    norm = nc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if norm <= tol {
            let alpha = theta[0];
            let beta = theta.rows(1, k - 1).into_owned();
            let residuals = resid_at(&theta);
            let w = inner_design(ds, &fs.fitted);
            let wald_at_min = evaluate(alpha, ds, tau, &w, opts, None).map(|e| e.wald).unwrap_or(f64::NAN);
            let mut fit = IvqrFit {
                tau: tau_level,
                alpha,
                beta,
                wald_at_min,
                wald_profile: Vec::new(),
                covariance: DMatrix::zeros(k, k),
                residuals,
                method: IvqrMethod::Smoothed,
                fallback_reason: None,
                n: ds.n(),
                grid: None,
                smoothing: Some(h),
            };
            fit.covariance = ivqr_covariance(&fit, ds, &fs.fitted, opts)?;
            return Ok(fit);
        }
        if norm < last_norm || attempt == 0 {
            last = theta;
            last_norm = norm;
        }
    }
    Err(Error::SmoothedNonConvergence {
        restarts: opts.newton_restarts,
        last: last.iter().copied().collect(),
        moment_norm: last_norm,
    })
}

fn is_fallback_error(e: &Error) -> bool {
    matches!(
        e,
        Error::GridBoundary { .. }
            | Error::GridInstability { .. }
            | Error::NonFiniteWald(_)
            | Error::NonConvergence { .. }
            | Error::InnerFit { .. }
    )
}

/// Grid search, falling back to the smoothed estimator on numerical
/// failure of the grid.
pub fn fit_ivqr_auto(ds: &EstimationDataset, tau: f64, opts: &IvqrOptions) -> Result<IvqrFit> {
    let grid = match opts.grid {
        Some(g) => g,
        None => default_grid(ds, &opts.auto_grid, opts.covariance)?,
    };
    match fit_ivqr_grid(ds, tau, &grid, opts) {
        Ok(fit) => Ok(fit),
        Err(e) if is_fallback_error(&e) => {
            let reason = e.to_string();
            match fit_ivqr_smoothed(ds, tau, opts.smoothing, None, opts) {
                Ok(mut fit) => {
                    fit.fallback_reason = Some(reason);
                    Ok(fit)
                }
                Err(s) => Err(Error::BothFailed {
                    grid: Box::new(e),
                    smoothed: Box::new(s),
                }),
            }
        }
        Err(e) => Err(e),
    }
}

/// Grid search over the default (2SLS-anchored) grid unless one is set.
pub fn fit_ivqr_grid_default(ds: &EstimationDataset, tau: f64, opts: &IvqrOptions) -> Result<IvqrFit> {
    let grid = match opts.grid {
        Some(g) => g,
        None => default_grid(ds, &opts.auto_grid, opts.covariance)?,
    };
    fit_ivqr_grid(ds, tau, &grid, opts)
}

fn ivqr_covariance(fit: &IvqrFit, ds: &EstimationDataset, d_hat: &DVector<f64>, opts: &IvqrOptions) -> Result<DMatrix<f64>> {
    let psi = moment_instruments(ds, d_hat);
    qreg::kernel_sandwich(
        fit.tau.value(),
        &fit.residuals,
        &psi,
        &ds.regressors(),
        opts.density_bandwidth,
        opts.covariance,
    )
    .map_err(|e| match e {
        Error::Singular(_) => Error::Singular("IVQR sandwich bread"),
        other => other,
    })
}

/// Kernel sandwich covariance of `[alpha, beta]` at the fitted residuals;
/// returns standard errors and the full matrix.
pub fn ivqr_se(fit: &IvqrFit, ds: &EstimationDataset, opts: &IvqrOptions) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let fs = first_stage_fit(ds)?;
    let cov = ivqr_covariance(fit, ds, &fs.fitted, opts)?;
    let se = cov.diagonal().map(|v| v.max(0.0).sqrt());
    Ok((se, cov))
}
