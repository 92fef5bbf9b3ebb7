//! Check-loss quantile regression.
//!
//! The solver walks the vertices of the linear program behind
//! `min_b sum_i rho_tau(y_i - x_i'b)`. A vertex is a basis of `p`
//! observations fitted exactly. From a vertex each basis observation can be
//! released in either direction; the most negative directional derivative
//! picks the edge, and an exact line search over the kinks of the piecewise
//! linear objective picks the observation that enters. Every step strictly
//! decreases the objective, so the walk terminates at an exact vertex
//! solution.
//!
//! When the optimum is not unique the optimal face is explored through its
//! zero-slope edges and the lexicographically smallest vertex is returned.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Quantile level strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            Err(Error::Parameter(format!("quantile level {tau} not in (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        QuantileLevel::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// `rho_tau(u) = u (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

pub fn total_check_loss(residuals: &DVector<f64>, tau: f64) -> f64 {
    residuals.iter().map(|&u| check_loss(u, tau)).sum()
}

/// Solver limits. Defaults: 50 000 pivots, slope tolerance `1e-11` relative
/// to the edge's total kink weight, and at most 512 optimal vertices visited
/// when resolving ties.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub optimality_tol: f64,
    pub max_tie_vertices: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 50_000,
            optimality_tol: 1e-11,
            max_tie_vertices: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub iterations: usize,
    pub converged: bool,
    pub degenerate_ties: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileFit {
    pub tau: QuantileLevel,
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub objective: f64,
    pub covariance: Option<DMatrix<f64>>,
    pub solver_info: SolverInfo,
    /// Observations fitted exactly at the returned vertex.
    pub basis: Vec<usize>,
}

pub fn fit_quantile(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<QuantileFit> {
    fit_quantile_with(x, y, tau, &SolverOptions::default(), None)
}

/// Full-control entry point. `warm_start` is a basis from a related problem
/// (same `x`), used only if it is a valid nonsingular basis.
pub fn fit_quantile_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    opts: &SolverOptions,
    warm_start: Option<&[usize]>,
) -> Result<QuantileFit> {
    let tau = QuantileLevel::new(tau)?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Input(format!("x has {n} rows but y has {}", y.len())));
    }
    if n <= p {
        return Err(Error::Underdetermined { rows: n, columns: p });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in quantile regression data".into()));
    }
    let dep = stats::dependent_columns(x);
    if !dep.is_empty() {
        return Err(Error::RankDeficient {
            columns: dep.iter().map(|j| format!("column {j}")).collect(),
        });
    }

    let walker = Walker::new(x, y, tau.value(), opts);
    let start = warm_start
        .filter(|b| walker.is_valid_basis(b))
        .map(<[usize]>::to_vec)
        .map_or_else(|| walker.initial_basis(), Ok)?;
    let (basis, iterations) = walker.descend(start)?;
    let (basis, ties) = walker.resolve_ties(basis)?;
    let vertex = walker.vertex(&basis)?;
    let objective = total_check_loss(&vertex.residuals, tau.value());
    Ok(QuantileFit {
        tau,
        coefficients: vertex.coef,
        residuals: vertex.residuals,
        objective,
        covariance: None,
        solver_info: SolverInfo {
            iterations,
            converged: true,
            degenerate_ties: ties,
        },
        basis,
    })
}

struct Walker<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    tau: f64,
    opts: &'a SolverOptions,
    zero_tol: f64,
}

struct Vertex {
    coef: DVector<f64>,
    residuals: DVector<f64>,
    /// `x_i' B^{-1}`, row i holds the movement of residual i per unit step
    /// along each edge direction.
    edge: DMatrix<f64>,
}

#[derive(Clone, Copy)]
struct Edge {
    slot: usize,
    sign: f64,
    slope: f64,
    tol: f64,
}

impl<'a> Walker<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, tau: f64, opts: &'a SolverOptions) -> Self {
        let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Walker {
            x,
            y,
            tau,
            opts,
            zero_tol: 1e-12 * scale,
        }
    }

    fn basis_matrix(&self, basis: &[usize]) -> DMatrix<f64> {
        let p = self.x.ncols();
        DMatrix::from_fn(p, p, |r, c| self.x[(basis[r], c)])
    }

    fn is_valid_basis(&self, basis: &[usize]) -> bool {
        let (n, p) = self.x.shape();
        if basis.len() != p || basis.iter().any(|&i| i >= n) {
            return false;
        }
        let set: BTreeSet<_> = basis.iter().collect();
        set.len() == p && self.basis_matrix(basis).try_inverse().is_some()
    }

    /// Rows ordered by least-squares residual size, greedily kept when they
    /// add rank.
    fn initial_basis(&self) -> Result<Vec<usize>> {
        let (n, p) = self.x.shape();
        let (_, fitted) = stats::least_squares(self.x, self.y)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            (self.y[a] - fitted[a])
                .abs()
                .total_cmp(&(self.y[b] - fitted[b]).abs())
                .then(a.cmp(&b))
        });
        let mut chosen = Vec::with_capacity(p);
        let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
        for i in order {
            let row = self.x.row(i).transpose();
            let norm0 = row.norm();
            let mut v = row;
            for q in &ortho {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
            let norm = v.norm();
            if norm0 > 0.0 && norm > 1e-8 * norm0 {
                ortho.push(v / norm);
                chosen.push(i);
                if chosen.len() == p {
                    return Ok(chosen);
                }
            }
        }
        Err(Error::RankDeficient {
            columns: vec!["rows span fewer than p dimensions".into()],
        })
    }

    fn vertex(&self, basis: &[usize]) -> Result<Vertex> {
        let binv = self
            .basis_matrix(basis)
            .try_inverse()
            .ok_or(Error::Singular("simplex basis"))?;
        let yb = DVector::from_iterator(basis.len(), basis.iter().map(|&i| self.y[i]));
        let coef = &binv * yb;
        let mut residuals = self.y - self.x * &coef;
        for &i in basis {
            residuals[i] = 0.0;
        }
        let edge = self.x * binv;
        Ok(Vertex { coef, residuals, edge })
    }

    /// Directional derivatives of the objective along all `2p` edges.
    fn edges(&self, v: &Vertex, basis: &[usize]) -> Vec<Edge> {
        let (n, p) = self.x.shape();
        let tau = self.tau;
        let mut in_basis = vec![false; n];
        for &i in basis {
            in_basis[i] = true;
        }
        let mut out = Vec::with_capacity(2 * p);
        for slot in 0..p {
            // g = sum psi_i a_i over nonzero residuals; zero residuals add
            // tau|a| or (1-tau)|a| depending on the side they move to.
            let mut g = 0.0;
            let mut zero_neg = 0.0; // sum |a| with a < 0 among zero residuals
            let mut zero_pos = 0.0;
            let mut weight = 0.0;
            for i in 0..n {
                if in_basis[i] {
                    continue;
                }
                let a = v.edge[(i, slot)];
                weight += a.abs();
                let r = v.residuals[i];
                if r > self.zero_tol {
                    g += tau * a;
                } else if r < -self.zero_tol {
                    g += (tau - 1.0) * a;
                } else if a < 0.0 {
                    zero_neg += -a;
                } else {
                    zero_pos += a;
                }
            }
            let tol = self.opts.optimality_tol * (1.0 + weight);
            // sign +1: residual of the released basis point goes negative.
            let plus = -g + tau * zero_neg + (1.0 - tau) * zero_pos + (1.0 - tau);
            let minus = g + tau * zero_pos + (1.0 - tau) * zero_neg + tau;
            out.push(Edge { slot, sign: 1.0, slope: plus, tol });
            out.push(Edge { slot, sign: -1.0, slope: minus, tol });
        }
        out
    }

    /// Exact line search along `edge`; returns the observation entering the
    /// basis at the first kink where the slope turns nonnegative.
    fn ratio_test(&self, v: &Vertex, basis: &[usize], edge: Edge) -> Option<usize> {
        let n = self.x.nrows();
        let mut in_basis = vec![false; n];
        for &i in basis {
            in_basis[i] = true;
        }
        let mut kinks: Vec<(f64, f64, usize)> = Vec::new();
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            let r = v.residuals[i];
            if r.abs() <= self.zero_tol {
                continue;
            }
            let a = edge.sign * v.edge[(i, edge.slot)];
            if a == 0.0 {
                continue;
            }
            let t = r / a;
            if t > 0.0 {
                kinks.push((t, a.abs(), i));
            }
        }
        kinks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = edge.slope;
        for (_, w, i) in kinks {
            slope += w;
            if slope >= -edge.tol {
                return Some(i);
            }
        }
        None
    }

    fn descend(&self, mut basis: Vec<usize>) -> Result<(Vec<usize>, usize)> {
        let mut trace: Vec<f64> = Vec::new();
        for iter in 0..self.opts.max_iterations {
            let v = self.vertex(&basis)?;
            let edges = self.edges(&v, &basis);
            let best = edges
                .iter()
                .copied()
                .filter(|e| e.slope < -e.tol)
                .min_by(|a, b| a.slope.total_cmp(&b.slope));
            let Some(edge) = best else {
                return Ok((basis, iter));
            };
            let entering = self.ratio_test(&v, &basis, edge).ok_or(Error::NonConvergence {
                iterations: iter,
                trace: trace.clone(),
            })?;
            basis[edge.slot] = entering;
            trace.push(total_check_loss(&v.residuals, self.tau));
            if trace.len() > 16 {
                trace.remove(0);
            }
        }
        Err(Error::NonConvergence {
            iterations: self.opts.max_iterations,
            trace,
        })
    }

    /// Explores optimal vertices reachable through zero-slope edges and
    /// returns the one with the lexicographically smallest coefficients.
    fn resolve_ties(&self, basis: Vec<usize>) -> Result<(Vec<usize>, bool)> {
        let key = |b: &[usize]| b.iter().copied().collect::<BTreeSet<_>>();
        let mut seen = BTreeSet::new();
        seen.insert(key(&basis));
        let mut queue = VecDeque::from([basis.clone()]);
        let mut best = basis;
        let mut best_coef: Option<DVector<f64>> = None;
        let mut distinct = 0usize;
        let mut visited = 0usize;
        while let Some(b) = queue.pop_front() {
            visited += 1;
            let v = self.vertex(&b)?;
            let edges = self.edges(&v, &b);
            if edges.iter().any(|e| e.slope < -e.tol) && visited > 1 {
                continue;
            }
            match &best_coef {
                None => {
                    best_coef = Some(v.coef.clone());
                    distinct = 1;
                }
                Some(c) => match lex_cmp(&v.coef, c) {
                    std::cmp::Ordering::Less => {
                        best_coef = Some(v.coef.clone());
                        best = b.clone();
                        distinct += 1;
                    }
                    std::cmp::Ordering::Greater => distinct += 1,
                    std::cmp::Ordering::Equal => {}
                },
            }
            if visited >= self.opts.max_tie_vertices {
                break;
            }
            for e in edges.iter().filter(|e| e.slope.abs() <= e.tol) {
                if let Some(entering) = self.ratio_test(&v, &b, *e) {
                    let mut next = b.clone();
                    next[e.slot] = entering;
                    if seen.insert(key(&next)) {
                        queue.push_back(next);
                    }
                }
            }
        }
        Ok((best, distinct > 1))
    }
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let tol = 1e-10 * (1.0 + x.abs().max(y.abs()));
        if x < &(y - tol) {
            return std::cmp::Ordering::Less;
        }
        if x > &(y + tol) {
            return std::cmp::Ordering::Greater;
        }
    }
    std::cmp::Ordering::Equal
}

/// Bandwidth for the kernel estimate of the residual density at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum Bandwidth {
    /// Hall–Sheather rate `n^{-1/3}` in quantile units. The half-width is
    /// mapped to residual units through the normal quantile function and a
    /// robust scale, `(Q(tau + h) - Q(tau - h)) / 2`.
    HallSheather,
    /// Bofinger rate `n^{-1/5}`, mapped the same way.
    Bofinger,
    /// Fixed bandwidth in residual units.
    Fixed(f64),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::HallSheather
    }
}

/// How the score outer product is formed in sandwich covariances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lags")]
pub enum CovarianceMode {
    /// Heteroskedasticity-robust, no serial correlation.
    #[default]
    Robust,
    /// Newey–West with Bartlett weights up to `lags`.
    Hac(usize),
}

/// Bandwidth on the quantile scale.
pub fn quantile_bandwidth(tau: f64, n: usize, rule: Bandwidth) -> f64 {
    let nf = n as f64;
    let q = stats::norm_ppf(tau);
    let dens = stats::norm_pdf(q);
    let h = match rule {
        Bandwidth::HallSheather => {
            let z = stats::norm_ppf(0.975);
            nf.powf(-1.0 / 3.0) * z.powf(2.0 / 3.0) * (1.5 * dens * dens / (2.0 * q * q + 1.0)).powf(1.0 / 3.0)
        }
        Bandwidth::Bofinger => {
            nf.powf(-0.2) * (4.5 * dens.powi(4) / (2.0 * q * q + 1.0).powi(2)).powf(0.2)
        }
        Bandwidth::Fixed(_) => f64::NAN,
    };
    h.min(0.999 * tau.min(1.0 - tau))
}

/// Bandwidth in residual units.
pub fn residual_bandwidth(tau: f64, residuals: &[f64], rule: Bandwidth) -> Result<f64> {
    if let Bandwidth::Fixed(h) = rule {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("bandwidth must be positive, got {h}")));
        }
        return Ok(h);
    }
    let ht = quantile_bandwidth(tau, residuals.len(), rule);
    let scale = stats::robust_scale(residuals);
    let h = 0.5 * (stats::norm_ppf(tau + ht) - stats::norm_ppf(tau - ht)) * scale;
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Singular("residual scale for density bandwidth"))
    }
}

/// Kernel sandwich for just-identified quantile moment conditions
/// `E[(tau - 1{r <= 0}) instruments] = 0` with parameters entering through
/// `regressors`:
///
/// `J^{-1} S J^{-T}` with `J = sum f_i psi_i d_i'`, `f_i` the Gaussian
/// kernel density of residual i at zero, and `S = tau(1-tau) Psi'Psi`
/// (robust) or the Bartlett long-run variance of the scores (HAC).
pub fn kernel_sandwich(
    tau: f64,
    residuals: &DVector<f64>,
    instruments: &DMatrix<f64>,
    regressors: &DMatrix<f64>,
    bandwidth: Bandwidth,
    mode: CovarianceMode,
) -> Result<DMatrix<f64>> {
    let (n, k) = instruments.shape();
    let h = residual_bandwidth(tau, residuals.as_slice(), bandwidth)?;
    let mut jac = DMatrix::<f64>::zeros(k, regressors.ncols());
    for i in 0..n {
        let f = stats::norm_pdf(residuals[i] / h) / h;
        if f == 0.0 {
            continue;
        }
        for a in 0..k {
            let wa = f * instruments[(i, a)];
            for b in 0..regressors.ncols() {
                jac[(a, b)] += wa * regressors[(i, b)];
            }
        }
    }
    let meat = match mode {
        CovarianceMode::Robust => instruments.transpose() * instruments * (tau * (1.0 - tau)),
        CovarianceMode::Hac(lags) => {
            let mut scores = instruments.clone();
            for i in 0..n {
                let psi = if residuals[i] < 0.0 { tau - 1.0 } else { tau };
                scores.row_mut(i).scale_mut(psi);
            }
            stats::bartlett_long_run(&scores, lags)
        }
    };
    let jinv = stats::general_inverse(&jac, "density-weighted cross product")?;
    let mut cov = &jinv * meat * jinv.transpose();
    stats::symmetrize(&mut cov);
    Ok(cov)
}

/// Robust covariance of a quantile regression fit.
pub fn qreg_cov(
    fit: &QuantileFit,
    x: &DMatrix<f64>,
    bandwidth: Bandwidth,
    mode: CovarianceMode,
) -> Result<DMatrix<f64>> {
    if !fit.solver_info.converged {
        return Err(Error::Parameter("covariance requested for an unconverged fit".into()));
    }
    kernel_sandwich(fit.tau.value(), &fit.residuals, x, x, bandwidth, mode)
}

impl QuantileFit {
    pub fn with_covariance(mut self, x: &DMatrix<f64>, bandwidth: Bandwidth, mode: CovarianceMode) -> Result<Self> {
        self.covariance = Some(qreg_cov(&self, x, bandwidth, mode)?);
        Ok(self)
    }

    pub fn standard_errors(&self) -> Option<DVector<f64>> {
        self.covariance
            .as_ref()
            .map(|c| DVector::from_iterator(c.nrows(), c.diagonal().iter().map(|v| v.max(0.0).sqrt())))
    }
}
