//! OLS, maximum-likelihood and score-matching estimators of `(A, Σ)`.
//!
//! All likelihood-based losses are evaluated through the whitened residuals
//! `u_i = L⁻¹ r_i`, `r_i = x'_i - A x_i`, where `Σ = L Lᵀ`. For elliptical
//! base densities only `z_i = ‖u_i‖² = r_iᵀ Σ⁻¹ r_i` enters the loss.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::density::{BaseDensity, EllipticalProfile};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{self, OptimConfig, OptimProblem, OptimStatus};
use crate::sim::{Layout, SystemParams, TransitionDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ols,
    Mle,
    Sme,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ClosedForm,
    QuasiNewton,
    IterativeReweighted,
}

/// Which reweighted-OLS fixed point the iterative solver targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    Mle,
    Sme,
}

/// Estimator and solver pairs exposed to the CLI and the benchmark harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Mle,
    MleIter,
    Sme,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ols, Method::Mle, Method::MleIter, Method::Sme];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Mle => "mle",
            Method::MleIter => "mle_iter",
            Method::Sme => "sme",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}` (valid: ols, mle, mle_iter, sme)")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub optim: OptimConfig,
    pub iter_tol: f64,
    pub iter_max: usize,
    pub weight_blowup: f64,
    pub pd_floor: f64,
    pub condition_cap: f64,
    pub sigma_jitter: f64,
    /// Run quasi-Newton fits on Gram-whitened states.
    pub precondition: bool,
    /// Starting point for iterative solvers; `None` starts at OLS.
    #[serde(skip)]
    pub init: Option<SystemParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            iter_tol: defaults::ITER_TOL,
            iter_max: defaults::ITER_MAX,
            weight_blowup: defaults::WEIGHT_BLOWUP,
            pd_floor: defaults::PD_FLOOR,
            condition_cap: defaults::CONDITION_CAP,
            sigma_jitter: defaults::SIGMA_JITTER,
            precondition: false,
            init: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Jitter added to a singular `Σ̂` before it had to be inverted.
    pub jitter: Option<f64>,
    /// Number of iterates projected back onto the PD cone.
    pub pd_projections: usize,
    /// Score matching only: residual of the first-order conditions with the
    /// per-sample weights held fixed.
    pub frozen_weight_residual: Option<f64>,
    /// Score matching only: residual of `Σ = -(1/N) Σ_i (ρ_i²+2τ_i)/ρ_i r_i r_iᵀ`.
    pub reweighted_sigma_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub a: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub estimator: Estimator,
    pub solver: SolverKind,
    pub loss_value: f64,
    /// Gradient norm in the coordinates the solver worked in.
    pub grad_norm_at_solution: f64,
    pub stationarity_residual: f64,
    pub iterations: usize,
    pub wall_time_seconds: f64,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    /// The estimate as validated system parameters (fails for singular `Σ̂`).
    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::new(self.a.clone(), self.sigma.clone())
    }

    /// Spectral-norm errors `(‖Â - A‖, ‖Σ̂ - Σ‖)` against `truth`.
    pub fn errors(&self, truth: &SystemParams) -> (f64, f64) {
        (
            linalg::spectral_norm(&(&self.a - truth.a())),
            linalg::spectral_norm(&(&self.sigma - truth.sigma())),
        )
    }

    pub fn to_record(&self) -> ReportRecord {
        ReportRecord {
            estimator: self.estimator,
            solver: self.solver,
            dim: self.a.nrows(),
            a: row_major(&self.a),
            sigma: row_major(&self.sigma),
            loss: self.loss_value,
            grad_norm: self.grad_norm_at_solution,
            residual: Some(self.stationarity_residual).filter(|r| r.is_finite()),
            iterations: self.iterations,
            wall_time: self.wall_time_seconds,
            converged: self.converged,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Flat, serializable form of an [`EstimateReport`] (matrices row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub estimator: Estimator,
    pub solver: SolverKind,
    pub dim: usize,
    pub a: Vec<f64>,
    pub sigma: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    /// Absent when the residual could not be evaluated.
    pub residual: Option<f64>,
    pub iterations: usize,
    pub wall_time: f64,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl ReportRecord {
    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.dim;
        if self.a.len() != d * d || self.sigma.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: self.a.len().min(self.sigma.len()),
            });
        }
        Ok((
            DMatrix::from_row_slice(d, d, &self.a),
            DMatrix::from_row_slice(d, d, &self.sigma),
        ))
    }
}

/// Loss value with its gradient with respect to `A`, `Σ` (unconstrained
/// matrix derivative, symmetric) and the flat Cholesky parameterization.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub grad_a: DMatrix<f64>,
    pub grad_sigma: DMatrix<f64>,
    pub grad_flat: DVector<f64>,
}

/// Per-sample weights of the reweighted-OLS update
/// `Â = (Σ λ_i x'_i x_iᵀ)(Σ λ_i x_i x_iᵀ)⁻¹`, `Σ̂ = (1/N) Σ κ_i r_i r_iᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedOlsWeights {
    pub lambda: Vec<f64>,
    pub kappa: Vec<f64>,
}

/// Residuals whitened by a Cholesky factor.
struct Whitened {
    /// Residuals as rows, `N x d`.
    r: DMatrix<f64>,
    /// `Σ⁻¹ r_i` as columns, `d x N`.
    v: DMatrix<f64>,
    /// `r_iᵀ Σ⁻¹ r_i`.
    z: Vec<f64>,
    /// `Σ⁻¹`
    prec: DMatrix<f64>,
}

impl Whitened {
    fn new(a: &DMatrix<f64>, l: &DMatrix<f64>, data: &TransitionDataset) -> Option<Self> {
        let d = l.nrows();
        let r = data.residuals(a);
        let u = l.solve_lower_triangular(&r.transpose())?;
        let lt = l.transpose();
        let v = lt.solve_upper_triangular(&u)?;
        let z = u.column_iter().map(|c| c.norm_squared()).collect();
        let linv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
        let prec = linalg::symmetrize(&(linv.transpose() * &linv));
        Some(Self { r, v, z, prec })
    }
}

/// `r_iᵀ Σ⁻¹ r_i` for `Σ = L Lᵀ`.
fn mahalanobis(a: &DMatrix<f64>, l: &DMatrix<f64>, data: &TransitionDataset) -> Option<Vec<f64>> {
    let u = l.solve_lower_triangular(&data.residuals(a).transpose())?;
    Some(u.column_iter().map(|c| c.norm_squared()).collect())
}

fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma must be positive definite".into()))
}

fn check_data(data: &TransitionDataset, density: &BaseDensity) -> Result<()> {
    if data.dim() != density.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: density.dim(),
        });
    }
    Ok(())
}

fn scale_rows(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, &wi) in out.row_iter_mut().zip(w) {
        row *= wi;
    }
    out
}

fn scale_cols(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, &wi) in out.column_iter_mut().zip(w) {
        col *= wi;
    }
    out
}

/// Negative mean log-likelihood at `(A, L Lᵀ)`.
fn mle_eval(a: &DMatrix<f64>, l: &DMatrix<f64>, data: &TransitionDataset, profile: &EllipticalProfile) -> Option<LossEval> {
    let n = data.len() as f64;
    let w = Whitened::new(a, l, data)?;
    let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
    let value = -w.z.iter().map(|&z| profile.log_psi(z)).sum::<f64>() / n + log_det_half;
    let rho: Vec<f64> = w.z.iter().map(|&z| profile.rho(z)).collect();
    let v_rho = scale_cols(&w.v, &rho);
    let grad_a = &v_rho * data.states() / n;
    let grad_sigma = linalg::symmetrize(&((&v_rho * w.v.transpose()) * (0.5 / n) + &w.prec * 0.5));
    let grad_flat = optim::pullback_gradient(l, &grad_a, &grad_sigma);
    Some(LossEval {
        value,
        grad_a,
        grad_sigma,
        grad_flat,
    })
}

/// Derivatives of the summed score-matching loss with respect to `A` and to
/// the precision `M = Σ⁻¹`.
struct SmeParts {
    value: f64,
    grad_a: DMatrix<f64>,
    grad_prec: DMatrix<f64>,
    w: Whitened,
}

fn sme_parts(a: &DMatrix<f64>, l: &DMatrix<f64>, data: &TransitionDataset, profile: &EllipticalProfile) -> Option<SmeParts> {
    let d = l.nrows();
    let w = Whitened::new(a, l, data)?;
    let tr_prec = w.prec.trace();
    let n = w.z.len();
    let mut s = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut rho_sum = 0.0;
    let mut value = 0.0;
    for (i, &z) in w.z.iter().enumerate() {
        let q = w.v.column(i).norm_squared();
        let wt = profile.weights(z);
        let si = wt.rho * wt.rho + 2.0 * wt.tau;
        let si_prime = 2.0 * wt.rho * wt.rho_prime() + 2.0 * wt.tau_prime;
        value += si * q + 2.0 * wt.rho * tr_prec;
        rho_sum += wt.rho;
        s.push(si);
        c.push(si_prime * q + 2.0 * wt.rho_prime() * tr_prec);
    }
    let x = data.states();
    let v_c = scale_cols(&w.v, &c);
    let v_s = scale_cols(&w.v, &s);
    let grad_a = (&v_c * x + &w.prec * &v_s * x) * -2.0;
    let vsr = &v_s * &w.r;
    let grad_prec = w.r.transpose() * scale_rows(&w.r, &c) + &vsr + vsr.transpose() + DMatrix::identity(d, d) * (2.0 * rho_sum);
    Some(SmeParts {
        value,
        grad_a,
        grad_prec: linalg::symmetrize(&grad_prec),
        w,
    })
}

fn sme_eval(a: &DMatrix<f64>, l: &DMatrix<f64>, data: &TransitionDataset, profile: &EllipticalProfile) -> Option<LossEval> {
    let parts = sme_parts(a, l, data, profile)?;
    let prec = &parts.w.prec;
    let grad_sigma = linalg::symmetrize(&(-(prec * &parts.grad_prec * prec)));
    let grad_flat = optim::pullback_gradient(l, &parts.grad_a, &grad_sigma);
    Some(LossEval {
        value: parts.value,
        grad_a: parts.grad_a,
        grad_sigma,
        grad_flat,
    })
}

fn loss_with(
    params: &SystemParams,
    data: &TransitionDataset,
    density: &BaseDensity,
    eval: fn(&DMatrix<f64>, &DMatrix<f64>, &TransitionDataset, &EllipticalProfile) -> Option<LossEval>,
) -> Result<LossEval> {
    check_data(data, density)?;
    let l = cholesky_factor(params.sigma())?;
    eval(params.a(), &l, data, density.profile()).ok_or_else(|| Error::Domain("loss evaluation failed".into()))
}

/// `-(1/N) Σ_i log f_{A,Σ}(x'_i | x_i)` and its gradient.
pub fn mle_loss(params: &SystemParams, data: &TransitionDataset, density: &BaseDensity) -> Result<LossEval> {
    loss_with(params, data, density, mle_eval)
}

/// Empirical score-matching loss
/// `Σ_i ‖∇_{x'} log f‖² + 2 tr ∇²_{x'} log f` and its gradient.
pub fn sme_loss(params: &SystemParams, data: &TransitionDataset, density: &BaseDensity) -> Result<LossEval> {
    loss_with(params, data, density, sme_eval)
}

pub fn ols_fit(data: &TransitionDataset) -> Result<EstimateReport> {
    ols_fit_with(data, &FitConfig::default())
}

pub fn ols_fit_with(data: &TransitionDataset, config: &FitConfig) -> Result<EstimateReport> {
    let start = Instant::now();
    let (a, sigma) = ols_closed_form(data, config.condition_cap)?;
    let wall = start.elapsed().as_secs_f64();
    let n = data.len() as f64;
    let r = data.residuals(&a);
    let loss_value = r.norm_squared() / n;
    let grad = r.transpose() * data.states() * (-2.0 / n);
    let gaussian = BaseDensity::gaussian(data.dim())?;
    let (sigma_pd, jitter) = regularize(&sigma, config.sigma_jitter);
    let stationarity_residual = mle_residual_elliptical(&a, &sigma_pd, data, gaussian.profile())?;
    Ok(EstimateReport {
        a,
        sigma,
        estimator: Estimator::Ols,
        solver: SolverKind::ClosedForm,
        loss_value,
        grad_norm_at_solution: grad.norm(),
        stationarity_residual,
        iterations: 0,
        wall_time_seconds: wall,
        converged: true,
        diagnostics: Diagnostics {
            jitter,
            ..Default::default()
        },
    })
}

fn ols_closed_form(data: &TransitionDataset, cap: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = data.states();
    let xp = data.next_states();
    let a = linalg::right_solve_gram(&(xp.transpose() * x), &(x.transpose() * x), cap)?;
    let r = data.residuals(&a);
    let sigma = linalg::symmetrize(&(r.transpose() * &r / data.len() as f64));
    Ok((a, sigma))
}

/// Adds `jitter · I` when `sigma` has no Cholesky factor.
fn regularize(sigma: &DMatrix<f64>, jitter: f64) -> (DMatrix<f64>, Option<f64>) {
    if sigma.clone().cholesky().is_some() {
        return (sigma.clone(), None);
    }
    let d = sigma.nrows();
    let mut scale = jitter;
    loop {
        let s = sigma + DMatrix::identity(d, d) * scale;
        if s.clone().cholesky().is_some() {
            return (s, Some(scale));
        }
        scale *= 10.0;
    }
}

fn starting_point(data: &TransitionDataset, config: &FitConfig) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<f64>)> {
    if let Some(init) = &config.init {
        if init.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: init.dim(),
            });
        }
        return Ok((init.a().clone(), init.sigma().clone(), None));
    }
    let (a, sigma) = ols_closed_form(data, config.condition_cap)?;
    let (sigma, jitter) = regularize(&sigma, config.sigma_jitter);
    Ok((a, sigma, jitter))
}

type EvalFn = fn(&DMatrix<f64>, &DMatrix<f64>, &TransitionDataset, &EllipticalProfile) -> Option<LossEval>;

fn quasi_newton_fit(
    estimator: Estimator,
    data: &TransitionDataset,
    density: &BaseDensity,
    config: &FitConfig,
) -> Result<EstimateReport> {
    check_data(data, density)?;
    let start = Instant::now();
    let d = data.dim();
    let (a0, sigma0, jitter) = starting_point(data, config)?;
    let (eval, scale): (EvalFn, f64) = match estimator {
        Estimator::Mle => (mle_eval, 1.0),
        // the summed loss grows with N; optimize its per-sample mean
        Estimator::Sme => (sme_eval, 1.0 / data.len() as f64),
        Estimator::Ols => unreachable!("OLS has a closed form"),
    };
    let profile = density.profile();
    // Optionally optimize over B = A R with Gram = R Rᵀ, i.e. on whitened
    // states, which keeps the A block well conditioned on unit-root data.
    let (r, work) = if config.precondition {
        let gram = data.states().transpose() * data.states() / data.len() as f64;
        let r = cholesky_factor(&gram).map_err(|_| Error::RankDeficient {
            condition: linalg::condition_number_sym(&gram),
            cap: config.condition_cap,
        })?;
        let white_states = r
            .solve_lower_triangular(&data.states().transpose())
            .ok_or_else(|| Error::Domain("state whitening failed".into()))?
            .transpose();
        let white = TransitionDataset::new(white_states, data.next_states().clone(), Layout::MultiTrajectory, None, None)?;
        (r, Some(white))
    } else {
        (DMatrix::identity(d, d), None)
    };
    let white = work.as_ref().unwrap_or(data);
    let objective = |x: &DVector<f64>| {
        let (b, l) = optim::decode(d, x);
        match eval(&b, &l, white, profile) {
            Some(e) if e.value.is_finite() => (e.value * scale, e.grad_flat * scale),
            _ => (f64::INFINITY, DVector::from_element(x.len(), f64::NAN)),
        }
    };
    let x0 = optim::encode(&(&a0 * &r), &cholesky_factor(&sigma0)?);
    let problem = OptimProblem::new(optim::flat_len(d), objective, config.optim);
    let result = optim::minimize(&problem, &x0)?;
    let (b, l) = optim::decode(d, &result.x_star);
    let a = r
        .tr_solve_lower_triangular(&b.transpose())
        .ok_or_else(|| Error::Domain("state whitening failed".into()))?
        .transpose();
    let sigma = &l * l.transpose();
    let wall = start.elapsed().as_secs_f64();
    let mut report = EstimateReport {
        a,
        sigma,
        estimator,
        solver: SolverKind::QuasiNewton,
        loss_value: result.loss / scale,
        grad_norm_at_solution: result.grad_norm,
        stationarity_residual: f64::NAN,
        iterations: result.iterations,
        wall_time_seconds: wall,
        converged: result.status == OptimStatus::Converged,
        diagnostics: Diagnostics {
            jitter,
            ..Default::default()
        },
    };
    fill_residuals(&mut report, data, density)?;
    if !report.converged {
        return Err(Error::NonConvergence {
            status: result.status,
            best: Box::new(report),
        });
    }
    Ok(report)
}

fn fill_residuals(report: &mut EstimateReport, data: &TransitionDataset, density: &BaseDensity) -> Result<()> {
    report.stationarity_residual = stationarity_residual(report, data, density);
    if report.estimator == Estimator::Sme {
        let l = cholesky_factor(&report.sigma)?;
        let (frozen, sigma_eq) = sme_weighted_ols_residuals(&report.a, &l, data, density.profile())?;
        report.diagnostics.frozen_weight_residual = Some(frozen);
        report.diagnostics.reweighted_sigma_residual = Some(sigma_eq);
    }
    Ok(())
}

/// Which numerical route computes an MLE or SME fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverChoice {
    QuasiNewton,
    IterativeReweighted,
}

pub fn mle_fit(
    data: &TransitionDataset,
    density: &BaseDensity,
    solver: SolverChoice,
    config: &FitConfig,
) -> Result<EstimateReport> {
    match solver {
        SolverChoice::QuasiNewton => quasi_newton_fit(Estimator::Mle, data, density, config),
        SolverChoice::IterativeReweighted => iterative_fit(data, density, WeightRule::Mle, config),
    }
}

pub fn sme_fit(
    data: &TransitionDataset,
    density: &BaseDensity,
    solver: SolverChoice,
    config: &FitConfig,
) -> Result<EstimateReport> {
    match solver {
        SolverChoice::QuasiNewton => quasi_newton_fit(Estimator::Sme, data, density, config),
        SolverChoice::IterativeReweighted => iterative_fit(data, density, WeightRule::Sme, config),
    }
}

/// Runs one of the four estimator/solver pairs.
pub fn fit(method: Method, data: &TransitionDataset, density: &BaseDensity, config: &FitConfig) -> Result<EstimateReport> {
    match method {
        Method::Ols => ols_fit_with(data, config),
        Method::Mle => mle_fit(data, density, SolverChoice::QuasiNewton, config),
        Method::MleIter => mle_fit(data, density, SolverChoice::IterativeReweighted, config),
        Method::Sme => sme_fit(data, density, SolverChoice::QuasiNewton, config),
    }
}

fn weights_at(rule: WeightRule, z: &[f64], profile: &EllipticalProfile) -> WeightedOlsWeights {
    let (lambda, kappa) = z
        .iter()
        .map(|&z| {
            let (rho, tau) = profile.rho_tau(z);
            match rule {
                WeightRule::Mle => (-rho, -rho),
                WeightRule::Sme => {
                    let s = rho * rho + 2.0 * tau;
                    (s, -s / rho)
                }
            }
        })
        .unzip();
    WeightedOlsWeights { lambda, kappa }
}

fn weights_for(rule: WeightRule, params: &SystemParams, data: &TransitionDataset, density: &BaseDensity) -> Result<WeightedOlsWeights> {
    check_data(data, density)?;
    let l = cholesky_factor(params.sigma())?;
    let z = mahalanobis(params.a(), &l, data).ok_or_else(|| Error::Domain("whitening failed".into()))?;
    Ok(weights_at(rule, &z, density.profile()))
}

/// MLE reweighting: `λ_i = κ_i = -ρ(r_iᵀ Σ⁻¹ r_i)`.
pub fn elliptical_mle_weights(params: &SystemParams, data: &TransitionDataset, density: &BaseDensity) -> Result<WeightedOlsWeights> {
    weights_for(WeightRule::Mle, params, data, density)
}

/// Score-matching reweighting: `λ_i = ρ_i² + 2τ_i`, `κ_i = -(ρ_i² + 2τ_i)/ρ_i`.
pub fn elliptical_sme_weights(params: &SystemParams, data: &TransitionDataset, density: &BaseDensity) -> Result<WeightedOlsWeights> {
    weights_for(WeightRule::Sme, params, data, density)
}

/// One reweighted-OLS update; `Σ̂` uses the residuals of the new `Â`.
pub fn reweighted_ols_step(weights: &WeightedOlsWeights, data: &TransitionDataset, cap: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if weights.lambda.len() != data.len() || weights.kappa.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: weights.lambda.len(),
        });
    }
    let x = data.states();
    let xl = scale_rows(x, &weights.lambda);
    let gram = x.transpose() * &xl;
    let cross = data.next_states().transpose() * &xl;
    let a = linalg::right_solve_gram(&cross, &gram, cap)?;
    let r = data.residuals(&a);
    let sigma = linalg::symmetrize(&(r.transpose() * scale_rows(&r, &weights.kappa) / data.len() as f64));
    Ok((a, sigma))
}

/// Fixed-point iteration of the reweighted-OLS characterization, started at
/// OLS (or `config.init`).
pub fn iterative_fit(data: &TransitionDataset, density: &BaseDensity, rule: WeightRule, config: &FitConfig) -> Result<EstimateReport> {
    check_data(data, density)?;
    let start = Instant::now();
    let profile = density.profile();
    let (mut a, mut sigma, jitter) = starting_point(data, config)?;
    let mut pd_projections = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut l = cholesky_factor(&sigma)?;
    while iterations < config.iter_max {
        iterations += 1;
        let z = mahalanobis(&a, &l, data).ok_or_else(|| Error::Domain("whitening failed".into()))?;
        let weights = weights_at(rule, &z, profile);
        let worst = weights
            .lambda
            .iter()
            .chain(&weights.kappa)
            .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) });
        if worst > config.weight_blowup {
            return Err(Error::Divergence {
                weight: worst,
                iteration: iterations,
            });
        }
        let (a_new, mut sigma_new) = reweighted_ols_step(&weights, data, config.condition_cap)?;
        l = match sigma_new.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                sigma_new = linalg::project_pd(&sigma_new, config.pd_floor);
                pd_projections += 1;
                cholesky_factor(&sigma_new)?
            }
        };
        let step = linalg::spectral_norm(&(&a_new - &a)).max(linalg::spectral_norm(&(&sigma_new - &sigma)));
        a = a_new;
        sigma = sigma_new;
        if step <= config.iter_tol {
            converged = true;
            break;
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let estimator = match rule {
        WeightRule::Mle => Estimator::Mle,
        WeightRule::Sme => Estimator::Sme,
    };
    let eval = match rule {
        WeightRule::Mle => mle_eval(&a, &l, data, profile),
        WeightRule::Sme => sme_eval(&a, &l, data, profile).map(|mut e| {
            e.grad_flat /= data.len() as f64;
            e
        }),
    }
    .ok_or_else(|| Error::Domain("loss evaluation failed".into()))?;
    let mut report = EstimateReport {
        a,
        sigma,
        estimator,
        solver: SolverKind::IterativeReweighted,
        loss_value: eval.value,
        grad_norm_at_solution: eval.grad_flat.norm(),
        stationarity_residual: f64::NAN,
        iterations,
        wall_time_seconds: wall,
        converged,
        diagnostics: Diagnostics {
            jitter,
            pd_projections,
            ..Default::default()
        },
    };
    fill_residuals(&mut report, data, density)?;
    if !converged {
        return Err(Error::NonConvergence {
            status: OptimStatus::MaxIters,
            best: Box::new(report),
        });
    }
    Ok(report)
}

/// Elliptical MLE characterization, premultiplied by `Σ^{-1/2}`:
/// `Σ^{-1/2} (1/N) Σ ρ_i r_i x_iᵀ` and `sym(Σ^{-1/2} (Σ + (1/N) Σ ρ_i r_i r_iᵀ))`.
/// Returns the larger spectral norm.
pub fn mle_residual_elliptical(a: &DMatrix<f64>, sigma: &DMatrix<f64>, data: &TransitionDataset, profile: &EllipticalProfile) -> Result<f64> {
    let l = cholesky_factor(sigma)?;
    let w = Whitened::new(a, &l, data).ok_or_else(|| Error::Domain("whitening failed".into()))?;
    let n = data.len() as f64;
    let rho: Vec<f64> = w.z.iter().map(|&z| profile.rho(z)).collect();
    let r_rho = scale_rows(&w.r, &rho);
    let isqrt = linalg::inv_sqrt_spd(sigma)?;
    let e1 = &isqrt * r_rho.transpose() * data.states() / n;
    let e2 = linalg::symmetrize(&(&isqrt * (sigma + r_rho.transpose() * &w.r / n)));
    Ok(linalg::spectral_norm(&e1).max(linalg::spectral_norm(&e2)))
}

/// General MLE characterization through the score `g(w)` of the base density
/// at `w_i = Σ^{-1/2} r_i`: `(1/N) Σ g(w_i) x_iᵀ` and
/// `sym(Σ^{1/2} + (1/N) Σ g(w_i) r_iᵀ)`. Returns the larger spectral norm.
pub fn mle_residual_general(a: &DMatrix<f64>, sigma: &DMatrix<f64>, data: &TransitionDataset, density: &BaseDensity) -> Result<f64> {
    check_data(data, density)?;
    let d = data.dim();
    let n = data.len() as f64;
    let isqrt = linalg::inv_sqrt_spd(sigma)?;
    let sqrt = linalg::sqrt_spd(sigma)?;
    let r = data.residuals(a);
    let mut e1 = DMatrix::zeros(d, d);
    let mut e2 = DMatrix::zeros(d, d);
    for i in 0..data.len() {
        let ri = r.row(i).transpose();
        let g = density.score(&(&isqrt * &ri))?.grad;
        e1 += &g * data.states().row(i);
        e2 += &g * ri.transpose();
    }
    let e1 = e1 / n;
    let e2 = linalg::symmetrize(&(sqrt + e2 / n));
    Ok(linalg::spectral_norm(&e1).max(linalg::spectral_norm(&e2)))
}

/// First-order conditions of the score-matching loss, `(1/N) ∂/∂A` and
/// `(1/N) ∂/∂Σ⁻¹`, including the dependence of the weights on `(A, Σ)`.
pub fn sme_residual(a: &DMatrix<f64>, sigma: &DMatrix<f64>, data: &TransitionDataset, density: &BaseDensity) -> Result<f64> {
    check_data(data, density)?;
    let l = cholesky_factor(sigma)?;
    let parts = sme_parts(a, &l, data, density.profile()).ok_or_else(|| Error::Domain("whitening failed".into()))?;
    let n = data.len() as f64;
    Ok((linalg::spectral_norm(&parts.grad_a) / n).max(linalg::spectral_norm(&parts.grad_prec) / n))
}

/// Score-matching conditions with `ρ_i`, `τ_i` held fixed:
/// `(2/N) Σ⁻² Σ s_i r_i x_iᵀ` and `(1/N) Σ (2 s_i Σ⁻¹ r_i r_iᵀ + 2 ρ_i I)`,
/// plus the reweighted `Σ̂` identity. Returns `(frozen, sigma_identity)`.
fn sme_weighted_ols_residuals(a: &DMatrix<f64>, l: &DMatrix<f64>, data: &TransitionDataset, profile: &EllipticalProfile) -> Result<(f64, f64)> {
    let w = Whitened::new(a, l, data).ok_or_else(|| Error::Domain("whitening failed".into()))?;
    let d = l.nrows();
    let n = data.len() as f64;
    let (mut s, mut rho) = (Vec::new(), Vec::new());
    for &z in &w.z {
        let (r, t) = profile.rho_tau(z);
        s.push(r * r + 2.0 * t);
        rho.push(r);
    }
    let r_s = scale_rows(&w.r, &s);
    let f1 = &w.prec * &w.prec * r_s.transpose() * data.states() * (2.0 / n);
    let f2 = &w.prec * r_s.transpose() * &w.r * (2.0 / n) + DMatrix::identity(d, d) * (2.0 * rho.iter().sum::<f64>() / n);
    let frozen = linalg::spectral_norm(&f1).max(linalg::spectral_norm(&f2));
    let kappa: Vec<f64> = s.iter().zip(&rho).map(|(s, r)| s / r).collect();
    let sigma = l * l.transpose();
    let g = &sigma + w.r.transpose() * scale_rows(&w.r, &kappa) / n;
    Ok((frozen, linalg::spectral_norm(&g)))
}

/// Solver-independent optimality certificate of a fitted report: the MLE
/// characterization for OLS/MLE reports (under `density`), the score-matching
/// first-order conditions for SME reports. A singular `Σ̂` is jittered first.
pub fn stationarity_residual(report: &EstimateReport, data: &TransitionDataset, density: &BaseDensity) -> f64 {
    let (sigma, _) = regularize(&report.sigma, defaults::SIGMA_JITTER);
    let res = match report.estimator {
        Estimator::Ols | Estimator::Mle => mle_residual_elliptical(&report.a, &sigma, data, density.profile()),
        Estimator::Sme => sme_residual(&report.a, &sigma, data, density),
    };
    res.unwrap_or(f64::NAN)
}
