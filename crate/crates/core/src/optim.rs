//! Quasi-Newton minimizer and the flat parameterization of `(A, Σ)`.
//!
//! `Σ` is carried through its lower Cholesky factor `L` with the diagonal
//! stored as `log L_jj`, so every finite flat vector decodes to `Σ ≻ 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::{Error, Result};
use crate::sim::SystemParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub min_step: f64,
    pub curvature_guard: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            grad_tol: defaults::GRAD_TOL,
            max_iters: defaults::MAX_ITERS,
            armijo_c: defaults::ARMIJO_C,
            shrink: defaults::STEP_SHRINK,
            min_step: defaults::MIN_STEP,
            curvature_guard: defaults::CURVATURE_GUARD,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x_star: DVector<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: OptimStatus,
}

/// A smooth objective returning `(loss, gradient)`.
pub trait Objective {
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>);
}

impl<F> Objective for F
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self(x)
    }
}

pub struct OptimProblem<F> {
    pub dim_flat: usize,
    pub eval: F,
    pub config: OptimConfig,
}

impl<F: Objective> OptimProblem<F> {
    pub fn new(dim_flat: usize, eval: F, config: OptimConfig) -> Self {
        Self { dim_flat, eval, config }
    }
}

/// Relative loss slack tolerated by the approximate Wolfe fallback.
const ROUNDOFF: f64 = 1e-12;
const WOLFE_SIGMA: f64 = 0.9;

/// BFGS on the inverse Hessian with Armijo backtracking.
///
/// The first accepted step rescales the identity by `sᵀy / yᵀy` before the
/// secant update. Updates whose normalized curvature `sᵀy / (‖s‖‖y‖)` falls
/// below `curvature_guard` reset the inverse Hessian to the identity instead,
/// as does a failed line search, which is retried once from the identity.
pub fn minimize<F: Objective>(problem: &OptimProblem<F>, x0: &DVector<f64>) -> Result<OptimResult> {
    let cfg = &problem.config;
    let n = problem.dim_flat;
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial point is not finite".into()));
    }
    let mut x = x0.clone();
    let (mut f, mut g) = problem.eval.eval(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("objective is not finite at the initial point".into()));
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut restarted = false;
    let mut iterations = 0;
    let status = loop {
        if g.norm() <= cfg.grad_tol {
            break OptimStatus::Converged;
        }
        if iterations >= cfg.max_iters {
            break OptimStatus::MaxIters;
        }
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h.fill_with_identity();
            p = -g.clone();
            slope = -g.norm_squared();
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let xn = &x + &p * alpha;
            let (fn_, gn) = problem.eval.eval(&xn);
            let finite = fn_.is_finite() && gn.iter().all(|v| v.is_finite());
            if finite && fn_ < f && fn_ <= f + cfg.armijo_c * alpha * slope {
                break Some((xn, fn_, gn));
            }
            // Near the optimum the decrease drops below the resolution of
            // `f`; fall back to approximate Wolfe conditions on the slope.
            if finite && fn_ <= f + ROUNDOFF * f.abs() {
                let slope_new = gn.dot(&p);
                let wolfe = slope_new >= WOLFE_SIGMA * slope && slope_new <= (2.0 * cfg.armijo_c - 1.0) * slope;
                if wolfe {
                    break Some((xn, fn_, gn));
                }
            }
            alpha *= cfg.shrink;
            if alpha < cfg.min_step {
                break None;
            }
        };
        let Some((xn, fn_, gn)) = accepted else {
            if restarted {
                break OptimStatus::LineSearchFailure;
            }
            // retry once along the steepest-descent direction
            h.fill_with_identity();
            scaled = false;
            restarted = true;
            continue;
        };
        restarted = false;
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > cfg.curvature_guard * s.norm() * y.norm() {
            if !scaled {
                h *= sy / y.norm_squared();
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ, expanded
            h.ger(rho * rho * yhy + rho, &s, &s, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(-rho, &s, &hy, 1.0);
        } else {
            h.fill_with_identity();
            scaled = false;
        }
        x = xn;
        f = fn_;
        g = gn;
        iterations += 1;
    };
    Ok(OptimResult {
        grad_norm: g.norm(),
        x_star: x,
        loss: f,
        iterations,
        status,
    })
}

/// Number of free parameters for dimension `d`: `d²` for `A` plus the
/// `d(d+1)/2` entries of the Cholesky factor.
pub fn flat_len(d: usize) -> usize {
    d * d + d * (d + 1) / 2
}

/// Infers `d` from a flat length.
pub fn dim_from_flat_len(len: usize) -> Option<usize> {
    (1..=len).take_while(|&d| flat_len(d) <= len).find(|&d| flat_len(d) == len)
}

/// Encodes `(A, Σ)`: `A` row-major, then the lower Cholesky factor row by
/// row with its diagonal in log form.
pub fn flatten(params: &SystemParams) -> Result<DVector<f64>> {
    let d = params.dim();
    let chol = params
        .sigma()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("cannot flatten a non-PD Sigma".into()))?;
    let x = encode(params.a(), &chol.l());
    debug_assert_eq!(x.len(), flat_len(d));
    Ok(x)
}

pub(crate) fn encode(a: &DMatrix<f64>, l: &DMatrix<f64>) -> DVector<f64> {
    let d = a.nrows();
    let mut out = Vec::with_capacity(flat_len(d));
    for i in 0..d {
        for j in 0..d {
            out.push(a[(i, j)]);
        }
    }
    for j in 0..d {
        for k in 0..=j {
            out.push(if j == k { l[(j, j)].ln() } else { l[(j, k)] });
        }
    }
    DVector::from_vec(out)
}

/// Decodes the flat vector into `A` and the Cholesky factor `L`.
pub(crate) fn decode(d: usize, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(d, d, &x.as_slice()[..d * d]);
    let mut l = DMatrix::zeros(d, d);
    let mut idx = d * d;
    for j in 0..d {
        for k in 0..=j {
            l[(j, k)] = if j == k { x[idx].exp() } else { x[idx] };
            idx += 1;
        }
    }
    (a, l)
}

pub fn unflatten(d: usize, x: &DVector<f64>) -> Result<SystemParams> {
    if x.len() != flat_len(d) {
        return Err(Error::DimensionMismatch {
            expected: flat_len(d),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("flat parameter vector is not finite".into()));
    }
    let (a, l) = decode(d, x);
    SystemParams::new(a, &l * l.transpose())
}

/// Maps matrix gradients `∂f/∂A` and `∂f/∂Σ` (symmetric) onto the flat
/// parameterization.
pub(crate) fn pullback_gradient(l: &DMatrix<f64>, grad_a: &DMatrix<f64>, grad_sigma: &DMatrix<f64>) -> DVector<f64> {
    let d = l.nrows();
    // Σ = L Lᵀ  =>  ∂f/∂L = (G + Gᵀ) L
    let grad_l = (grad_sigma + grad_sigma.transpose()) * l;
    let mut out = Vec::with_capacity(flat_len(d));
    for i in 0..d {
        for j in 0..d {
            out.push(grad_a[(i, j)]);
        }
    }
    for j in 0..d {
        for k in 0..=j {
            out.push(if j == k { grad_l[(j, j)] * l[(j, j)] } else { grad_l[(j, k)] });
        }
    }
    DVector::from_vec(out)
}
