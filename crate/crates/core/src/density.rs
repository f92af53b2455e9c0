//! Base noise densities: log-density, score, elliptical weight functions and
//! samplers.
//!
//! Every built-in density is elliptical, `phi(w) = psi(wᵀw)`, so the gradient
//! and Hessian of `log phi` collapse onto two scalar functions of `z = wᵀw`:
//!
//! ```text
//! grad log phi(w) = rho(z) w
//! hess log phi(w) = rho(z) I + tau(z) w wᵀ
//! rho(z) = 2 (log psi)'(z),   tau(z) = 4 (log psi)''(z)
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature;

/// Relative tail-mass proxy above which a radial normalization is rejected.
const TAIL_TOLERANCE: f64 = 1e-6;

/// Radial part of an elliptical density, in terms of `z = wᵀw`.
///
/// Implementors supply `log psi` (normalized, so the density integrates to one)
/// and its first three derivatives. The third derivative enters the gradient
/// of the score-matching loss.
pub trait RadialProfile: Send + Sync + fmt::Debug {
    fn log_psi(&self, z: f64) -> f64;

    /// `[(log psi)', (log psi)'', (log psi)''']` at `z`.
    fn log_psi_derivatives(&self, z: f64) -> [f64; 3];

    /// Optional exact draw of the radius `|w|`. When `None`, sampling falls
    /// back to a tabulated inverse CDF of the radial law.
    fn sample_radius(&self, _rng: &mut dyn RngCore) -> Option<f64> {
        None
    }
}

/// `rho`, `tau` and `tau'` at a single `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialWeights {
    pub rho: f64,
    pub tau: f64,
    pub tau_prime: f64,
}

impl RadialWeights {
    /// `rho' = tau / 2`.
    pub fn rho_prime(&self) -> f64 {
        0.5 * self.tau
    }
}

/// Shared handle on a radial profile with the derived `rho`/`tau` weights.
#[derive(Clone, Debug)]
pub struct EllipticalProfile(Arc<dyn RadialProfile>);

impl EllipticalProfile {
    pub fn new(profile: Arc<dyn RadialProfile>) -> Self {
        Self(profile)
    }

    pub fn log_psi(&self, z: f64) -> f64 {
        self.0.log_psi(z)
    }

    pub fn rho(&self, z: f64) -> f64 {
        2.0 * self.0.log_psi_derivatives(z)[0]
    }

    pub fn tau(&self, z: f64) -> f64 {
        4.0 * self.0.log_psi_derivatives(z)[1]
    }

    pub fn rho_tau(&self, z: f64) -> (f64, f64) {
        let [d1, d2, _] = self.0.log_psi_derivatives(z);
        (2.0 * d1, 4.0 * d2)
    }

    pub fn weights(&self, z: f64) -> RadialWeights {
        let [d1, d2, d3] = self.0.log_psi_derivatives(z);
        RadialWeights {
            rho: 2.0 * d1,
            tau: 4.0 * d2,
            tau_prime: 4.0 * d3,
        }
    }

    fn inner(&self) -> &dyn RadialProfile {
        self.0.as_ref()
    }
}

#[derive(Debug, Clone, Copy)]
struct GaussianProfile {
    log_norm: f64,
}

impl GaussianProfile {
    fn new(dim: usize) -> Self {
        Self {
            log_norm: -0.5 * dim as f64 * (2.0 * PI).ln(),
        }
    }
}

impl RadialProfile for GaussianProfile {
    fn log_psi(&self, z: f64) -> f64 {
        self.log_norm - 0.5 * z
    }

    fn log_psi_derivatives(&self, _z: f64) -> [f64; 3] {
        [-0.5, 0.0, 0.0]
    }
}

/// Unit-covariance Student-t: scale `(nu - 2)/nu * I`.
#[derive(Debug, Clone, Copy)]
struct StudentTProfile {
    /// `nu - 2`
    shift: f64,
    /// `(nu + d) / 2`
    half_power: f64,
    log_norm: f64,
}

impl StudentTProfile {
    fn new(dim: usize, nu: f64) -> Self {
        let d = dim as f64;
        Self {
            shift: nu - 2.0,
            half_power: 0.5 * (nu + d),
            log_norm: ln_gamma(0.5 * (nu + d)) - ln_gamma(0.5 * nu) - 0.5 * d * ((nu - 2.0) * PI).ln(),
        }
    }
}

impl RadialProfile for StudentTProfile {
    fn log_psi(&self, z: f64) -> f64 {
        self.log_norm - self.half_power * (z / self.shift).ln_1p()
    }

    fn log_psi_derivatives(&self, z: f64) -> [f64; 3] {
        let s = self.shift + z;
        let k = self.half_power;
        [-k / s, k / (s * s), -2.0 * k / (s * s * s)]
    }
}

/// Student-t with `wᵀw` replaced by `(wᵀw)^(1+eps)` in the shape term,
/// renormalized by its integral `Z_eps`.
#[derive(Debug, Clone, Copy)]
struct PerturbedTProfile {
    shift: f64,
    half_power: f64,
    eps: f64,
    log_norm: f64,
    /// At `eps == 0` the profile is exactly the Student-t one.
    exact: Option<StudentTProfile>,
}

impl PerturbedTProfile {
    fn kernel_log(shift: f64, half_power: f64, eps: f64, z: f64) -> f64 {
        -half_power * (z.powf(1.0 + eps) / shift).ln_1p()
    }
}

impl RadialProfile for PerturbedTProfile {
    fn log_psi(&self, z: f64) -> f64 {
        if let Some(t) = &self.exact {
            return t.log_psi(z);
        }
        Self::kernel_log(self.shift, self.half_power, self.eps, z) - self.log_norm
    }

    fn log_psi_derivatives(&self, z: f64) -> [f64; 3] {
        if let Some(t) = &self.exact {
            return t.log_psi_derivatives(z);
        }
        // z^(eps-1) is singular at the origin; the Hessian only ever uses tau
        // multiplied by w wᵀ, which vanishes there.
        let z = z.max(f64::MIN_POSITIVE);
        let (c, k, e) = (self.shift, self.half_power, self.eps);
        let p = 1.0 + e;
        let zp = z.powf(p);
        let h = 1.0 + zp / c;
        let h1 = p * zp / z / c;
        let h2 = p * e * zp / (z * z) / c;
        let h3 = p * e * (e - 1.0) * zp / (z * z * z) / c;
        let g1 = h1 / h;
        [
            -k * g1,
            -k * (h2 / h - g1 * g1),
            -k * (h3 / h - 3.0 * g1 * h2 / h + 2.0 * g1 * g1 * g1),
        ]
    }
}

/// Returns the normalizer `Z_eps = ∫ (1 + (wᵀw)^(1+eps)/(nu-2))^(-(nu+d)/2) dw`
/// of the perturbed Student-t kernel over R^d.
pub fn normalize_perturbed_t(nu: f64, eps: f64, dim: usize) -> Result<f64> {
    validate_nu(nu)?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("perturbation eps must be >= 0, got {eps}")));
    }
    if dim == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let shift = nu - 2.0;
    let half_power = 0.5 * (nu + dim as f64);
    let integral = quadrature::integrate_radial_kernel(dim, |z| {
        PerturbedTProfile::kernel_log(shift, half_power, eps, z)
    });
    if !(integral.value.is_finite() && integral.value > 0.0) || integral.tail_proxy > TAIL_TOLERANCE * integral.value
    {
        return Err(Error::Config(format!(
            "perturbed Student-t (nu={nu}, eps={eps}, d={dim}) is not normalizable on [0, {:.0e}]: \
             integral {:.6e}, tail proxy {:.3e}",
            quadrature::RADIAL_CUTOFF,
            integral.value,
            integral.tail_proxy
        )));
    }
    Ok(integral.value)
}

fn validate_nu(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 2.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "Student-t degrees of freedom must be finite and > 2, got {nu}"
        )))
    }
}

#[derive(Clone, Debug)]
pub enum DensityKind {
    Gaussian,
    StudentT { nu: f64 },
    PerturbedStudentT { nu: f64, eps: f64, normalizer: f64 },
    CustomElliptical,
}

/// Value, gradient and Hessian of `log phi` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct LogDensityDerivatives {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Unit-mean-zero noise density on R^d.
#[derive(Clone, Debug)]
pub struct BaseDensity {
    dim: usize,
    kind: DensityKind,
    profile: EllipticalProfile,
    radial_table: Arc<OnceLock<RadialTable>>,
}

impl BaseDensity {
    pub fn gaussian(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::from_parts(dim, DensityKind::Gaussian, Arc::new(GaussianProfile::new(dim))))
    }

    pub fn student_t(dim: usize, nu: f64) -> Result<Self> {
        check_dim(dim)?;
        validate_nu(nu)?;
        Ok(Self::from_parts(
            dim,
            DensityKind::StudentT { nu },
            Arc::new(StudentTProfile::new(dim, nu)),
        ))
    }

    pub fn perturbed_student_t(dim: usize, nu: f64, eps: f64) -> Result<Self> {
        check_dim(dim)?;
        let normalizer = normalize_perturbed_t(nu, eps, dim)?;
        let profile = PerturbedTProfile {
            shift: nu - 2.0,
            half_power: 0.5 * (nu + dim as f64),
            eps,
            log_norm: normalizer.ln(),
            exact: (eps == 0.0).then(|| StudentTProfile::new(dim, nu)),
        };
        Ok(Self::from_parts(
            dim,
            DensityKind::PerturbedStudentT { nu, eps, normalizer },
            Arc::new(profile),
        ))
    }

    /// User-supplied elliptical density.
    pub fn custom_elliptical(dim: usize, profile: Arc<dyn RadialProfile>) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::from_parts(dim, DensityKind::CustomElliptical, profile))
    }

    fn from_parts(dim: usize, kind: DensityKind, profile: Arc<dyn RadialProfile>) -> Self {
        Self {
            dim,
            kind,
            profile: EllipticalProfile::new(profile),
            radial_table: Arc::new(OnceLock::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, DensityKind::Gaussian)
    }

    pub fn profile(&self) -> &EllipticalProfile {
        &self.profile
    }

    fn check_point(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite point".into()));
        }
        Ok(())
    }

    /// `log phi(w)`, normalized.
    pub fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_point(w)?;
        Ok(self.profile.log_psi(w.norm_squared()))
    }

    pub fn score(&self, w: &DVector<f64>) -> Result<LogDensityDerivatives> {
        self.check_point(w)?;
        let z = w.norm_squared();
        let (rho, tau) = self.profile.rho_tau(z);
        let grad = w * rho;
        let mut hess = DMatrix::identity(self.dim, self.dim) * rho;
        if z > 0.0 {
            hess += (w * w.transpose()) * tau;
        }
        Ok(LogDensityDerivatives {
            value: self.profile.log_psi(z),
            grad,
            hess,
        })
    }

    /// `(rho(z), tau(z))` of the elliptical profile.
    pub fn rho_tau(&self, z: f64) -> Result<(f64, f64)> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("rho/tau need finite z >= 0, got {z}")));
        }
        Ok(self.profile.rho_tau(z))
    }

    /// Draws `n` i.i.d. unit-noise vectors as the rows of an `n x d` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> DMatrix<f64> {
        let d = self.dim;
        let mut out = DMatrix::zeros(n, d);
        match &self.kind {
            DensityKind::Gaussian => {
                for i in 0..n {
                    for j in 0..d {
                        out[(i, j)] = rng.sample(StandardNormal);
                    }
                }
            }
            DensityKind::StudentT { nu } => {
                let chi = ChiSquared::new(*nu).expect("nu validated at construction");
                let shift = nu - 2.0;
                for i in 0..n {
                    for j in 0..d {
                        out[(i, j)] = rng.sample(StandardNormal);
                    }
                    let u: f64 = chi.sample(rng);
                    let scale = (shift / u).sqrt();
                    for j in 0..d {
                        out[(i, j)] *= scale;
                    }
                }
            }
            DensityKind::PerturbedStudentT { .. } | DensityKind::CustomElliptical => {
                let mut dyn_rng = DynRng(rng);
                for i in 0..n {
                    let radius = match self.profile.inner().sample_radius(&mut dyn_rng) {
                        Some(r) => r,
                        None => {
                            let u: f64 = dyn_rng.0.random();
                            self.radial_table().invert(u)
                        }
                    };
                    let dir = random_direction(dyn_rng.0, d);
                    for j in 0..d {
                        out[(i, j)] = radius * dir[j];
                    }
                }
            }
        }
        out
    }

    fn radial_table(&self) -> &RadialTable {
        self.radial_table
            .get_or_init(|| RadialTable::build(self.dim, &self.profile))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::Config("dimension must be positive".into()))
    } else {
        Ok(())
    }
}

struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Tabulated CDF of the radius `|w|` on the grid `r = u / (1 - u)`.
#[derive(Debug)]
struct RadialTable {
    u: Vec<f64>,
    cdf: Vec<f64>,
}

impl RadialTable {
    const POINTS: usize = 16384;

    fn build(dim: usize, profile: &EllipticalProfile) -> Self {
        let d = dim as f64;
        let m = Self::POINTS;
        let u: Vec<f64> = (0..m).map(|j| j as f64 / m as f64).collect();
        let dens: Vec<f64> = u
            .iter()
            .map(|&u| {
                if u == 0.0 {
                    return 0.0;
                }
                let r = u / (1.0 - u);
                let jac = 1.0 / ((1.0 - u) * (1.0 - u));
                ((d - 1.0) * r.ln() + profile.log_psi(r * r)).exp() * jac
            })
            .collect();
        let mut cdf = vec![0.0; m];
        for j in 1..m {
            cdf[j] = cdf[j - 1] + 0.5 * (dens[j] + dens[j - 1]) / m as f64;
        }
        let total = cdf[m - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { u, cdf }
    }

    fn invert(&self, p: f64) -> f64 {
        let j = self.cdf.partition_point(|&c| c < p).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        let u = self.u[j - 1] + t * (self.u[j] - self.u[j - 1]);
        u / (1.0 - u)
    }
}

/// Serializable description of a built-in density, e.g.
/// `{"kind": "student_t", "nu": 5.0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Gaussian,
    StudentT { nu: f64 },
    PerturbedStudentT { nu: f64, eps: f64 },
}

impl DensitySpec {
    pub fn build(&self, dim: usize) -> Result<BaseDensity> {
        match *self {
            DensitySpec::Gaussian => BaseDensity::gaussian(dim),
            DensitySpec::StudentT { nu } => BaseDensity::student_t(dim, nu),
            DensitySpec::PerturbedStudentT { nu, eps } => BaseDensity::perturbed_student_t(dim, nu, eps),
        }
    }
}

impl fmt::Display for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensitySpec::Gaussian => write!(f, "gaussian"),
            DensitySpec::StudentT { nu } => write!(f, "student_t:nu={nu}"),
            DensitySpec::PerturbedStudentT { nu, eps } => write!(f, "perturbed_student_t:nu={nu},eps={eps}"),
        }
    }
}

/// Parses `gaussian`, `student_t:nu=5` or `perturbed_student_t:nu=5,eps=0.1`.
impl FromStr for DensitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let mut nu = crate::defaults::STUDENT_T_NU;
        let mut eps = None;
        for kv in args.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in density spec, got `{kv}`")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid number `{value}` for `{key}`")))?;
            match key.trim() {
                "nu" => nu = value,
                "eps" => eps = Some(value),
                other => return Err(Error::Config(format!("unknown density parameter `{other}`"))),
            }
        }
        match name.trim() {
            "gaussian" if args.is_empty() => Ok(DensitySpec::Gaussian),
            "gaussian" => Err(Error::Config("gaussian density takes no parameters".into())),
            "student_t" if eps.is_none() => Ok(DensitySpec::StudentT { nu }),
            "student_t" => Err(Error::Config("student_t does not take eps".into())),
            "perturbed_student_t" => Ok(DensitySpec::PerturbedStudentT {
                nu,
                eps: eps.ok_or_else(|| Error::Config("perturbed_student_t requires eps".into()))?,
            }),
            other => Err(Error::Config(format!(
                "unknown density `{other}` (expected gaussian, student_t, perturbed_student_t)"
            ))),
        }
    }
}
