//! Ground-truth systems and transition datasets for `x' = A x + Σ^{1/2} w`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::BaseDensity;
use crate::error::{Error, Result};
use crate::linalg;

/// Dynamics matrix and noise scale matrix, with a cached `Σ^{1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    a: DMatrix<f64>,
    sigma: DMatrix<f64>,
    sigma_sqrt: DMatrix<f64>,
}

impl SystemParams {
    pub fn new(a: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::Config(format!("A must be square and non-empty, got {}x{}", d, a.ncols())));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.nrows(),
            });
        }
        if a.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("system matrices must be finite".into()));
        }
        if linalg::asymmetry(&sigma) > 1e-12 {
            return Err(Error::Domain("Sigma is not symmetric".into()));
        }
        let sigma = linalg::symmetrize(&sigma);
        let sigma_sqrt = linalg::sqrt_spd(&sigma)?;
        Ok(Self { a, sigma, sigma_sqrt })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt
    }

    /// Spectral-norm errors `(‖A - A'‖, ‖Σ - Σ'‖)` against another estimate.
    pub fn errors_to(&self, other: &SystemParams) -> (f64, f64) {
        (
            linalg::spectral_norm(&(&self.a - &other.a)),
            linalg::spectral_norm(&(&self.sigma - &other.sigma)),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    SingleTrajectory,
    MultiTrajectory,
    FixedState,
}

/// Transition pairs `(x_i, x'_i)` stored as the rows of two `N x d` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    states: DMatrix<f64>,
    next_states: DMatrix<f64>,
    layout: Layout,
    seed: Option<u64>,
    truth: Option<SystemParams>,
}

impl TransitionDataset {
    pub fn new(
        states: DMatrix<f64>,
        next_states: DMatrix<f64>,
        layout: Layout,
        seed: Option<u64>,
        truth: Option<SystemParams>,
    ) -> Result<Self> {
        let d = states.ncols();
        if next_states.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: next_states.ncols(),
            });
        }
        if next_states.nrows() != states.nrows() {
            return Err(Error::DimensionMismatch {
                expected: states.nrows(),
                got: next_states.nrows(),
            });
        }
        if d == 0 || states.nrows() == 0 {
            return Err(Error::InsufficientData("dataset has no transitions".into()));
        }
        if let Some(t) = &truth {
            if t.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: t.dim() });
            }
        }
        if layout == Layout::SingleTrajectory {
            for i in 1..states.nrows() {
                if states.row(i) != next_states.row(i - 1) {
                    return Err(Error::Domain(format!(
                        "single-trajectory layout broken at pair {i}: x'_{} != x_{i}",
                        i - 1
                    )));
                }
            }
        }
        Ok(Self {
            states,
            next_states,
            layout,
            seed,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    /// `x_i` as rows.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    /// `x'_i` as rows.
    pub fn next_states(&self) -> &DMatrix<f64> {
        &self.next_states
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn truth(&self) -> Option<&SystemParams> {
        self.truth.as_ref()
    }

    /// Residuals `x'_i - A x_i` as rows.
    pub fn residuals(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.next_states - &self.states * a.transpose()
    }

    /// Applies `x -> T x` to both states; the truth is mapped accordingly.
    pub fn transformed(&self, t: &DMatrix<f64>) -> Result<Self> {
        let tinv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("transform is singular".into()))?;
        let truth = match &self.truth {
            Some(p) => Some(SystemParams::new(
                t * p.a() * &tinv,
                linalg::symmetrize(&(t * p.sigma() * t.transpose())),
            )?),
            None => None,
        };
        Self::new(
            &self.states * t.transpose(),
            &self.next_states * t.transpose(),
            self.layout,
            self.seed,
            truth,
        )
    }
}

/// Deterministic rollout: `x_{i+1} = A x_i + Σ^{1/2} w_i` for each row `w_i`
/// of `noise`, starting from `x0`.
pub fn rollout(truth: &SystemParams, x0: &DVector<f64>, noise: &DMatrix<f64>, seed: Option<u64>) -> Result<TransitionDataset> {
    let d = truth.dim();
    check_len(x0, d)?;
    if noise.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: noise.ncols() });
    }
    let n = noise.nrows();
    let mut states = DMatrix::zeros(n, d);
    let mut next = DMatrix::zeros(n, d);
    let mut x = x0.clone();
    for i in 0..n {
        let w = noise.row(i).transpose();
        let xp = truth.a() * &x + truth.sigma_sqrt() * w;
        states.set_row(i, &x.transpose());
        next.set_row(i, &xp.transpose());
        x = xp;
    }
    TransitionDataset::new(states, next, Layout::SingleTrajectory, seed, Some(truth.clone()))
}

fn check_len(x: &DVector<f64>, d: usize) -> Result<()> {
    if x.len() != d {
        Err(Error::DimensionMismatch { expected: d, got: x.len() })
    } else {
        Ok(())
    }
}

fn check_density(truth: &SystemParams, density: &BaseDensity) -> Result<()> {
    if density.dim() != truth.dim() {
        Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: density.dim(),
        })
    } else {
        Ok(())
    }
}

/// One trajectory of `n_steps` transitions from `x0`.
pub fn simulate_trajectory(
    truth: &SystemParams,
    density: &BaseDensity,
    x0: &DVector<f64>,
    n_steps: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    check_density(truth, density)?;
    if n_steps == 0 {
        return Err(Error::InsufficientData("n_steps must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = density.sample(&mut rng, n_steps);
    rollout(truth, x0, &noise, Some(seed))
}

/// `n_pairs` transitions split into bursts of `burst_len` steps, each burst
/// restarting from `x0`.
pub fn simulate_bursts(
    truth: &SystemParams,
    density: &BaseDensity,
    x0: &DVector<f64>,
    burst_len: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    check_density(truth, density)?;
    check_len(x0, truth.dim())?;
    if burst_len == 0 || n_pairs == 0 {
        return Err(Error::InsufficientData("burst length and pair count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = density.sample(&mut rng, n_pairs);
    let d = truth.dim();
    let mut states = DMatrix::zeros(n_pairs, d);
    let mut next = DMatrix::zeros(n_pairs, d);
    let mut x = x0.clone();
    for i in 0..n_pairs {
        if i % burst_len == 0 {
            x = x0.clone();
        }
        let xp = truth.a() * &x + truth.sigma_sqrt() * noise.row(i).transpose();
        states.set_row(i, &x.transpose());
        next.set_row(i, &xp.transpose());
        x = xp;
    }
    TransitionDataset::new(states, next, Layout::MultiTrajectory, Some(seed), Some(truth.clone()))
}

/// Tri-diagonal all-ones `A` with `Σ = I`.
pub fn make_tridiagonal_system(d: usize) -> Result<SystemParams> {
    if d == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let a = DMatrix::from_fn(d, d, |i, j| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
    SystemParams::new(a, DMatrix::identity(d, d))
}

/// The 2-d benchmark system `A = [[1, 2], [0, 0.5]]`, `Σ = diag(1, 4)`.
pub fn benchmark_2d_system() -> SystemParams {
    SystemParams::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.5]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]),
    )
    .expect("constant system is valid")
}

/// Transitions with the current state pinned at `x_fixed`.
pub fn make_fixed_state_dataset(
    density: &BaseDensity,
    truth: &SystemParams,
    x_fixed: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    check_density(truth, density)?;
    check_len(x_fixed, truth.dim())?;
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "fixed-state dataset needs at least 2 samples, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = density.sample(&mut rng, n);
    let d = truth.dim();
    let mean = truth.a() * x_fixed;
    let states = DMatrix::from_fn(n, d, |_, j| x_fixed[j]);
    let next = DMatrix::from_fn(n, d, |_, j| mean[j]) + &noise * truth.sigma_sqrt().transpose();
    TransitionDataset::new(states, next, Layout::FixedState, Some(seed), Some(truth.clone()))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a master seed and a path of indices.
pub fn split_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0x5851_F42D))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_band() {
        let p = make_tridiagonal_system(2).unwrap();
        assert_eq!(p.a(), &DMatrix::from_element(2, 2, 1.0));
        assert_eq!(p.sigma(), &DMatrix::identity(2, 2));
        let p1 = make_tridiagonal_system(1).unwrap();
        assert_eq!(p1.a()[(0, 0)], 1.0);
        assert_eq!(p1.sigma()[(0, 0)], 1.0);
        let p4 = make_tridiagonal_system(4).unwrap();
        assert_eq!(p4.a().row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(p4.a().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn params_validate() {
        let a = DMatrix::identity(2, 2);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(SystemParams::new(a.clone(), asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SystemParams::new(a.clone(), indef),
            Err(Error::NotPositiveDefinite(_))
        ));
        let p = SystemParams::new(a, DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let back = p.sigma_sqrt() * p.sigma_sqrt();
        assert!(linalg::spectral_norm(&(back - p.sigma())) < 1e-10);
    }

    #[test]
    fn noiseless_rollout_is_power_iteration() {
        let truth = benchmark_2d_system();
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let data = rollout(&truth, &x0, &DMatrix::zeros(6, 2), None).unwrap();
        let mut x = x0.clone();
        for i in 0..6 {
            assert_eq!(data.states().row(i).transpose(), x);
            x = truth.a() * x;
        }
    }

    #[test]
    fn fixed_state_requires_two_samples() {
        let truth = SystemParams::new(DMatrix::from_element(1, 1, 0.0), DMatrix::identity(1, 1)).unwrap();
        let g = BaseDensity::gaussian(1).unwrap();
        let x = DVector::from_element(1, 1.0);
        assert!(matches!(
            make_fixed_state_dataset(&g, &truth, &x, 1, 0),
            Err(Error::InsufficientData(_))
        ));
        let data = make_fixed_state_dataset(&g, &truth, &x, 10, 0).unwrap();
        assert_eq!(data.layout(), Layout::FixedState);
    }

    #[test]
    fn broken_trajectory_rejected() {
        let s = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let n = DMatrix::from_row_slice(2, 1, &[2.0, 3.0]);
        assert!(TransitionDataset::new(s, n, Layout::SingleTrajectory, None, None).is_err());
    }

    #[test]
    fn bursts_restart() {
        let truth = benchmark_2d_system();
        let g = BaseDensity::gaussian(2).unwrap();
        let x0 = DVector::zeros(2);
        let data = simulate_bursts(&truth, &g, &x0, 3, 10, 1).unwrap();
        for i in [0, 3, 6, 9] {
            assert_eq!(data.states().row(i).transpose(), x0);
        }
        assert_eq!(data.states().row(1), data.next_states().row(0));
    }

    #[test]
    fn split_seed_separates_paths() {
        let a = split_seed(1, &[0, 1]);
        let b = split_seed(1, &[1, 0]);
        let c = split_seed(2, &[0, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, split_seed(1, &[0, 1]));
    }
}
