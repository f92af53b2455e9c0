//! Every tunable default in one place.

/// Student-t degrees of freedom used by the experiments.
pub const STUDENT_T_NU: f64 = 5.0;
/// Replications per grid cell.
pub const REPLICATIONS: usize = 100;
pub const MASTER_SEED: u64 = 20_240_601;

/// Quasi-Newton gradient-norm tolerance.
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITERS: usize = 500;
pub const ARMIJO_C: f64 = 1e-4;
pub const STEP_SHRINK: f64 = 0.5;
pub const MIN_STEP: f64 = 1e-16;
/// Secant inner products below this reset the inverse Hessian to identity.
pub const CURVATURE_GUARD: f64 = 1e-10;

/// Fixed-point iteration stopping rule on the spectral-norm step.
pub const ITER_TOL: f64 = 1e-10;
pub const ITER_MAX: usize = 100;
/// Any reweighting weight above this magnitude aborts the iteration.
pub const WEIGHT_BLOWUP: f64 = 1e8;
/// Eigenvalue floor used when an iterate loses positive definiteness.
pub const PD_FLOOR: f64 = 1e-8;

/// Gram matrices above this condition number are treated as singular.
pub const CONDITION_CAP: f64 = 1e12;
/// Jitter added to a degenerate residual covariance before it is inverted.
pub const SIGMA_JITTER: f64 = 1e-10;

pub const N_GRID: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];
pub const D_GRID: [usize; 5] = [2, 4, 8, 16, 32];
pub const DIM_SWEEP_N: usize = 256;
pub const EPS_GRID: [f64; 5] = [0.0, 0.025, 0.05, 0.1, 0.2];
/// Score matching is skipped above this dimension in dimension sweeps.
pub const SME_DIM_CAP: usize = 4;
/// Trajectory length between restarts for the dimension sweep, whose
/// tri-diagonal systems are unstable.
pub const DIM_SWEEP_BURST: usize = 4;
