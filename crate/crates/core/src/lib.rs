//! Joint identification of linear dynamics `x' = A x + Σ^{1/2} w` with a
//! known, possibly non-Gaussian, noise density.
//!
//! The crate provides elliptical base densities, simulators, the OLS,
//! maximum-likelihood and score-matching estimators with both quasi-Newton
//! and reweighted-OLS solvers, and a benchmark harness.

pub mod bench;
pub mod config;
pub mod defaults;
pub mod density;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod quadrature;
pub mod sim;

pub use bench::{Experiment, ExperimentSpec, ResultRow, SummaryRow, SystemSpec};
pub use config::Config;
pub use density::{BaseDensity, DensityKind, DensitySpec, EllipticalProfile, RadialProfile};
pub use error::{Error, Result};
pub use estimators::{EstimateReport, Estimator, FitConfig, Method, SolverChoice, SolverKind, WeightRule};
pub use optim::{OptimConfig, OptimStatus};
pub use sim::{Layout, SystemParams, TransitionDataset};
