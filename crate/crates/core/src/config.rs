//! JSON run configuration with flat dotted keys, e.g.
//!
//! ```json
//! { "experiment": "error_vs_n",
//!   "density": {"kind": "student_t", "nu": 5.0},
//!   "grid.n": [64, 256, 1024],
//!   "optim.grad_tol": 1e-8 }
//! ```
//!
//! Every key is optional; absent keys take the defaults of the chosen
//! experiment or command. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{Experiment, ExperimentSpec, SystemSpec};
use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::estimators::{FitConfig, Method};
use crate::io;

/// How simulated data is laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimLayout {
    SingleTrajectory,
    Bursts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,

    #[serde(rename = "grid.n", default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(rename = "grid.d", default, skip_serializing_if = "Option::is_none")]
    pub d_grid: Option<Vec<usize>>,
    #[serde(rename = "grid.eps", default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    /// Master seed of a sweep, or the seed of a single simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<Method>>,
    #[serde(rename = "sme.dim_cap", default, skip_serializing_if = "Option::is_none")]
    pub sme_dim_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<bool>,

    #[serde(rename = "sim.layout", default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<SimLayout>,
    #[serde(rename = "sim.burst_len", default, skip_serializing_if = "Option::is_none")]
    pub burst_len: Option<usize>,
    #[serde(rename = "sim.n", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "sim.dim", default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,

    /// Estimator of the `fit` command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Method>,

    #[serde(rename = "optim.grad_tol", default, skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(rename = "optim.max_iters", default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(rename = "optim.armijo_c", default, skip_serializing_if = "Option::is_none")]
    pub armijo_c: Option<f64>,
    #[serde(rename = "optim.shrink", default, skip_serializing_if = "Option::is_none")]
    pub shrink: Option<f64>,
    #[serde(rename = "optim.min_step", default, skip_serializing_if = "Option::is_none")]
    pub min_step: Option<f64>,
    #[serde(rename = "optim.curvature_guard", default, skip_serializing_if = "Option::is_none")]
    pub curvature_guard: Option<f64>,

    #[serde(rename = "fit.iter_tol", default, skip_serializing_if = "Option::is_none")]
    pub iter_tol: Option<f64>,
    #[serde(rename = "fit.iter_max", default, skip_serializing_if = "Option::is_none")]
    pub iter_max: Option<usize>,
    #[serde(rename = "fit.weight_blowup", default, skip_serializing_if = "Option::is_none")]
    pub weight_blowup: Option<f64>,
    #[serde(rename = "fit.pd_floor", default, skip_serializing_if = "Option::is_none")]
    pub pd_floor: Option<f64>,
    #[serde(rename = "fit.condition_cap", default, skip_serializing_if = "Option::is_none")]
    pub condition_cap: Option<f64>,
    #[serde(rename = "fit.sigma_jitter", default, skip_serializing_if = "Option::is_none")]
    pub sigma_jitter: Option<f64>,
    #[serde(rename = "fit.precondition", default, skip_serializing_if = "Option::is_none")]
    pub precondition: Option<bool>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_in: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results_dir: Option<PathBuf>,
}

fn positive<T: PartialOrd + Default + std::fmt::Display + Copy>(key: &str, v: Option<T>) -> Result<()> {
    match v {
        Some(x) if x <= T::default() => Err(Error::Config(format!("`{key}` must be positive, got {x}"))),
        _ => Ok(()),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Checks value ranges that the types alone do not capture.
    pub fn validate(&self) -> Result<()> {
        positive("replications", self.replications)?;
        positive("sim.n", self.n)?;
        positive("sim.dim", self.dim)?;
        positive("sim.burst_len", self.burst_len)?;
        positive("optim.grad_tol", self.grad_tol)?;
        positive("optim.max_iters", self.max_iters)?;
        positive("fit.iter_tol", self.iter_tol)?;
        positive("fit.iter_max", self.iter_max)?;
        if let Some(s) = self.shrink {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!("`optim.shrink` must lie in (0, 1), got {s}")));
            }
        }
        if let Some(c) = self.armijo_c {
            if !(c > 0.0 && c < 0.5) {
                return Err(Error::Config(format!("`optim.armijo_c` must lie in (0, 0.5), got {c}")));
            }
        }
        Ok(())
    }

    /// Fills every unset key of `self` from `other`.
    pub fn or(self, other: Config) -> Config {
        macro_rules! pick {
            ($($f:ident),*) => { Config { $($f: self.$f.or(other.$f)),* } };
        }
        pick!(
            experiment, density, system, n_grid, d_grid, eps_grid, replications, seed, estimators, sme_dim_cap,
            threads, plot, layout, burst_len, n, dim, estimator, grad_tol, max_iters, armijo_c, shrink, min_step,
            curvature_guard, iter_tol, iter_max, weight_blowup, pd_floor, condition_cap, sigma_jitter,
            precondition, dataset_in, dataset_out, results_dir
        )
    }

    pub fn fit_config(&self) -> FitConfig {
        let mut f = FitConfig::default();
        let o = &mut f.optim;
        o.grad_tol = self.grad_tol.unwrap_or(o.grad_tol);
        o.max_iters = self.max_iters.unwrap_or(o.max_iters);
        o.armijo_c = self.armijo_c.unwrap_or(o.armijo_c);
        o.shrink = self.shrink.unwrap_or(o.shrink);
        o.min_step = self.min_step.unwrap_or(o.min_step);
        o.curvature_guard = self.curvature_guard.unwrap_or(o.curvature_guard);
        f.iter_tol = self.iter_tol.unwrap_or(f.iter_tol);
        f.iter_max = self.iter_max.unwrap_or(f.iter_max);
        f.weight_blowup = self.weight_blowup.unwrap_or(f.weight_blowup);
        f.pd_floor = self.pd_floor.unwrap_or(f.pd_floor);
        f.condition_cap = self.condition_cap.unwrap_or(f.condition_cap);
        f.sigma_jitter = self.sigma_jitter.unwrap_or(f.sigma_jitter);
        f.precondition = self.precondition.unwrap_or(f.precondition);
        f
    }

    fn with_fit_config(mut self, f: &FitConfig) -> Self {
        self.grad_tol = Some(f.optim.grad_tol);
        self.max_iters = Some(f.optim.max_iters);
        self.armijo_c = Some(f.optim.armijo_c);
        self.shrink = Some(f.optim.shrink);
        self.min_step = Some(f.optim.min_step);
        self.curvature_guard = Some(f.optim.curvature_guard);
        self.iter_tol = Some(f.iter_tol);
        self.iter_max = Some(f.iter_max);
        self.weight_blowup = Some(f.weight_blowup);
        self.pd_floor = Some(f.pd_floor);
        self.condition_cap = Some(f.condition_cap);
        self.sigma_jitter = Some(f.sigma_jitter);
        self.precondition = Some(f.precondition);
        self
    }

    /// Sweep specification: defaults of the experiment overridden by every
    /// key that is set.
    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        let experiment = self
            .experiment
            .ok_or_else(|| Error::Config("no experiment given (valid: error_vs_n, error_vs_dim, iter_mle, wall_time, misspec)".into()))?;
        let mut spec = ExperimentSpec::defaults(experiment);
        if let Some(d) = self.density {
            spec.density = d;
        }
        if let Some(s) = &self.system {
            spec.system = s.clone();
        }
        if let Some(v) = &self.n_grid {
            spec.n_grid = v.clone();
        }
        if let Some(v) = &self.d_grid {
            spec.d_grid = v.clone();
        }
        if let Some(v) = &self.eps_grid {
            spec.eps_grid = v.clone();
        }
        if let Some(r) = self.replications {
            spec.replications = r;
        }
        if let Some(s) = self.seed {
            spec.master_seed = s;
        }
        if let Some(e) = &self.estimators {
            spec.estimators = e.clone();
        }
        if let Some(c) = self.sme_dim_cap {
            spec.sme_dim_cap = c;
        }
        match self.layout {
            Some(SimLayout::SingleTrajectory) => spec.burst_len = None,
            Some(SimLayout::Bursts) => {
                spec.burst_len = Some(self.burst_len.or(spec.burst_len).unwrap_or(crate::defaults::DIM_SWEEP_BURST))
            }
            None => {
                if self.burst_len.is_some() {
                    spec.burst_len = self.burst_len;
                }
            }
        }
        spec.fit = self.fit_config();
        spec.threads = self.threads.or(spec.threads);
        spec.validate()?;
        Ok(spec)
    }

    /// The fully resolved configuration of a sweep, suitable for echoing
    /// next to its results and for re-running.
    pub fn effective_for_spec(&self, spec: &ExperimentSpec) -> Config {
        Config {
            experiment: Some(spec.experiment),
            density: Some(spec.density),
            system: Some(spec.system.clone()),
            n_grid: Some(spec.n_grid.clone()),
            d_grid: Some(spec.d_grid.clone()),
            eps_grid: Some(spec.eps_grid.clone()),
            replications: Some(spec.replications),
            seed: Some(spec.master_seed),
            estimators: Some(spec.estimators.clone()),
            sme_dim_cap: Some(spec.sme_dim_cap),
            layout: Some(if spec.burst_len.is_some() {
                SimLayout::Bursts
            } else {
                SimLayout::SingleTrajectory
            }),
            burst_len: spec.burst_len,
            threads: spec.threads,
            plot: Some(self.plot.unwrap_or(false)),
            results_dir: self.results_dir.clone(),
            ..Config::default()
        }
        .with_fit_config(&spec.fit)
    }

    /// Resolved configuration of a `simulate` or `fit` run.
    pub fn effective(&self) -> Config {
        self.clone().with_fit_config(&self.fit_config())
    }
}
