//! Seeded Monte-Carlo sweeps over sample size, dimension and density
//! perturbation, with CSV output and median/IQR summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::density::{BaseDensity, DensitySpec};
use crate::error::{Error, Result};
use crate::estimators::{fit, EstimateReport, FitConfig, Method};
use crate::linalg;
use crate::sim::{self, SystemParams, TransitionDataset};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "JOINTID_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    ErrorVsN,
    ErrorVsDim,
    IterMle,
    WallTime,
    Misspec,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::ErrorVsN,
        Experiment::ErrorVsDim,
        Experiment::IterMle,
        Experiment::WallTime,
        Experiment::Misspec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ErrorVsN => "error_vs_n",
            Experiment::ErrorVsDim => "error_vs_dim",
            Experiment::IterMle => "iter_mle",
            Experiment::WallTime => "wall_time",
            Experiment::Misspec => "misspec",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown experiment `{s}` (valid: error_vs_n, error_vs_dim, iter_mle, wall_time, misspec)"
            ))
        })
    }
}

/// Ground-truth system of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `A = [[1, 2], [0, 0.5]]`, `Σ = diag(1, 4)`.
    #[serde(rename = "benchmark_2d")]
    Benchmark2d,
    /// Ones on the three central diagonals, `Σ = I`; one system per entry of
    /// the dimension grid.
    Tridiagonal,
    /// Row-major matrices.
    Explicit { a: Vec<f64>, sigma: Vec<f64> },
}

impl SystemSpec {
    /// Dimensions swept for this system.
    pub fn dims(&self, d_grid: &[usize]) -> Result<Vec<usize>> {
        match self {
            SystemSpec::Benchmark2d => Ok(vec![2]),
            SystemSpec::Tridiagonal => Ok(d_grid.to_vec()),
            SystemSpec::Explicit { a, .. } => {
                let d = (a.len() as f64).sqrt().round() as usize;
                if d == 0 || d * d != a.len() {
                    return Err(Error::Config(format!("system.a must hold d*d entries, got {}", a.len())));
                }
                Ok(vec![d])
            }
        }
    }

    pub fn build(&self, d: usize) -> Result<SystemParams> {
        match self {
            SystemSpec::Benchmark2d => Ok(sim::benchmark_2d_system()),
            SystemSpec::Tridiagonal => sim::make_tridiagonal_system(d),
            SystemSpec::Explicit { a, sigma } => {
                if a.len() != d * d || sigma.len() != d * d {
                    return Err(Error::Config(format!("explicit system matrices must hold {} entries", d * d)));
                }
                SystemParams::new(DMatrix::from_row_slice(d, d, a), DMatrix::from_row_slice(d, d, sigma))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    /// Noise density of the data. For `misspec` this must be Student-t; the
    /// fits then use its perturbed version at each `eps`.
    pub density: DensitySpec,
    pub system: SystemSpec,
    pub n_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    pub estimators: Vec<Method>,
    /// Score matching is skipped (status `skipped`) above this dimension.
    pub sme_dim_cap: usize,
    /// Restart the trajectory at the origin every `burst_len` steps; `None`
    /// simulates one trajectory per replication.
    pub burst_len: Option<usize>,
    pub fit: FitConfig,
    /// Worker count; falls back to `JOINTID_THREADS`, then to all cores.
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    /// Default sweep for each experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let all = vec![Method::Ols, Method::Mle, Method::MleIter, Method::Sme];
        let mut spec = Self {
            experiment,
            density: DensitySpec::StudentT {
                nu: defaults::STUDENT_T_NU,
            },
            system: SystemSpec::Benchmark2d,
            n_grid: defaults::N_GRID.to_vec(),
            d_grid: vec![2],
            eps_grid: vec![0.0],
            replications: defaults::REPLICATIONS,
            master_seed: defaults::MASTER_SEED,
            estimators: all,
            sme_dim_cap: defaults::SME_DIM_CAP,
            burst_len: None,
            fit: FitConfig::default(),
            threads: None,
        };
        match experiment {
            Experiment::ErrorVsN | Experiment::WallTime => {}
            Experiment::ErrorVsDim => {
                spec.system = SystemSpec::Tridiagonal;
                spec.n_grid = vec![defaults::DIM_SWEEP_N];
                spec.d_grid = defaults::D_GRID.to_vec();
                spec.estimators = vec![Method::Ols, Method::Mle, Method::Sme];
                spec.burst_len = Some(defaults::DIM_SWEEP_BURST);
            }
            Experiment::IterMle => spec.estimators = vec![Method::Mle, Method::MleIter],
            Experiment::Misspec => {
                spec.eps_grid = defaults::EPS_GRID.to_vec();
                spec.estimators = vec![Method::Ols, Method::Mle];
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.d_grid.is_empty() || self.eps_grid.is_empty() {
            return Err(Error::Config("grids must be non-empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator is required".into()));
        }
        if self.n_grid.contains(&0) || self.d_grid.contains(&0) {
            return Err(Error::Config("grid sizes and dimensions must be positive".into()));
        }
        if self.eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("eps values must be finite and >= 0".into()));
        }
        if self.burst_len == Some(0) {
            return Err(Error::Config("burst_len must be >= 1".into()));
        }
        if self.experiment == Experiment::Misspec && !matches!(self.density, DensitySpec::StudentT { .. }) {
            return Err(Error::Config("misspec requires a student_t data density".into()));
        }
        self.system.dims(&self.d_grid)?;
        Ok(())
    }

    fn eps_values(&self) -> Vec<f64> {
        if self.experiment == Experiment::Misspec {
            self.eps_grid.clone()
        } else {
            vec![0.0]
        }
    }

    /// Density the estimators assume at perturbation `eps`.
    fn fit_density(&self, d: usize, eps: f64) -> Result<BaseDensity> {
        match (self.experiment, self.density) {
            (Experiment::Misspec, DensitySpec::StudentT { nu }) => BaseDensity::perturbed_student_t(d, nu, eps),
            _ => self.density.build(d),
        }
    }

    fn worker_count(&self) -> Result<usize> {
        if let Some(t) = self.threads {
            return Ok(t);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
            Err(_) => Ok(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: Experiment,
    pub estimator: Method,
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub replication: usize,
    pub seed: u64,
    #[serde(rename = "err_A")]
    pub err_a: f64,
    #[serde(rename = "err_Sigma")]
    pub err_sigma: f64,
    pub wall_time_seconds: f64,
    pub iterations: usize,
    pub status: String,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_SKIPPED: &str = "skipped";

/// Seed of one replication; shared by every estimator and every `eps`.
pub fn replication_seed(master: u64, n: usize, d: usize, replication: usize) -> u64 {
    sim::split_seed(master, &[n as u64, d as u64, replication as u64])
}

pub fn simulate(spec: &ExperimentSpec, truth: &SystemParams, density: &BaseDensity, n: usize, seed: u64) -> Result<TransitionDataset> {
    let x0 = DVector::zeros(truth.dim());
    match spec.burst_len {
        None => sim::simulate_trajectory(truth, density, &x0, n, seed),
        Some(len) => sim::simulate_bursts(truth, density, &x0, len, n, seed),
    }
}

struct Cell {
    d: usize,
    n: usize,
    truth: SystemParams,
    data_density: BaseDensity,
    /// `(eps, density assumed by the fits)`
    fits: Vec<(f64, BaseDensity)>,
}

fn cells(spec: &ExperimentSpec) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for d in spec.system.dims(&spec.d_grid)? {
        let truth = spec.system.build(d)?;
        let data_density = spec.density.build(d)?;
        let fits = spec
            .eps_values()
            .into_iter()
            .map(|eps| spec.fit_density(d, eps).map(|f| (eps, f)))
            .collect::<Result<Vec<_>>>()?;
        for &n in &spec.n_grid {
            out.push(Cell {
                d,
                n,
                truth: truth.clone(),
                data_density: data_density.clone(),
                fits: fits.clone(),
            });
        }
    }
    Ok(out)
}

fn status_of(err: &Error) -> &'static str {
    match err {
        Error::NonConvergence { status, .. } => match status {
            crate::optim::OptimStatus::MaxIters => "max_iters",
            crate::optim::OptimStatus::LineSearchFailure => "line_search_failure",
            crate::optim::OptimStatus::Converged => "not_converged",
        },
        Error::Divergence { .. } => "divergence",
        Error::RankDeficient { .. } => "rank_deficient",
        _ => "error",
    }
}

fn run_task(spec: &ExperimentSpec, cell: &Cell, replication: usize) -> Vec<ResultRow> {
    let seed = replication_seed(spec.master_seed, cell.n, cell.d, replication);
    let row = |estimator, eps, status: &str| ResultRow {
        experiment: spec.experiment,
        estimator,
        n: cell.n,
        d: cell.d,
        eps,
        replication,
        seed,
        err_a: f64::NAN,
        err_sigma: f64::NAN,
        wall_time_seconds: f64::NAN,
        iterations: 0,
        status: status.to_owned(),
    };
    let data = simulate(spec, &cell.truth, &cell.data_density, cell.n, seed);
    let mut rows = Vec::new();
    for (eps, density) in &cell.fits {
        for &method in &spec.estimators {
            let data = match &data {
                Ok(data) => data,
                Err(_) => {
                    rows.push(row(method, *eps, "simulation_error"));
                    continue;
                }
            };
            if method == Method::Sme && cell.d > spec.sme_dim_cap {
                rows.push(row(method, *eps, STATUS_SKIPPED));
                continue;
            }
            let (report, status): (Option<EstimateReport>, &str) = match fit(method, data, density, &spec.fit) {
                Ok(r) => (Some(r), STATUS_OK),
                Err(e) => {
                    let status = status_of(&e);
                    match e {
                        Error::NonConvergence { best, .. } => (Some(*best), status),
                        _ => (None, status),
                    }
                }
            };
            let mut r = row(method, *eps, status);
            if let Some(rep) = report {
                let (ea, es) = rep.errors(&cell.truth);
                r.err_a = ea;
                r.err_sigma = es;
                r.wall_time_seconds = rep.wall_time_seconds;
                r.iterations = rep.iterations;
            }
            rows.push(r);
        }
    }
    rows
}

/// Runs every cell × replication × estimator. Individual fit failures become
/// status rows; only an invalid spec is an error. Rows come back sorted by
/// `(d, n, eps, replication)` and then in `spec.estimators` order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let cells = cells(spec)?;
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.replications).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<ResultRow> = pool.install(|| {
        tasks
            .par_iter()
            .flat_map_iter(|&(c, r)| run_task(spec, &cells[c], r))
            .collect()
    });
    Ok(sort_rows(rows, spec))
}

fn sort_rows(mut rows: Vec<ResultRow>, spec: &ExperimentSpec) -> Vec<ResultRow> {
    let order = |m: Method| spec.estimators.iter().position(|&e| e == m).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        (a.d, a.n)
            .cmp(&(b.d, b.n))
            .then(a.eps.total_cmp(&b.eps))
            .then(a.replication.cmp(&b.replication))
            .then(order(a.estimator).cmp(&order(b.estimator)))
    });
    rows
}

/// Misspecified-density sweep: data from the Student-t of `spec.density`,
/// fits under its perturbation at every `eps` in `spec.eps_grid`.
pub fn run_misspec(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    if spec.experiment != Experiment::Misspec {
        return Err(Error::Config(format!("run_misspec needs experiment misspec, got {}", spec.experiment)));
    }
    run_experiment(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    ErrA,
    ErrSigma,
    WallTime,
}

impl Quantity {
    fn of(self, row: &ResultRow) -> f64 {
        match self {
            Quantity::ErrA => row.err_a,
            Quantity::ErrSigma => row.err_sigma,
            Quantity::WallTime => row.wall_time_seconds,
        }
    }
}

/// Median and interquartile band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub experiment: Experiment,
    /// Estimator name, or `mle_iter_vs_mle` for the paired gap of `iter_mle`.
    pub estimator: String,
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    /// Rows with status `ok` (the only ones aggregated).
    pub ok: usize,
    pub total: usize,
    /// `None` when the cell has no `ok` row.
    pub err_a: Option<Band>,
    pub err_sigma: Option<Band>,
    pub wall_time: Option<Band>,
}

impl SummaryRow {
    pub fn band(&self, q: Quantity) -> Option<Band> {
        match q {
            Quantity::ErrA => self.err_a,
            Quantity::ErrSigma => self.err_sigma,
            Quantity::WallTime => self.wall_time,
        }
    }

    pub fn median(&self, q: Quantity) -> Option<f64> {
        self.band(q).map(|b| b.median)
    }
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn band(values: &[f64]) -> Option<Band> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Band {
        median: quantile(&v, 0.5),
        q25: quantile(&v, 0.25),
        q75: quantile(&v, 0.75),
    })
}

type CellKey = (Experiment, Method, usize, usize, u64);

fn cell_key(r: &ResultRow) -> CellKey {
    (r.experiment, r.estimator, r.d, r.n, r.eps.to_bits())
}

/// Per-cell medians and quartiles over `ok` rows, keyed by
/// `(experiment, estimator, d, n, eps)`.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<CellKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(cell_key(r)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((experiment, estimator, d, n, eps), rs)| {
            let ok: Vec<&ResultRow> = rs.iter().copied().filter(|r| r.status == STATUS_OK).collect();
            let pick = |q: Quantity| band(&ok.iter().map(|r| q.of(r)).collect::<Vec<_>>());
            SummaryRow {
                experiment,
                estimator: estimator.name().to_owned(),
                n,
                d,
                eps: f64::from_bits(eps),
                ok: ok.len(),
                total: rs.len(),
                err_a: pick(Quantity::ErrA),
                err_sigma: pick(Quantity::ErrSigma),
                wall_time: pick(Quantity::WallTime),
            }
        })
        .collect()
}

pub const ITER_GAP_LABEL: &str = "mle_iter_vs_mle";

/// Paired distance between iterative and quasi-Newton MLE per cell: the
/// `err_*` bands hold `‖Â_iter - Â_mle‖` and `‖Σ̂_iter - Σ̂_mle‖`; the wall
/// time band holds the iteration count of the iterative solver.
///
/// Needs the fitted matrices, so it re-runs both fits on the replication data.
pub fn iter_gap_summary(spec: &ExperimentSpec) -> Result<Vec<SummaryRow>> {
    spec.validate()?;
    let cells = cells(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut out = Vec::new();
    for cell in &cells {
        let (_, density) = &cell.fits[0];
        let gaps: Vec<Option<(f64, f64, f64)>> = pool.install(|| {
            (0..spec.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed = replication_seed(spec.master_seed, cell.n, cell.d, rep);
                    let data = simulate(spec, &cell.truth, &cell.data_density, cell.n, seed).ok()?;
                    let qn = fit(Method::Mle, &data, density, &spec.fit).ok()?;
                    let it = fit(Method::MleIter, &data, density, &spec.fit).ok()?;
                    Some((
                        linalg::spectral_norm(&(&it.a - &qn.a)),
                        linalg::spectral_norm(&(&it.sigma - &qn.sigma)),
                        it.iterations as f64,
                    ))
                })
                .collect()
        });
        let ok: Vec<(f64, f64, f64)> = gaps.iter().flatten().copied().collect();
        out.push(SummaryRow {
            experiment: spec.experiment,
            estimator: ITER_GAP_LABEL.to_owned(),
            n: cell.n,
            d: cell.d,
            eps: 0.0,
            ok: ok.len(),
            total: gaps.len(),
            err_a: band(&ok.iter().map(|g| g.0).collect::<Vec<_>>()),
            err_sigma: band(&ok.iter().map(|g| g.1).collect::<Vec<_>>()),
            wall_time: band(&ok.iter().map(|g| g.2).collect::<Vec<_>>()),
        });
    }
    Ok(out)
}

/// Least-squares slope of `log(median)` against `log n` over the summary rows
/// of `estimator`.
pub fn slope_check(summary: &[SummaryRow], estimator: &str, quantity: Quantity) -> Result<f64> {
    let mut points: Vec<(usize, f64)> = summary
        .iter()
        .filter(|r| r.estimator == estimator)
        .filter_map(|r| r.median(quantity).map(|m| (r.n, m)))
        .collect();
    points.sort_by_key(|p| p.0);
    if points.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Config(format!(
            "slope_check: several cells share a sample size for `{estimator}`; filter by d and eps first"
        )));
    }
    if points.len() < 3 {
        return Err(Error::Config(format!(
            "slope_check needs at least 3 sample sizes for `{estimator}`, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(Error::Domain("slope_check needs positive finite medians".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

pub const RESULT_HEADER: [&str; 12] = [
    "experiment",
    "estimator",
    "n",
    "d",
    "eps",
    "replication",
    "seed",
    "err_A",
    "err_Sigma",
    "wall_time_seconds",
    "iterations",
    "status",
];

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.name().to_owned(),
            r.estimator.name().to_owned(),
            r.n.to_string(),
            r.d.to_string(),
            r.eps.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            r.err_a.to_string(),
            r.err_sigma.to_string(),
            r.wall_time_seconds.to_string(),
            r.iterations.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != RESULT_HEADER {
        return Err(Error::Config(format!("{}: unexpected header {}", path.display(), header.join(","))));
    }
    let mut rows = Vec::new();
    for record in r.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

pub const SUMMARY_HEADER: [&str; 17] = [
    "experiment",
    "estimator",
    "n",
    "d",
    "eps",
    "ok",
    "total",
    "err_A_median",
    "err_A_q25",
    "err_A_q75",
    "err_Sigma_median",
    "err_Sigma_q25",
    "err_Sigma_q75",
    "wall_time_median",
    "wall_time_q25",
    "wall_time_q75",
    "missing",
];

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    let cols = |b: Option<Band>| match b {
        Some(b) => [b.median.to_string(), b.q25.to_string(), b.q75.to_string()],
        None => Default::default(),
    };
    for s in summary {
        let mut rec = vec![
            s.experiment.name().to_owned(),
            s.estimator.clone(),
            s.n.to_string(),
            s.d.to_string(),
            s.eps.to_string(),
            s.ok.to_string(),
            s.total.to_string(),
        ];
        rec.extend(cols(s.err_a));
        rec.extend(cols(s.err_sigma));
        rec.extend(cols(s.wall_time));
        rec.push((s.ok == 0).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Gnuplot script plotting the summary medians with interquartile bands.
pub fn plot_script(experiment: Experiment, summary_file: &str, summary: &[SummaryRow]) -> String {
    let (x_col, x_label, log_x) = match experiment {
        Experiment::ErrorVsDim => (4, "d", false),
        Experiment::Misspec => (5, "eps", false),
        _ => (3, "N", true),
    };
    let (y_col, y_label) = match experiment {
        Experiment::WallTime => (14, "wall time [s]"),
        _ => (11, "spectral-norm error of Sigma"),
    };
    let mut labels: Vec<&str> = summary.iter().map(|s| s.estimator.as_str()).collect();
    labels.dedup();
    labels.sort_unstable();
    labels.dedup();
    let mut out = String::new();
    out.push_str("set datafile separator ','\nset key top right\n");
    out.push_str(&format!("set xlabel '{x_label}'\nset ylabel '{y_label}'\nset logscale y\n"));
    if log_x {
        out.push_str("set logscale x\n");
    }
    out.push_str(&format!("set title '{}'\nplot \\\n", experiment.name()));
    let series: Vec<String> = labels
        .iter()
        .map(|label| {
            let sel = format!("(strcol(2) eq '{label}' ? ${} : 1/0)", x_col);
            format!(
                "  '{summary_file}' skip 1 using {sel}:{lo}:{hi} with filledcurves fs transparent solid 0.2 notitle, \\\n  '{summary_file}' skip 1 using {sel}:{y} with linespoints title '{label}'",
                lo = y_col + 1,
                hi = y_col + 2,
                y = y_col,
            )
        })
        .collect();
    out.push_str(&series.join(", \\\n"));
    out.push('\n');
    out
}

/// Files written by [`write_results`].
#[derive(Clone, Debug)]
pub struct ResultFiles {
    pub rows: PathBuf,
    pub summary: PathBuf,
    pub plot: Option<PathBuf>,
}

/// Writes `<experiment>.csv`, `<experiment>_summary.csv` and optionally the
/// gnuplot script `<experiment>.gp` into `dir`.
pub fn write_results(dir: &Path, experiment: Experiment, rows: &[ResultRow], summary: &[SummaryRow], plot: bool) -> Result<ResultFiles> {
    fs::create_dir_all(dir)?;
    let name = experiment.name();
    let rows_path = dir.join(format!("{name}.csv"));
    let summary_name = format!("{name}_summary.csv");
    let summary_path = dir.join(&summary_name);
    write_rows(&rows_path, rows)?;
    write_summary(&summary_path, summary)?;
    let plot = if plot {
        let p = dir.join(format!("{name}.gp"));
        fs::write(&p, plot_script(experiment, &summary_name, summary))?;
        Some(p)
    } else {
        None
    };
    Ok(ResultFiles {
        rows: rows_path,
        summary: summary_path,
        plot,
    })
}
