use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointid::bench::{self, Experiment, SystemSpec};
use jointid::config::{Config, SimLayout};
use jointid::density::DensitySpec;
use jointid::estimators::{self, Method};
use jointid::{io, sim, Error};
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "jointid", version, about = "Joint identification of linear dynamics and non-Gaussian noise scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a transition dataset and write it as CSV plus a sidecar.
    Simulate(SimulateArgs),
    /// Fit an estimator to a stored dataset.
    Fit(FitArgs),
    /// Run a benchmark sweep and write per-run and summary CSVs.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file with flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (simulate, fit) or results directory (bench).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    dim: Option<u64>,
    /// e.g. `gaussian`, `student_t:nu=5`, `perturbed_student_t:nu=5,eps=0.1`.
    #[arg(long, value_parser = parse_density)]
    density: Option<DensitySpec>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Restart from the origin every this many steps instead of simulating
    /// one trajectory.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    burst_len: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// One of ols, mle, mle_iter, sme.
    #[arg(long, value_parser = parse_method)]
    estimator: Option<Method>,
    #[arg(long, value_parser = parse_density)]
    density: Option<DensitySpec>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// One of error_vs_n, error_vs_dim, iter_mle, wall_time, misspec.
    #[arg(long, value_parser = parse_experiment)]
    experiment: Option<Experiment>,
    #[arg(long, value_parser = parse_density)]
    density: Option<DensitySpec>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    replications: Option<u64>,
    /// Restrict the sweep to these estimators (repeatable).
    #[arg(long, value_parser = parse_method)]
    estimator: Vec<Method>,
    /// Worker threads (overrides JOINTID_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write a gnuplot script.
    #[arg(long)]
    plot: bool,
}

fn parse_density(s: &str) -> Result<DensitySpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Json(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Config::load(p).map_err(|e| match e {
            Error::Io(io) => usage(format!("cannot read config {}: {io}", p.display())),
            other => usage(other.to_string()),
        }),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let file = load_config(args.common.config.as_deref())?;
    let cli = Config {
        seed: args.common.seed,
        dataset_out: args.common.out,
        dim: args.dim.map(|d| d as usize),
        density: args.density,
        n: args.n.map(|n| n as usize),
        layout: args.burst_len.map(|_| SimLayout::Bursts),
        burst_len: args.burst_len.map(|b| b as usize),
        ..Config::default()
    };
    let cfg = cli.or(file);
    cfg.validate()?;
    let out = cfg.dataset_out.clone().ok_or_else(|| usage("simulate needs --out or `dataset_out`"))?;
    let system = cfg.system.clone();
    let dim = match (cfg.dim, &system) {
        (Some(d), _) => d,
        (None, Some(s)) => s.dims(&[2])?[0],
        (None, None) => 2,
    };
    let system = system.unwrap_or(if dim == 2 {
        SystemSpec::Benchmark2d
    } else {
        SystemSpec::Tridiagonal
    });
    if system.dims(&[dim])? != [dim] {
        return Err(usage(format!("--dim {dim} does not match the configured system")));
    }
    let truth = system.build(dim)?;
    let density = cfg
        .density
        .unwrap_or(DensitySpec::StudentT {
            nu: jointid::defaults::STUDENT_T_NU,
        })
        .build(dim)?;
    let n = cfg.n.unwrap_or(jointid::defaults::DIM_SWEEP_N);
    let seed = cfg.seed.unwrap_or(jointid::defaults::MASTER_SEED);
    let x0 = DVector::zeros(dim);
    let data = match cfg.layout {
        Some(SimLayout::Bursts) => {
            let len = cfg.burst_len.unwrap_or(jointid::defaults::DIM_SWEEP_BURST);
            sim::simulate_bursts(&truth, &density, &x0, len, n, seed)?
        }
        _ => sim::simulate_trajectory(&truth, &density, &x0, n, seed)?,
    };
    io::write_dataset(&out, &data)?;
    eprintln!("wrote {} transitions (d={dim}) to {}", data.len(), out.display());
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    let file = load_config(args.common.config.as_deref())?;
    let cli = Config {
        dataset_in: args.data,
        estimator: args.estimator,
        density: args.density,
        ..Config::default()
    };
    let cfg = cli.or(file);
    cfg.validate()?;
    let path = cfg.dataset_in.clone().ok_or_else(|| usage("fit needs --data or `dataset_in`"))?;
    let data = io::read_dataset(&path).map_err(|e| match e {
        Error::Config(m) => usage(m),
        Error::Io(io) => usage(format!("cannot read {}: {io}", path.display())),
        Error::Csv(c) => usage(format!("cannot read {}: {c}", path.display())),
        other => other.into(),
    })?;
    let method = cfg.estimator.unwrap_or(Method::Mle);
    let density = cfg
        .density
        .unwrap_or(DensitySpec::StudentT {
            nu: jointid::defaults::STUDENT_T_NU,
        })
        .build(data.dim())?;
    let (report, failure) = match estimators::fit(method, &data, &density, &cfg.fit_config()) {
        Ok(r) => (r, None),
        Err(Error::NonConvergence { status, best }) => {
            let msg = format!(
                "{method} did not converge ({status:?}) after {} iterations; gradient norm {:.3e}, stationarity residual {:.3e}",
                best.iterations, best.grad_norm_at_solution, best.stationarity_residual
            );
            (*best, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    let json = serde_json::to_string_pretty(&report.to_record()).map_err(Error::from)?;
    match &args.common.out {
        Some(out) => io::write_report(out, &report)?,
        None => println!("{json}"),
    }
    if let Some(truth) = data.truth() {
        let (ea, es) = report.errors(truth);
        let line = format!("err_A={ea:e} err_Sigma={es:e}");
        if args.common.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    if let Some(message) = failure {
        return Err(Failure { code: 1, message });
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let file = load_config(args.common.config.as_deref())?;
    let cli = Config {
        experiment: args.experiment,
        seed: args.common.seed,
        results_dir: args.common.out,
        density: args.density,
        replications: args.replications.map(|r| r as usize),
        estimators: (!args.estimator.is_empty()).then_some(args.estimator),
        threads: args.threads,
        plot: args.plot.then_some(true),
        ..Config::default()
    };
    let cfg = cli.or(file);
    cfg.validate()?;
    let spec = cfg.experiment_spec()?;
    let dir = cfg.results_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let rows = match spec.experiment {
        Experiment::Misspec => bench::run_misspec(&spec)?,
        _ => bench::run_experiment(&spec)?,
    };
    let mut summary = bench::aggregate(&rows);
    if spec.experiment == Experiment::IterMle {
        summary.extend(bench::iter_gap_summary(&spec)?);
    }
    let files = bench::write_results(&dir, spec.experiment, &rows, &summary, cfg.plot.unwrap_or(false))?;
    let mut effective = cfg.effective_for_spec(&spec);
    effective.results_dir = Some(dir.clone());
    effective.save(&dir.join("effective_config.json"))?;

    let failed = rows
        .iter()
        .filter(|r| r.status != bench::STATUS_OK && r.status != bench::STATUS_SKIPPED)
        .count();
    println!("{} rows -> {}", rows.len(), files.rows.display());
    println!("summary -> {}", files.summary.display());
    if let Some(p) = files.plot {
        println!("plot script -> {}", p.display());
    }
    if failed > 0 {
        eprintln!("{failed} fits did not converge; see the status column");
    }
    for s in &summary {
        let med = |b: Option<bench::Band>| b.map_or("-".to_owned(), |b| format!("{:.4e}", b.median));
        println!(
            "{:<16} n={:<5} d={:<3} eps={:<6} err_A={} err_Sigma={} ok={}/{}",
            s.estimator,
            s.n,
            s.d,
            s.eps,
            med(s.err_a),
            med(s.err_sigma),
            s.ok,
            s.total
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
