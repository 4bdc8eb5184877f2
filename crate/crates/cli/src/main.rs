use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dpreg_core::datagen::{resilience_audit, ResilienceProfile};
use dpreg_core::harness::{run_experiment, run_solvers, synthesize, ExperimentConfig, ProblemInfo, Solver};
use dpreg_core::linalg::SymmetricEigen;
use dpreg_core::rng::seeded;
use dpreg_core::{sigma_norm_error, Dataset, Error, ModelSpec, NoiseFamily};

/// Private, corruption-robust linear regression experiments.
#[derive(Parser, Debug)]
#[command(name = "regress", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment grid and write the result CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the config file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Result CSV path; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one synthetic dataset.
    Gen {
        /// `linear` or `hard`.
        #[arg(long, default_value = "linear")]
        model: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Corrupted fraction (atom mass for the hard instance).
        #[arg(long, default_value_t = 0.0)]
        alpha_corrupt: f64,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Also write the true parameter, one comma-separated line.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit one solver to a dataset and print the estimate.
    Solve {
        #[arg(long)]
        solver: Solver,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        /// True parameter file; when given, the Σ-norm error is printed too.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Noise standard deviation, for the oracle threshold.
        #[arg(long, default_value_t = 1.0)]
        noise_std: f64,
    },
    /// Audit the resilience constants of a dataset.
    Audit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Config file supplying solver and generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: err.into() }
}

fn runtime(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

/// Config and parameter errors are the caller's fault; everything else is a
/// runtime failure.
fn classify(err: Error) -> Failure {
    match err {
        Error::Config { .. } | Error::InvalidParameter { .. } => usage(err),
        other => runtime(other),
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("REGRESS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| usage(anyhow!("REGRESS_SEED=`{v}`: {e}"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p).map_err(classify)?,
        None => ExperimentConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o).map_err(classify)?;
    }
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

fn read_vector(path: &PathBuf) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)?;
    text.trim()
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(runtime)
}

fn format_vector(w: &[f64]) -> String {
    w.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, overrides, out } => {
            let mut cfg = load_config(Some(&config), &overrides)?;
            if out.is_some() {
                cfg.output = out;
            }
            let result = run_experiment(&cfg).map_err(classify)?;
            for s in &result.summaries {
                println!(
                    "{} n={} kappa={} sigma={} alpha={} mean={:e} stderr={:e} failures={}",
                    s.solver, s.n, s.kappa, s.sigma, s.alpha_corrupt, s.mean, s.stderr, s.failures
                );
            }
            Ok(())
        }
        Command::Gen {
            model,
            n,
            d,
            kappa,
            sigma,
            alpha_corrupt,
            common,
            out,
            truth,
        } => {
            let mut cfg = load_config(common.config.as_ref(), &common.overrides)?;
            cfg.set("instance", &model).map_err(|e| usage(anyhow!(e)))?;
            if let Some(d) = d {
                cfg.d = d;
            } else if cfg.instance == dpreg_core::harness::Instance::Hard {
                cfg.d = 2;
            }
            cfg.n = vec![n];
            cfg.kappa = vec![kappa];
            cfg.sigma = vec![sigma];
            cfg.alpha_corrupt = vec![alpha_corrupt];
            cfg.validate().map_err(classify)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let (data, info) = synthesize(&cfg, n, kappa, sigma, alpha_corrupt, seed).map_err(classify)?;
            data.write_csv(&out).map_err(runtime)?;
            if let (Some(path), Some(w)) = (truth, info.w_star) {
                std::fs::write(&path, format_vector(&w) + "\n")
                    .with_context(|| format!("writing {}", path.display()))
                    .map_err(runtime)?;
            }
            Ok(())
        }
        Command::Solve {
            solver,
            data,
            common,
            truth,
            noise_std,
        } => {
            let cfg = load_config(common.config.as_ref(), &common.overrides)?;
            let data = Dataset::read_csv(&data).map_err(runtime)?;
            let w_star = truth.as_ref().map(read_vector).transpose()?;
            let metric = data.second_moment();
            let eig = SymmetricEigen::new(&metric).map_err(runtime)?;
            let info = ProblemInfo {
                kappa: (eig.max() / eig.min()).max(1.0),
                metric,
                w_star,
                noise_std,
            };
            let seed = common.seed.unwrap_or(cfg.seed);
            let (_, out, ms) = run_solvers(&cfg, &[solver], &data, &info, seed)
                .pop()
                .expect("one solver requested");
            let w = out.map_err(classify)?;
            println!("w = {}", format_vector(&w));
            if let Some(w_star) = &info.w_star {
                let e = sigma_norm_error(&w, w_star, &info.metric).map_err(classify)?;
                println!("error = {e:?}");
            }
            log::info!("{solver} took {ms:.1} ms");
            Ok(())
        }
        Command::Audit {
            data,
            alpha,
            truth,
            sigma,
            trials,
            seed,
        } => {
            let data = Dataset::read_csv(&data).map_err(runtime)?;
            let w_star = read_vector(&truth)?;
            let seed = env_seed()?.unwrap_or(seed);
            let spec = ModelSpec::new(w_star, sigma, data.second_moment(), NoiseFamily::Gaussian, false)
                .map_err(classify)?;
            let ResilienceProfile { rho1, rho2, rho3, rho4, .. } =
                resilience_audit(&data, &spec, alpha, trials, &mut seeded(seed)).map_err(classify)?;
            println!("rho1 = {rho1:?}\nrho2 = {rho2:?}\nrho3 = {rho3:?}\nrho4 = {rho4:?}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
