//! Seeded experiment runner: flat `key = value` configs, grid expansion,
//! per-cell seed derivation, solver dispatch and CSV output.
//!
//! Seeds: the data of repetition `r` in a cell is drawn from
//! `derive_seed(master, fnv1a(cell), r)`, where the cell key covers
//! `(n, kappa, sigma)` but not the corruption level, so clean and corrupted
//! cells see the same clean sample. Corruption and each solver get streams
//! derived from that data seed, keyed by the corruption level and the solver
//! name. All streams are ChaCha20.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{dp_ssp, ols, one_pass_sgd, streaming_dp_sgd, StreamingConfig, ThetaSchedule};
use crate::data::{condition_covariance, Dataset, ModelSpec, NoiseFamily, SubWeibullParams};
use crate::datagen::{
    corrupt_labels, hard_instance_covariance, hard_instance_sample, noise_std, random_unit_vector,
    sample_linear_model, CorruptionKind, CorruptionSpec,
};
use crate::error::{invalid, Error, Result};
use crate::estimators::EstimatorConfig;
use crate::linalg::{lambda_max, Matrix};
use crate::ops::sigma_norm_error;
use crate::privacy::PrivacyBudget;
use crate::regression::{
    compute_norm_threshold, default_iterations, dp_robust_gd, dp_robust_gd_ht, GdConfig, HeavyTailConfig,
    NormSource, Split, StepSize, ThresholdSource,
};
use crate::rng::{derive_seed, fnv1a, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Solver {
    DpRobustGd,
    DpRobustGdBest,
    DpRobustGdHt,
    Ols,
    Sgd,
    StreamingDpSgd,
    DpSsp,
}

impl Solver {
    pub const ALL: [Solver; 7] = [
        Solver::DpRobustGd,
        Solver::DpRobustGdBest,
        Solver::DpRobustGdHt,
        Solver::Ols,
        Solver::Sgd,
        Solver::StreamingDpSgd,
        Solver::DpSsp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Solver::DpRobustGd => "dp_robust_gd",
            Solver::DpRobustGdBest => "dp_robust_gd_best",
            Solver::DpRobustGdHt => "dp_robust_gd_ht",
            Solver::Ols => "ols",
            Solver::Sgd => "sgd",
            Solver::StreamingDpSgd => "streaming_dp_sgd",
            Solver::DpSsp => "dp_ssp",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown solver `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Instance {
    /// `y = <x, w*> + z` with `w*` uniform on the unit sphere.
    Linear,
    /// Two-instance hard problem; the corruption level is the atom mass `α`.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attack {
    Constant,
    Targeted,
    Flip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricChoice {
    /// Empirical second moment of the clean covariates when they are projected
    /// to the sphere, the analytic covariance otherwise.
    Auto,
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    /// `min(1e-6, n^-2)`.
    Auto,
    Fixed(f64),
}

/// Everything a run needs. Field names match the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
    pub d: usize,
    pub n: Vec<usize>,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alpha_corrupt: Vec<f64>,
    pub noise: NoiseFamily,
    pub project: bool,
    pub instance: Instance,
    pub corruption: Attack,
    pub corruption_value: f64,
    pub solvers: Vec<Solver>,
    pub epsilon: f64,
    pub delta: DeltaRule,
    pub rounds: Option<usize>,
    pub c_step: f64,
    pub alpha: f64,
    pub clip_scale: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha_bar: f64,
    pub zeta: f64,
    pub subweibull_k: f64,
    pub subweibull_a: f64,
    pub partitions: Option<usize>,
    pub known_trace: bool,
    pub gamma_split: f64,
    pub oracle_threshold: bool,
    pub metric: MetricChoice,
    pub sgd_clip_scale: f64,
    pub ssp_row_bound: f64,
    pub ssp_label_bound: f64,
    pub rho: [f64; 4],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repetitions: 5,
            output: None,
            d: 10,
            n: vec![10_000],
            kappa: vec![1.0],
            sigma: vec![1.0],
            alpha_corrupt: vec![0.0],
            noise: NoiseFamily::Uniform,
            project: true,
            instance: Instance::Linear,
            corruption: Attack::Constant,
            corruption_value: 1000.0,
            solvers: vec![Solver::DpRobustGd],
            epsilon: 1.0,
            delta: DeltaRule::Auto,
            rounds: None,
            c_step: 2.0,
            alpha: 0.1,
            clip_scale: 1.0,
            c1: 8.0,
            c2: 1.0,
            alpha_bar: 0.1,
            zeta: 0.1,
            subweibull_k: 1.0,
            subweibull_a: 0.5,
            partitions: None,
            known_trace: true,
            gamma_split: 0.2,
            oracle_threshold: false,
            metric: MetricChoice::Auto,
            sgd_clip_scale: 1.0,
            ssp_row_bound: 1.0,
            ssp_label_bound: 2.0,
            rho: [0.0; 4],
        }
    }
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_one<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

/// Integers may be written as `1e5` or `100000`.
fn parse_count(value: &str) -> std::result::Result<usize, String> {
    if let Ok(v) = value.parse::<usize>() {
        return Ok(v);
    }
    let f: f64 = parse_one(value)?;
    if f >= 0.0 && f.fract() == 0.0 && f <= 9.007e15 {
        Ok(f as usize)
    } else {
        Err(format!("`{value}` is not a nonnegative integer"))
    }
}

fn parse_counts(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_count)
        .collect()
}

fn parse_auto<T>(value: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Option<T>, String> {
    if value == "auto" {
        Ok(None)
    } else {
        f(value).map(Some)
    }
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys and malformed values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_one(value)?,
            "repetitions" => self.repetitions = parse_count(value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "d" => self.d = parse_count(value)?,
            "n" => self.n = parse_counts(value)?,
            "kappa" => self.kappa = parse_list(value)?,
            "sigma" => self.sigma = parse_list(value)?,
            "alpha_corrupt" => self.alpha_corrupt = parse_list(value)?,
            "noise" => {
                self.noise = match value {
                    "gaussian" => NoiseFamily::Gaussian,
                    "uniform" => NoiseFamily::Uniform,
                    "heavy_tailed" => match self.noise {
                        NoiseFamily::HeavyTailed { .. } => self.noise,
                        _ => NoiseFamily::HeavyTailed { k: 4, kappa2: 1.0 },
                    },
                    other => return Err(format!("unknown noise family `{other}`")),
                }
            }
            "moment_k" | "kappa2" => {
                let (mut k, mut kappa2) = match self.noise {
                    NoiseFamily::HeavyTailed { k, kappa2 } => (k, kappa2),
                    _ => (4, 1.0),
                };
                if key.trim() == "moment_k" {
                    k = parse_one(value)?;
                } else {
                    kappa2 = parse_one(value)?;
                }
                self.noise = NoiseFamily::HeavyTailed { k, kappa2 };
            }
            "project" => self.project = parse_one(value)?,
            "instance" => {
                self.instance = match value {
                    "linear" => Instance::Linear,
                    "hard" => Instance::Hard,
                    other => return Err(format!("unknown instance `{other}`")),
                }
            }
            "corruption" => {
                self.corruption = match value {
                    "constant" => Attack::Constant,
                    "targeted" => Attack::Targeted,
                    "flip" => Attack::Flip,
                    other => return Err(format!("unknown corruption `{other}`")),
                }
            }
            "corruption_value" => self.corruption_value = parse_one(value)?,
            "solvers" => self.solvers = parse_list(value)?,
            "epsilon" => self.epsilon = parse_one(value)?,
            "delta" => self.delta = parse_auto(value, parse_one)?.map_or(DeltaRule::Auto, DeltaRule::Fixed),
            "rounds" => self.rounds = parse_auto(value, parse_count)?,
            "c_step" => self.c_step = parse_one(value)?,
            "alpha" => self.alpha = parse_one(value)?,
            "clip_scale" => self.clip_scale = parse_one(value)?,
            "c1" => self.c1 = parse_one(value)?,
            "c2" => self.c2 = parse_one(value)?,
            "alpha_bar" => self.alpha_bar = parse_one(value)?,
            "zeta" => self.zeta = parse_one(value)?,
            "subweibull_k" => self.subweibull_k = parse_one(value)?,
            "subweibull_a" => self.subweibull_a = parse_one(value)?,
            "partitions" => self.partitions = parse_auto(value, parse_count)?,
            "known_trace" => self.known_trace = parse_one(value)?,
            "gamma_split" => self.gamma_split = parse_one(value)?,
            "threshold" => {
                self.oracle_threshold = match value {
                    "private" => false,
                    "oracle" => true,
                    other => return Err(format!("unknown threshold source `{other}`")),
                }
            }
            "metric" => {
                self.metric = match value {
                    "auto" => MetricChoice::Auto,
                    "analytic" => MetricChoice::Analytic,
                    "empirical" => MetricChoice::Empirical,
                    other => return Err(format!("unknown metric `{other}`")),
                }
            }
            "sgd_clip_scale" => self.sgd_clip_scale = parse_one(value)?,
            "ssp_row_bound" => self.ssp_row_bound = parse_one(value)?,
            "ssp_label_bound" => self.ssp_label_bound = parse_one(value)?,
            "rho1" => self.rho[0] = parse_one(value)?,
            "rho2" => self.rho[1] = parse_one(value)?,
            "rho3" => self.rho[2] = parse_one(value)?,
            "rho4" => self.rho[3] = parse_one(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key, value).map_err(|reason| Error::Config { line: i + 1, reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("override `{assignment}` is not `key=value`"),
        })?;
        self.set(key, value).map_err(|reason| Error::Config { line: 0, reason })
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "need at least one"));
        }
        if self.n.is_empty() || self.kappa.is_empty() || self.sigma.is_empty() || self.alpha_corrupt.is_empty() {
            return Err(invalid("grid", "every grid axis needs at least one value"));
        }
        if self.solvers.is_empty() {
            return Err(invalid("solvers", "need at least one solver"));
        }
        if self.d == 0 {
            return Err(invalid("d", "must be positive"));
        }
        if self.instance == Instance::Hard {
            if self.d != 2 {
                return Err(invalid("d", "the hard instance is two-dimensional"));
            }
            if self.alpha_corrupt.iter().any(|a| !(*a > 0.0 && *a < 0.5)) {
                return Err(invalid("alpha_corrupt", "hard-instance atom mass must lie in (0, 0.5)"));
            }
        }
        if self.kappa.iter().any(|k| !(*k >= 1.0)) {
            return Err(invalid("kappa", "condition numbers must be at least 1"));
        }
        PrivacyBudget::new(self.epsilon, 0.5)?;
        if let DeltaRule::Fixed(delta) = self.delta {
            PrivacyBudget::new(self.epsilon, delta)?;
        }
        Ok(())
    }

    fn budget(&self, n: usize) -> Result<PrivacyBudget> {
        let delta = match self.delta {
            DeltaRule::Auto => PrivacyBudget::delta_for(n),
            DeltaRule::Fixed(d) => d,
        };
        PrivacyBudget::new(self.epsilon, delta)
    }

    fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            c1: self.c1,
            alpha_bar: self.alpha_bar,
            zeta: self.zeta,
            partitions: self.partitions,
            ..EstimatorConfig::default()
        }
    }
}

/// Public facts a solver may use about the problem.
#[derive(Debug, Clone)]
pub struct ProblemInfo {
    /// Matrix used for the step size, the known trace and the error metric.
    pub metric: Matrix,
    pub kappa: f64,
    /// Ground truth, used only by the oracle threshold.
    pub w_star: Option<Vec<f64>>,
    pub noise_std: f64,
}

fn gd_config(cfg: &ExperimentConfig, data: &Dataset, info: &ProblemInfo) -> Result<GdConfig> {
    let n = data.len();
    let rounds = cfg.rounds.unwrap_or_else(|| default_iterations(info.kappa, n.max(2)));
    let mut gd = GdConfig::new(
        rounds,
        StepSize::LambdaMax {
            lambda_max: lambda_max(&info.metric)?,
            c_step: cfg.c_step,
        },
        cfg.budget(n)?,
    );
    gd.alpha = cfg.alpha;
    gd.subweibull = SubWeibullParams::unchecked(cfg.subweibull_k, cfg.subweibull_a);
    gd.c2 = cfg.c2;
    gd.clip_scale = cfg.clip_scale;
    gd.zeta = cfg.zeta;
    gd.estimator = cfg.estimator();
    if cfg.known_trace {
        gd.norm_source = NormSource::Known(info.metric.trace());
        gd.split = Split::Ratios {
            norm: 0.0,
            distance: cfg.gamma_split,
            gradient: 1.0 - cfg.gamma_split,
        };
    }
    if cfg.oracle_threshold {
        let w_star = info
            .w_star
            .clone()
            .ok_or_else(|| invalid("threshold", "the oracle threshold needs the true parameter"))?;
        gd.threshold_source = ThresholdSource::Oracle {
            w_star,
            metric: info.metric.clone(),
            sigma: info.noise_std,
        };
    }
    Ok(gd)
}

/// Last and best iterate of one robust-GD run.
type LastAndBest = (Vec<f64>, Vec<f64>);

/// Runs every requested solver on `data`. The two robust-GD outputs (last and
/// best iterate) share one run. Each entry carries its wall time in ms.
pub fn run_solvers(
    cfg: &ExperimentConfig,
    solvers: &[Solver],
    data: &Dataset,
    info: &ProblemInfo,
    seed: u64,
) -> Vec<(Solver, Result<Vec<f64>>, f64)> {
    let stream = |name: &str| seeded(derive_seed(seed, fnv1a(name.as_bytes()), 0));
    let mut shared: Option<(Result<LastAndBest>, f64)> = None;
    solvers
        .iter()
        .map(|&solver| {
            if matches!(solver, Solver::DpRobustGd | Solver::DpRobustGdBest) {
                let (res, ms) = shared.get_or_insert_with(|| {
                    let start = Instant::now();
                    let res = gd_config(cfg, data, info).and_then(|gd| {
                        let (w, trace) = dp_robust_gd(data, &gd, &mut stream("dp_robust_gd"))?;
                        let best = trace.best_iterate().map(<[f64]>::to_vec).unwrap_or_else(|| w.clone());
                        Ok((w, best))
                    });
                    (res, start.elapsed().as_secs_f64() * 1e3)
                });
                let out = match res {
                    Ok((w, best)) => Ok(if solver == Solver::DpRobustGd { w.clone() } else { best.clone() }),
                    Err(e) => Err(Error::SolverFailed {
                        solver: "dp_robust_gd",
                        reason: e.to_string(),
                    }),
                };
                return (solver, out, *ms);
            }
            let start = Instant::now();
            let mut rng = stream(solver.name());
            let out = run_single(cfg, solver, data, info, &mut rng);
            (solver, out, start.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

fn run_single<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    solver: Solver,
    data: &Dataset,
    info: &ProblemInfo,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = data.len();
    match solver {
        Solver::DpRobustGd | Solver::DpRobustGdBest => unreachable!("handled by the shared run"),
        Solver::DpRobustGdHt => {
            let NoiseFamily::HeavyTailed { k, kappa2 } = cfg.noise else {
                return Err(invalid("noise", "dp_robust_gd_ht needs heavy_tailed noise"));
            };
            let ht = HeavyTailConfig {
                base: gd_config(cfg, data, info)?,
                rho1: cfg.rho[0],
                rho2: cfg.rho[1],
                rho3: cfg.rho[2],
                rho4: cfg.rho[3],
                moment_k: k,
                kappa2,
            };
            Ok(dp_robust_gd_ht(data, &ht, rng)?.0)
        }
        Solver::Ols => ols(data),
        Solver::Sgd => {
            let rounds = cfg.rounds.unwrap_or_else(|| default_iterations(info.kappa, n.max(2)));
            one_pass_sgd(data, lambda_max(&info.metric)?, rounds, rng)
        }
        Solver::StreamingDpSgd => {
            let gd = gd_config(cfg, data, info)?;
            let zeta0 = cfg.zeta / 3.0;
            let stream_n = n - (cfg.gamma_split * n as f64).floor() as usize;
            let covariate_bound = compute_norm_threshold(
                info.metric.trace(),
                cfg.subweibull_k,
                cfg.subweibull_a,
                stream_n.max(1),
                zeta0,
            )?;
            let sc = StreamingConfig {
                rounds: gd.rounds,
                lambda_max: lambda_max(&info.metric)?,
                budget: gd.budget,
                schedule: ThetaSchedule::Adaptive {
                    covariate_bound,
                    holdout: cfg.gamma_split,
                    alpha: cfg.alpha,
                    subweibull: gd.subweibull,
                    c2: cfg.c2,
                    zeta: cfg.zeta,
                    estimator: cfg.estimator(),
                },
                clip_scale: cfg.sgd_clip_scale,
            };
            Ok(streaming_dp_sgd(data, &sc, rng)?.0)
        }
        Solver::DpSsp => dp_ssp(data, cfg.budget(n)?, cfg.ssp_row_bound, cfg.ssp_label_bound, rng),
    }
}

/// One `(cell, repetition, solver)` outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub solver: Solver,
    pub n: usize,
    pub kappa: f64,
    pub sigma: f64,
    pub alpha_corrupt: f64,
    pub seed: u64,
    /// `NaN` when the solver failed.
    pub error: f64,
    pub wall_time_ms: f64,
    pub failure: Option<String>,
}

/// Mean and standard error over the repetitions of one `(cell, solver)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub solver: Solver,
    pub n: usize,
    pub kappa: f64,
    pub sigma: f64,
    pub alpha_corrupt: f64,
    pub mean: f64,
    pub stderr: f64,
    pub mean_time_ms: f64,
    pub stderr_time_ms: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunResult {
    pub records: Vec<Record>,
    pub summaries: Vec<Summary>,
}

impl RunResult {
    pub fn summary(&self, solver: Solver, n: usize, kappa: f64, sigma: f64, alpha_corrupt: f64) -> Option<&Summary> {
        self.summaries.iter().find(|s| {
            s.solver == solver && s.n == n && s.kappa == kappa && s.sigma == sigma && s.alpha_corrupt == alpha_corrupt
        })
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    kappa: f64,
    sigma: f64,
    alpha: f64,
}

impl Cell {
    fn data_key(&self) -> u64 {
        let mut bytes = Vec::with_capacity(24);
        bytes.extend((self.n as u64).to_le_bytes());
        bytes.extend(self.kappa.to_bits().to_le_bytes());
        bytes.extend(self.sigma.to_bits().to_le_bytes());
        fnv1a(&bytes)
    }
}

fn run_cell_rep(cfg: &ExperimentConfig, cell: Cell, rep: usize) -> Vec<Record> {
    let seed = derive_seed(cfg.seed, cell.data_key(), rep as u64);
    let solver_seed = derive_seed(seed, fnv1a(b"solvers"), cell.alpha.to_bits());
    let record = |solver, error, wall_time_ms, failure| Record {
        solver,
        n: cell.n,
        kappa: cell.kappa,
        sigma: cell.sigma,
        alpha_corrupt: cell.alpha,
        seed,
        error,
        wall_time_ms,
        failure,
    };
    let prepared = synthesize(cfg, cell.n, cell.kappa, cell.sigma, cell.alpha, seed);
    let (data, info) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("cell n={} kappa={} sigma={} alpha={}: {e}", cell.n, cell.kappa, cell.sigma, cell.alpha);
            return cfg.solvers.iter().map(|&s| record(s, f64::NAN, 0.0, Some(e.to_string()))).collect();
        }
    };
    let w_star = info.w_star.clone().expect("synthetic data knows w*");
    run_solvers(cfg, &cfg.solvers, &data, &info, solver_seed)
        .into_iter()
        .map(|(solver, out, ms)| {
            match out.and_then(|w| sigma_norm_error(&w, &w_star, &info.metric)) {
                Ok(e) => record(solver, e, ms, None),
                Err(e) => {
                    log::warn!("{solver} failed at n={} alpha={} seed={seed}: {e}", cell.n, cell.alpha);
                    record(solver, f64::NAN, ms, Some(e.to_string()))
                }
            }
        })
        .collect()
}

/// Draws one synthetic dataset for a grid cell. The clean sample depends only
/// on `seed`; the corruption draws come from a stream keyed by `alpha_corrupt`.
pub fn synthesize(
    cfg: &ExperimentConfig,
    n: usize,
    kappa: f64,
    sigma: f64,
    alpha_corrupt: f64,
    seed: u64,
) -> Result<(Dataset, ProblemInfo)> {
    let cell = Cell {
        n,
        kappa,
        sigma,
        alpha: alpha_corrupt,
    };
    let mut rng = seeded(seed);
    let mut crng = seeded(derive_seed(seed, fnv1a(b"corruption"), alpha_corrupt.to_bits()));
    match cfg.instance {
        Instance::Hard => {
            let s = crate::rng::sign(&mut rng);
            let clean = hard_instance_sample(cell.alpha, cell.sigma, s, cell.n, &mut rng)?;
            let (data, _) = corrupt_labels(
                &clean,
                &CorruptionSpec::new(CorruptionKind::InstanceFlip { sign: s }, 0.0)?,
                &mut crng,
            )?;
            let info = ProblemInfo {
                metric: hard_instance_covariance(cell.alpha, cell.sigma),
                kappa: cell.kappa,
                w_star: Some(vec![1.0, s]),
                noise_std: cell.sigma / 3f64.sqrt(),
            };
            Ok((data, info))
        }
        Instance::Linear => {
            let w_star = random_unit_vector(cfg.d, &mut rng);
            let spec = ModelSpec::new(
                w_star.clone(),
                cell.sigma,
                condition_covariance(cfg.d, cell.kappa),
                cfg.noise,
                cfg.project,
            )?;
            let clean = sample_linear_model(&spec, cell.n, &mut rng)?;
            let empirical = matches!(cfg.metric, MetricChoice::Empirical)
                || (cfg.metric == MetricChoice::Auto && cfg.project);
            let metric = if empirical {
                clean.second_moment()
            } else {
                spec.covariance.clone()
            };
            let data = if cell.alpha > 0.0 {
                let kind = match cfg.corruption {
                    Attack::Constant => CorruptionKind::ConstantLabel {
                        value: cfg.corruption_value,
                    },
                    Attack::Targeted => CorruptionKind::QuantileTargeted {
                        value: cfg.corruption_value,
                    },
                    Attack::Flip => return Err(invalid("corruption", "flip applies to the hard instance only")),
                };
                corrupt_labels(&clean, &CorruptionSpec::new(kind, cell.alpha)?, &mut crng)?.0
            } else {
                clean
            };
            let info = ProblemInfo {
                metric,
                kappa: cell.kappa,
                w_star: Some(w_star),
                noise_std: noise_std(&spec),
            };
            Ok((data, info))
        }
    }
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in &cfg.n {
        for &kappa in &cfg.kappa {
            for &sigma in &cfg.sigma {
                for &alpha in &cfg.alpha_corrupt {
                    out.push(Cell { n, kappa, sigma, alpha });
                }
            }
        }
    }
    out
}

/// Runs every grid cell and repetition on the rayon pool and aggregates.
/// Records come back in grid order, then solver order, then repetition.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let grid = cells(cfg);
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..cfg.repetitions).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<Vec<Record>> = tasks
        .par_iter()
        .map(|&(c, r)| run_cell_rep(cfg, grid[c], r))
        .collect();
    let mut result = RunResult::default();
    for (c, cell) in grid.iter().enumerate() {
        let reps = &outcomes[c * cfg.repetitions..(c + 1) * cfg.repetitions];
        for (s, &solver) in cfg.solvers.iter().enumerate() {
            let rows: Vec<&Record> = reps.iter().map(|rep| &rep[s]).collect();
            let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
            let times: Vec<f64> = rows.iter().map(|r| r.wall_time_ms).collect();
            let (mean, stderr) = mean_stderr(&errors);
            let (mean_time_ms, stderr_time_ms) = mean_stderr(&times);
            result.summaries.push(Summary {
                solver,
                n: cell.n,
                kappa: cell.kappa,
                sigma: cell.sigma,
                alpha_corrupt: cell.alpha,
                mean,
                stderr,
                mean_time_ms,
                stderr_time_ms,
                failures: rows.iter().filter(|r| r.failure.is_some()).count(),
            });
            result.records.extend(rows.into_iter().cloned());
        }
    }
    if let Some(path) = &cfg.output {
        emit_csv(&result, path)?;
    }
    Ok(result)
}

pub const CSV_HEADER: [&str; 8] = ["solver", "n", "kappa", "sigma", "alpha_corrupt", "seed", "error", "wall_time_ms"];

/// `seed` column of a result row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeedField {
    Seed(u64),
    Mean,
    Stderr,
}

/// One parsed row of a result CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub solver: Solver,
    pub n: usize,
    pub kappa: f64,
    pub sigma: f64,
    pub alpha_corrupt: f64,
    pub seed: SeedField,
    pub error: f64,
    pub wall_time_ms: f64,
}

/// Rows in file order: per `(cell, solver)`, its repetitions then the
/// `mean` and `stderr` rows.
pub fn csv_rows(result: &RunResult) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for s in &result.summaries {
        let row = |seed, error, wall_time_ms| CsvRow {
            solver: s.solver,
            n: s.n,
            kappa: s.kappa,
            sigma: s.sigma,
            alpha_corrupt: s.alpha_corrupt,
            seed,
            error,
            wall_time_ms,
        };
        for r in result.records.iter().filter(|r| {
            r.solver == s.solver && r.n == s.n && r.kappa == s.kappa && r.sigma == s.sigma && r.alpha_corrupt == s.alpha_corrupt
        }) {
            rows.push(row(SeedField::Seed(r.seed), r.error, r.wall_time_ms));
        }
        rows.push(row(SeedField::Mean, s.mean, s.mean_time_ms));
        rows.push(row(SeedField::Stderr, s.stderr, s.stderr_time_ms));
    }
    rows
}

/// Writes the result CSV (LF newlines, shortest round-trip floats).
pub fn emit_csv(result: &RunResult, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_csv(result, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Same bytes as [`emit_csv`], to any writer.
pub fn write_csv<W: Write>(result: &RunResult, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    for r in csv_rows(result) {
        let seed = match r.seed {
            SeedField::Seed(s) => s.to_string(),
            SeedField::Mean => "mean".into(),
            SeedField::Stderr => "stderr".into(),
        };
        writeln!(
            w,
            "{},{},{:?},{:?},{:?},{},{:?},{:?}",
            r.solver, r.n, r.kappa, r.sigma, r.alpha_corrupt, seed, r.error, r.wall_time_ms
        )?;
    }
    Ok(())
}

/// Reads a file written by [`emit_csv`].
pub fn parse_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header = reader.headers().map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let num = |j: usize| -> Result<f64> {
            field(j)
                .parse()
                .map_err(|e| parse_err(format!("row {}: `{}` column: {e}", i + 1, CSV_HEADER[j])))
        };
        let seed = match field(5) {
            "mean" => SeedField::Mean,
            "stderr" => SeedField::Stderr,
            s => SeedField::Seed(s.parse().map_err(|e| parse_err(format!("row {}: seed: {e}", i + 1)))?),
        };
        rows.push(CsvRow {
            solver: field(0).parse().map_err(|e: String| parse_err(format!("row {}: {e}", i + 1)))?,
            n: field(1).parse().map_err(|e| parse_err(format!("row {}: n: {e}", i + 1)))?,
            kappa: num(2)?,
            sigma: num(3)?,
            alpha_corrupt: num(4)?,
            seed,
            error: num(6)?,
            wall_time_ms: num(7)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [
            ("d", "3"),
            ("n", "200"),
            ("sigma", "0"),
            ("noise", "gaussian"),
            ("project", "false"),
            ("solvers", "ols"),
            ("repetitions", "1"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn parses_flat_config() {
        let text = "# grid\nn = 1e4, 3e4\nkappa = 1\nsolvers = ols, dp_ssp  # baselines\nepsilon = inf\ndelta = auto\nrounds = 12\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.n, vec![10_000, 30_000]);
        assert_eq!(cfg.solvers, vec![Solver::Ols, Solver::DpSsp]);
        assert_eq!(cfg.epsilon, f64::INFINITY);
        assert_eq!(cfg.rounds, Some(12));
    }

    #[test]
    fn config_errors_name_the_line() {
        let err = ExperimentConfig::parse("n = 10\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        let err = ExperimentConfig::parse("n = 10\nsolvers = lasso\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(ExperimentConfig::parse("repetitions = 0").is_err());
        assert!(ExperimentConfig::parse("just words").is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("sigma=0.5,1").unwrap();
        assert_eq!(cfg.sigma, vec![0.5, 1.0]);
        assert!(cfg.apply_override("sigma").is_err());
        cfg.apply_override("moment_k=6").unwrap();
        assert_eq!(cfg.noise, NoiseFamily::HeavyTailed { k: 6, kappa2: 1.0 });
    }

    #[test]
    fn noiseless_ols_smoke() {
        let res = run_experiment(&smoke_config()).unwrap();
        assert_eq!(res.records.len(), 1);
        assert!(res.records[0].error <= 1e-8, "{:?}", res.records[0]);
    }

    #[test]
    fn failures_are_recorded() {
        let mut cfg = smoke_config();
        cfg.set("solvers", "dp_robust_gd,ols").unwrap();
        cfg.set("epsilon", "1").unwrap();
        let res = run_experiment(&cfg).unwrap();
        let gd = &res.records[0];
        assert!(gd.error.is_nan());
        assert!(gd.failure.is_some());
        assert_eq!(res.summaries[0].failures, 1);
        assert!(res.records[1].error <= 1e-8);
    }

    #[test]
    fn empty_result_is_header_only() {
        let mut out = Vec::new();
        write_csv(&RunResult::default(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn csv_counts_and_round_trip() {
        let mut cfg = smoke_config();
        cfg.set("repetitions", "2").unwrap();
        cfg.set("sigma", "0.3").unwrap();
        let res = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        emit_csv(&res, &path).unwrap();
        let back = parse_csv(&path).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back, csv_rows(&res));
        assert!(!std::fs::read_to_string(&path).unwrap().contains('\r'));
    }

    #[test]
    fn cell_order_does_not_change_values() {
        let mut a = smoke_config();
        a.set("sigma", "0.1,0.5").unwrap();
        let mut b = a.clone();
        b.set("sigma", "0.5,0.1").unwrap();
        let ra = run_experiment(&a).unwrap();
        let rb = run_experiment(&b).unwrap();
        assert_eq!(ra.records[0].error, rb.records[1].error);
        assert_eq!(ra.records[1].error, rb.records[0].error);
    }
}
