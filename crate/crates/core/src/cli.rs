//! Command-line front end: `simulate`, `estimate`, `profile`, `mc`, `sweep`.

use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, KindName, OneOrMany};
use crate::dynamics::{fit_step, simulate_euler, solve_limiting_ode, SimConfig};
use crate::error::{Error, Result};
use crate::estimate::{Estimator, EstimatorOptions, EstimateReport};
use crate::io::{format_f64, load_path, save_path, write_csv, write_profile_csv};
use crate::likelihood::{limiting_pseudo_likelihood, log_likelihood, pseudo_log_likelihood, LikelihoodValue, LimitingLikelihood};
use crate::mc::{epsilon_sweep, histogram_with_theory, mean, CiMethod, Histogram, MCSummary, McOptions};
use crate::model::{ModelRegistry, Regime};

#[derive(Debug, Parser)]
#[command(name = "msmle", version, about = "Simulation and parameter estimation for small-noise multiscale diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one Euler path and write `path.csv`.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to `<directory>/path.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate theta from a path file.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Path CSV with header `t,x`.
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Likelihood profiles on a theta grid, written to `profile.csv`.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Path CSV for the exact and pseudo profiles.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Monte Carlo replications; writes `summary.csv`, `hist.csv`, `theory.csv`.
    Mc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        parallel: Parallel,
    },
    /// Monte Carlo over the `sweep.epsilons` list; writes `sweep.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        parallel: Parallel,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Exact,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CiArg {
    Normal,
    Percentile,
}

/// Config file and the flags that override it.
#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repeat for several values.
    #[arg(long = "theta-true")]
    pub theta_true: Vec<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub target_error: Option<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Accept Euler steps above the step bound.
    #[arg(long)]
    pub allow_coarse_step: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Parallel {
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "MSMLE_WORKERS", default_value_t = 0)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = CiArg::Normal)]
    pub ci: CiArg,
}

impl Parallel {
    fn options(&self) -> McOptions {
        McOptions {
            workers: self.workers,
            identical_streams: false,
            ci: match self.ci {
                CiArg::Normal => CiMethod::Normal,
                CiArg::Percentile => CiMethod::Percentile,
            },
        }
    }
}

impl Common {
    /// Loads the config and applies flag overrides.
    pub fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(&self.config)?)?;
        if let Some(v) = self.epsilon {
            cfg.scale.epsilon = v;
        }
        if let Some(v) = self.delta {
            cfg.scale.delta = v;
        }
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        match self.theta_true.as_slice() {
            [] => {}
            [v] => cfg.run.theta_true = Some(OneOrMany::One(*v)),
            many => cfg.run.theta_true = Some(OneOrMany::Many(many.to_vec())),
        }
        if let Some(v) = self.step {
            cfg.run.step = Some(v);
        }
        if let Some(v) = self.target_error {
            cfg.run.target_error = v;
        }
        if let Some(v) = self.replications {
            cfg.run.replications = Some(v);
        }
        if let Some(v) = self.stride {
            cfg.output.stride = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.output.directory = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output.directory.clone();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn run(cli: Cli) -> Result<()> {
    let registry = ModelRegistry::with_builtins();
    match cli.command {
        Command::Simulate { common, out } => cmd_simulate(&common.load()?, &registry, common.allow_coarse_step, out.as_deref()).map(|_| ()),
        Command::Estimate { common, path, kind } => {
            let mut cfg = common.load()?;
            if let Some(k) = kind {
                cfg.run.kind = Some(match k {
                    KindArg::Exact => KindName::Exact,
                    KindArg::Pseudo => KindName::Pseudo,
                });
            }
            let report = cmd_estimate(&cfg, &registry, &path)?;
            print!("{}", report.to_key_value());
            Ok(())
        }
        Command::Profile { common, path, points } => cmd_profile(&common.load()?, &registry, path.as_deref(), points).map(|_| ()),
        Command::Mc { common, parallel } => {
            cmd_mc(&common.load()?, &registry, common.allow_coarse_step, &parallel.options()).map(|_| ())
        }
        Command::Sweep { common, parallel } => {
            cmd_sweep(&common.load()?, &registry, common.allow_coarse_step, &parallel.options()).map(|_| ())
        }
    }
}

/// Simulates one path at the single `theta_true` and writes it.
pub fn cmd_simulate(cfg: &ExperimentConfig, registry: &ModelRegistry, allow_coarse: bool, out: Option<&FsPath>) -> Result<PathBuf> {
    let model = cfg.model_spec(registry)?;
    let scale = cfg.scale_params()?;
    let theta0 = cfg
        .single_theta_true()?
        .ok_or_else(|| Error::config("run.theta_true", "required for simulate"))?;
    model.theta_domain.check(theta0)?;
    let (step, bound) = cfg.effective_step(&scale);
    let mut sim = SimConfig::new(cfg.run.x0, cfg.run.horizon, step, cfg.run.seed)
        .with_stride(cfg.output.stride)
        .allow_coarse(allow_coarse);
    sim.target_error = cfg.run.target_error;
    let path = simulate_euler(&model, &scale, theta0, &sim)?;
    let file = match out {
        Some(f) => f.to_path_buf(),
        None => output_dir(cfg)?.join("path.csv"),
    };
    save_path(&path, &file)?;
    println!("step={} step_bound={} steps={}", format_f64(step), format_f64(bound), path.steps() * cfg.output.stride);
    println!("wrote {}", file.display());
    Ok(file)
}

/// Estimates from a path file, prints nothing, writes `estimate.csv`.
pub fn cmd_estimate(cfg: &ExperimentConfig, registry: &ModelRegistry, path_file: &FsPath) -> Result<EstimateReport> {
    let model = cfg.model_spec(registry)?;
    let scale = cfg.scale_params()?;
    let path = load_path(path_file)?;
    let (step, _) = cfg.effective_step(&scale);
    let expected = step * cfg.output.stride as f64;
    if (path.step() - expected).abs() > 1e-9 * expected {
        return Err(Error::config(
            "run.step",
            format!(
                "path step {} does not match the configured step {} (step x stride)",
                format_f64(path.step()),
                format_f64(expected)
            ),
        ));
    }
    let grid = cfg.grid(&model)?;
    let theta0 = cfg.single_theta_true()?;
    let mut opts = EstimatorOptions::new(cfg.kind(&model), theta0, path.first(), path.horizon());
    opts.ode_step = cfg.run.ode_step;
    opts.fisher_floor = cfg.run.fisher_floor;
    let report = Estimator::new(&model, &scale, &grid, &opts)?.estimate(&path)?;
    if report.boundary {
        eprintln!("warning: maximizer at the boundary of the parameter interval");
    }
    write_csv(
        &output_dir(cfg)?.join("estimate.csv"),
        EstimateReport::CSV_HEADER,
        [report.to_csv_row()],
    )?;
    Ok(report)
}

/// Evaluates likelihood profiles on `points` values of theta.
pub fn cmd_profile(
    cfg: &ExperimentConfig,
    registry: &ModelRegistry,
    path_file: Option<&FsPath>,
    points: usize,
) -> Result<Vec<LikelihoodValue>> {
    if points < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 grid points, got {points}")));
    }
    let model = cfg.model_spec(registry)?;
    let scale = cfg.scale_params()?;
    let grid = cfg.grid(&model)?;
    let thetas = model.theta_domain.grid(points);
    let mut values = Vec::new();

    if let Some(f) = path_file {
        let path = load_path(f)?;
        for &t in &thetas {
            values.push(log_likelihood(&path, &model, &scale, t)?);
        }
        for &t in &thetas {
            values.push(pseudo_log_likelihood(&path, &model, &scale, t)?);
        }
    }
    if let Some(theta0) = cfg.single_theta_true()? {
        let ode_step = fit_step(cfg.run.horizon, cfg.run.ode_step);
        let ode = solve_limiting_ode(&model, scale.regime, theta0, cfg.run.x0, cfg.run.horizon, ode_step, &grid)?;
        if scale.regime == Regime::Regime1 && !model.fast_drift_vanishes() {
            for &t in &thetas {
                values.push(limiting_pseudo_likelihood(&ode, &model, t, theta0, &grid)?);
            }
        } else {
            let lim = LimitingLikelihood::new(&ode, &model, theta0, scale.regime, &grid)?;
            for &t in &thetas {
                values.push(lim.value(t)?);
            }
        }
    }
    if values.is_empty() {
        return Err(Error::config("run.theta_true", "profile needs --path or a single theta_true"));
    }
    let file = output_dir(cfg)?.join("profile.csv");
    write_profile_csv(&file, &values)?;
    println!("wrote {}", file.display());
    Ok(values)
}

fn tagged(dir: &FsPath, stem: &str, theta0: f64, multiple: bool) -> PathBuf {
    if multiple {
        dir.join(format!("{stem}_theta0={}.csv", format_f64(theta0)))
    } else {
        dir.join(format!("{stem}.csv"))
    }
}

fn histogram_for(summary: &MCSummary, bins: usize) -> Result<Option<Histogram>> {
    match summary.variance {
        Some(v) if summary.theta_hat.len() >= crate::mc::MIN_HISTOGRAM_SAMPLES => Ok(Some(histogram_with_theory(
            &summary.theta_hat,
            mean(&summary.theta_hat),
            v,
            summary.epsilon,
            bins,
        )?)),
        _ => Ok(None),
    }
}

/// One summary row per `theta_true` value, plus histogram and theory curve of
/// the raw estimates.
pub fn cmd_mc(cfg: &ExperimentConfig, registry: &ModelRegistry, allow_coarse: bool, opts: &McOptions) -> Result<Vec<MCSummary>> {
    let model = cfg.model_spec(registry)?;
    let scale = cfg.scale_params()?;
    let m = cfg
        .run
        .replications
        .ok_or_else(|| Error::config("run.M", "required for mc"))?;
    let thetas = cfg.theta_true()?;
    let dir = output_dir(cfg)?;
    let multiple = thetas.len() > 1;
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta0 in &thetas {
        let mc = cfg.mc_config(&model, theta0, allow_coarse)?;
        let summary = crate::mc::run_replications(&mc, &scale, m, opts)?;
        if summary.failures > 0 {
            eprintln!("theta0={theta0}: {} of {m} replications failed and were excluded", summary.failures);
        }
        if let Some(h) = histogram_for(&summary, cfg.output.bins)? {
            if h.degenerate {
                eprintln!("theta0={theta0}: all estimates coincide, histogram is degenerate");
            }
            write_csv(&tagged(&dir, "hist", theta0, multiple), Histogram::HIST_HEADER, h.hist_rows())?;
            write_csv(&tagged(&dir, "theory", theta0, multiple), Histogram::THEORY_HEADER, h.theory_rows())?;
        }
        println!("{}", summary.csv_row());
        rows.push(summary);
    }
    write_csv(&dir.join("summary.csv"), MCSummary::CSV_HEADER, rows.iter().map(MCSummary::csv_row))?;
    Ok(rows)
}

/// Runs the configured `eps` sweep for every `theta_true` value.
pub fn cmd_sweep(cfg: &ExperimentConfig, registry: &ModelRegistry, allow_coarse: bool, opts: &McOptions) -> Result<Vec<MCSummary>> {
    let model = cfg.model_spec(registry)?;
    let coupling = cfg.coupling()?;
    let epsilons = cfg.sweep.as_ref().map(|s| s.epsilons.clone()).unwrap_or_default();
    let m = cfg
        .run
        .replications
        .ok_or_else(|| Error::config("run.M", "required for sweep"))?;
    let mut rows = Vec::new();
    for theta0 in cfg.theta_true()? {
        let mc = cfg.mc_config(&model, theta0, allow_coarse)?;
        let report = epsilon_sweep(&mc, cfg.regime(), &epsilons, coupling, m, opts)?;
        for row in &report.rows {
            println!("{}", row.csv_row());
        }
        println!(
            "theta0={theta0} error_nonincreasing={:?} sd_nonincreasing={:?}",
            report.error_nonincreasing, report.sd_nonincreasing
        );
        rows.extend(report.rows);
    }
    write_csv(&output_dir(cfg)?.join("sweep.csv"), MCSummary::CSV_HEADER, rows.iter().map(MCSummary::csv_row))?;
    Ok(rows)
}
