//! Monte Carlo harness: independent replications of simulate-then-estimate,
//! summary statistics with confidence intervals, histograms against the
//! limiting normal density, and sweeps over `eps`.

use rayon::prelude::*;

use crate::dynamics::{fit_step, simulate_euler, step_bound, SimConfig, DEFAULT_TARGET_ERROR};
use crate::error::{Error, Result};
use crate::estimate::{EstimateReport, Estimator, EstimatorOptions, DEFAULT_ODE_STEP};
use crate::io::format_f64;
use crate::likelihood::{LikelihoodKind, DEFAULT_FISHER_FLOOR};
use crate::model::{ModelSpec, Regime, ScaleParams};
use crate::torus::TorusGrid;

/// Replications may fail up to this fraction before a run aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;
pub const Z68: f64 = 1.0;
pub const Z95: f64 = 1.96;
pub const CURVE_POINTS: usize = 200;
pub const MIN_HISTOGRAM_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CiMethod {
    /// `mean +- z sd`.
    #[default]
    Normal,
    /// Empirical quantiles.
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    /// Worker threads; `0` lets the pool decide.
    pub workers: usize,
    /// Forces every replication onto the same noise stream.
    pub identical_streams: bool,
    pub ci: CiMethod,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            workers: 0,
            identical_streams: false,
            ci: CiMethod::Normal,
        }
    }
}

/// Everything a replication needs except `(eps, delta)`.
#[derive(Clone)]
pub struct McConfig {
    pub model: ModelSpec,
    pub theta0: f64,
    pub x0: f64,
    pub horizon: f64,
    /// Euler step; `None` picks the largest step under the step bound.
    pub step: Option<f64>,
    pub target_error: f64,
    pub allow_coarse_step: bool,
    pub seed: u64,
    pub store_stride: usize,
    pub kind: LikelihoodKind,
    pub grid: TorusGrid,
    pub ode_step: f64,
    pub fisher_floor: f64,
}

impl McConfig {
    pub fn new(model: ModelSpec, theta0: f64, seed: u64) -> Self {
        let grid = TorusGrid::for_model(&model);
        Self {
            model,
            theta0,
            x0: 1.0,
            horizon: 1.0,
            step: None,
            target_error: DEFAULT_TARGET_ERROR,
            allow_coarse_step: false,
            seed,
            store_stride: 1,
            kind: LikelihoodKind::Pseudo,
            grid,
            ode_step: DEFAULT_ODE_STEP,
            fisher_floor: DEFAULT_FISHER_FLOOR,
        }
    }

    pub fn effective_step(&self, scale: &ScaleParams) -> f64 {
        self.step
            .unwrap_or_else(|| fit_step(self.horizon, step_bound(scale, self.target_error)))
    }

    pub fn sim_config(&self, scale: &ScaleParams) -> SimConfig {
        let mut sim = SimConfig::new(self.x0, self.horizon, self.effective_step(scale), self.seed)
            .with_stride(self.store_stride)
            .allow_coarse(self.allow_coarse_step);
        sim.target_error = self.target_error;
        sim
    }

    fn estimator_options(&self) -> EstimatorOptions {
        let mut o = EstimatorOptions::new(self.kind, Some(self.theta0), self.x0, self.horizon);
        o.ode_step = self.ode_step;
        o.fisher_floor = self.fisher_floor;
        o
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCSummary {
    pub theta0: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Requested replications.
    pub m: usize,
    pub failures: usize,
    /// Headline estimates (the corrected `theta_tilde`) of successful runs.
    pub estimates: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ci68: (f64, f64),
    pub ci95: (f64, f64),
    pub correction_factor: f64,
    /// Asymptotic variance of `theta_hat`, before the `eps` scaling.
    pub variance: Option<f64>,
    pub step: f64,
}

impl MCSummary {
    pub const CSV_HEADER: &'static str = "theta0,epsilon,delta,M,mean,sd,ci68_lo,ci68_hi,ci95_lo,ci95_hi,failures";

    pub fn csv_row(&self) -> String {
        let f = format_f64;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            f(self.theta0),
            f(self.epsilon),
            f(self.delta),
            self.m,
            f(self.mean),
            f(self.sd),
            f(self.ci68.0),
            f(self.ci68.1),
            f(self.ci95.0),
            f(self.ci95.1),
            self.failures
        )
    }

    pub fn successes(&self) -> usize {
        self.estimates.len()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    crate::numerics::kahan_sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard deviation with divisor `n - 1`.
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss = crate::numerics::kahan_sum(values.iter().map(|v| (v - m) * (v - m)));
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Linearly interpolated empirical quantile.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn intervals(values: &[f64], mean: f64, sd: f64, method: CiMethod) -> ((f64, f64), (f64, f64)) {
    match method {
        CiMethod::Normal => ((mean - Z68 * sd, mean + Z68 * sd), (mean - Z95 * sd, mean + Z95 * sd)),
        CiMethod::Percentile => (
            (quantile(values, 0.16), quantile(values, 0.84)),
            (quantile(values, 0.025), quantile(values, 0.975)),
        ),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Runs `m` replications on substreams `1..=m` of `cfg.seed`. Failed
/// replications are dropped and counted; more than 10% failures abort.
pub fn run_replications(cfg: &McConfig, scale: &ScaleParams, m: usize, opts: &McOptions) -> Result<MCSummary> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 replications, got {m}")));
    }
    let sim = cfg.sim_config(scale);
    sim.validate(scale)?;
    cfg.model.theta_domain.check(cfg.theta0)?;
    let estimator = Estimator::new(&cfg.model, scale, &cfg.grid, &cfg.estimator_options())?;

    let run_one = |r: usize| -> Result<EstimateReport> {
        let stream = if opts.identical_streams { 1 } else { r as u64 + 1 };
        let path = simulate_euler(&cfg.model, scale, cfg.theta0, &sim.clone().with_stream(stream))?;
        estimator.estimate(&path)
    };
    let results: Vec<Result<EstimateReport>> =
        pool(opts.workers)?.install(|| (0..m).into_par_iter().map(run_one).collect());

    let reports: Vec<EstimateReport> = results.into_iter().filter_map(|r| r.ok()).collect();
    let failures = m - reports.len();
    if failures as f64 > MAX_FAILURE_FRACTION * m as f64 || reports.len() < 2 {
        return Err(Error::TooManyFailures { failed: failures, total: m });
    }
    let estimates: Vec<f64> = reports.iter().map(|r| r.theta_tilde).collect();
    let mean = mean(&estimates);
    let sd = sample_sd(&estimates);
    let (ci68, ci95) = intervals(&estimates, mean, sd, opts.ci);
    Ok(MCSummary {
        theta0: cfg.theta0,
        epsilon: scale.epsilon,
        delta: scale.delta,
        m,
        failures,
        theta_hat: reports.iter().map(|r| r.theta_hat).collect(),
        residuals: reports.iter().filter_map(|r| r.standardized_residual).collect(),
        estimates,
        mean,
        sd,
        ci68,
        ci95,
        correction_factor: estimator.correction_factor(),
        variance: estimator.variance(),
        step: sim.step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `(lo, hi, count)` per bin.
    pub bins: Vec<(f64, f64, usize)>,
    /// `(x, density)` of the normal curve.
    pub curve: Vec<(f64, f64)>,
    /// All estimates coincide.
    pub degenerate: bool,
}

impl Histogram {
    pub const HIST_HEADER: &'static str = "bin_lo,bin_hi,count";
    pub const THEORY_HEADER: &'static str = "x,density";

    pub fn hist_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.bins
            .iter()
            .map(|(lo, hi, c)| format!("{},{},{}", format_f64(*lo), format_f64(*hi), c))
    }

    pub fn theory_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.curve
            .iter()
            .map(|(x, d)| format!("{},{}", format_f64(*x), format_f64(*d)))
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.2).sum()
    }
}

/// Equal-width histogram over `[min, max]` padded by 5% on each side, with the
/// `N(center, eps * variance)` density sampled at 200 points over the same
/// span.
pub fn histogram_with_theory(estimates: &[f64], center: f64, variance: f64, epsilon: f64, bins: usize) -> Result<Histogram> {
    if estimates.len() < MIN_HISTOGRAM_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "a histogram needs at least {MIN_HISTOGRAM_SAMPLES} estimates, got {}",
            estimates.len()
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    if !(variance > 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variance and eps must be positive, got {variance} and {epsilon}"
        )));
    }
    if estimates.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input"));
    }
    let min = estimates.iter().copied().fold(f64::INFINITY, f64::min);
    let max = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = max == min;
    let (lo, hi, nbins) = if degenerate {
        let pad = 0.05 * min.abs().max(1.0);
        (min - pad, min + pad, 1)
    } else {
        let pad = 0.05 * (max - min);
        (min - pad, max + pad, bins)
    };
    let width = (hi - lo) / nbins as f64;
    let mut counts = vec![0usize; nbins];
    for v in estimates {
        let idx = (((v - lo) / width).floor() as usize).min(nbins - 1);
        counts[idx] += 1;
    }
    let hist = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, if i + 1 == nbins { hi } else { lo + (i + 1) as f64 * width }, c))
        .collect();
    let var = epsilon * variance;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    let dx = (hi - lo) / (CURVE_POINTS - 1) as f64;
    let curve = (0..CURVE_POINTS)
        .map(|i| {
            let x = lo + i as f64 * dx;
            (x, norm * (-(x - center).powi(2) / (2.0 * var)).exp())
        })
        .collect();
    Ok(Histogram {
        bins: hist,
        curve,
        degenerate,
    })
}

/// `delta = scale * eps^power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaCoupling {
    pub scale: f64,
    pub power: f64,
}

impl DeltaCoupling {
    pub fn delta(&self, epsilon: f64) -> f64 {
        self.scale * epsilon.powf(self.power)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<MCSummary>,
    /// `|mean - theta0|` did not increase from row `i` to `i + 1`.
    pub error_nonincreasing: Vec<bool>,
    /// `sd` did not increase from row `i` to `i + 1`.
    pub sd_nonincreasing: Vec<bool>,
}

/// One [`run_replications`] row per `eps`, with `delta` from `coupling` and
/// the declared regime (Regime 2 takes `gamma = eps / delta` of each row).
pub fn epsilon_sweep(
    cfg: &McConfig,
    regime: Regime,
    epsilons: &[f64],
    coupling: DeltaCoupling,
    m: usize,
    opts: &McOptions,
) -> Result<SweepReport> {
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let delta = coupling.delta(eps);
        let regime = match regime {
            Regime::Regime2 { .. } => Regime::Regime2 { gamma: eps / delta },
            r => r,
        };
        let scale = ScaleParams::new(eps, delta, regime)?;
        rows.push(run_replications(cfg, &scale, m, opts)?);
    }
    let error_nonincreasing = rows
        .windows(2)
        .map(|w| (w[1].mean - w[1].theta0).abs() <= (w[0].mean - w[0].theta0).abs())
        .collect();
    let sd_nonincreasing = rows.windows(2).map(|w| w[1].sd <= w[0].sd).collect();
    Ok(SweepReport {
        rows,
        error_nonincreasing,
        sd_nonincreasing,
    })
}
