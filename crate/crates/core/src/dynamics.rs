//! Path generation: Euler-Maruyama for the multiscale SDE and RK4 for the
//! limiting ODE with averaged or homogenized drift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Regime, ScaleParams};
use crate::path::Path;
use crate::torus::{solve_cell_problem, stationary_density, TorusGrid};

/// Target Euler error used when none is given.
pub const DEFAULT_TARGET_ERROR: f64 = 1e-3;
const STEP_SLACK: f64 = 1e-9;

/// Largest step keeping the Euler error bound `step * eps / delta^2` at
/// `target_error`.
pub fn step_bound(scale: &ScaleParams, target_error: f64) -> f64 {
    target_error * scale.delta * scale.delta / scale.epsilon
}

/// Largest step `<= bound` that divides `horizon` into an integer number of
/// steps.
pub fn fit_step(horizon: f64, bound: f64) -> f64 {
    let n = (horizon / bound - STEP_SLACK).ceil().max(1.0);
    horizon / n
}

/// Number of steps `horizon / step` when it is an integer up to rounding.
pub fn step_count(horizon: f64, step: f64) -> Result<usize> {
    if !(horizon.is_finite() && horizon > 0.0 && step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon and step must be positive, got T = {horizon}, step = {step}"
        )));
    }
    let ratio = horizon / step;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 4.0 * f64::EPSILON * ratio.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} is not an integer multiple of step {step}"
        )));
    }
    Ok(n as usize)
}

/// Generator for replication `stream` under `seed`. Each stream is an
/// independent ChaCha8 keystream, so results do not depend on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub x0: f64,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    /// Substream id; replications use their index.
    pub stream: u64,
    /// Keep every `store_stride`-th state. The stored path has step
    /// `step * store_stride`, so likelihoods on thinned paths lose the
    /// fine-scale increments.
    pub store_stride: usize,
    pub target_error: f64,
    pub allow_coarse_step: bool,
    /// Multiplies the noise term; `0.0` gives the noiseless Euler recursion.
    pub noise_scale: f64,
}

impl SimConfig {
    pub fn new(x0: f64, horizon: f64, step: f64, seed: u64) -> Self {
        Self {
            x0,
            horizon,
            step,
            seed,
            stream: 0,
            store_stride: 1,
            target_error: DEFAULT_TARGET_ERROR,
            allow_coarse_step: false,
            noise_scale: 1.0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.store_stride = stride;
        self
    }

    pub fn allow_coarse(mut self, allow: bool) -> Self {
        self.allow_coarse_step = allow;
        self
    }

    pub fn validate(&self, scale: &ScaleParams) -> Result<usize> {
        if !self.x0.is_finite() {
            return Err(Error::InvalidArgument(format!("x0 must be finite, got {}", self.x0)));
        }
        let n = step_count(self.horizon, self.step)?;
        if self.store_stride == 0 || n % self.store_stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "store stride {} must divide the step count {n}",
                self.store_stride
            )));
        }
        if !(self.target_error > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target error must be positive, got {}",
                self.target_error
            )));
        }
        let bound = step_bound(scale, self.target_error);
        if !self.allow_coarse_step && self.step > bound * (1.0 + STEP_SLACK) {
            return Err(Error::StepTooCoarse {
                step: self.step,
                bound,
            });
        }
        Ok(n)
    }
}

/// Euler-Maruyama path of the multiscale SDE at `theta0`.
pub fn simulate_euler(model: &ModelSpec, scale: &ScaleParams, theta0: f64, cfg: &SimConfig) -> Result<Path> {
    let n = cfg.validate(scale)?;
    let mut rng = stream_rng(cfg.seed, cfg.stream);
    let ratio = scale.ratio();
    let inv_delta = 1.0 / scale.delta;
    let noise = scale.epsilon.sqrt() * cfg.step.sqrt() * cfg.noise_scale;
    let dt = cfg.step;

    let mut out = Vec::with_capacity(n / cfg.store_stride + 1);
    let mut x = cfg.x0;
    out.push(x);
    for k in 0..n {
        let y = x * inv_delta;
        let drift = ratio * model.b(theta0, x, y) + model.c(theta0, x, y);
        let xi: f64 = rng.sample(StandardNormal);
        x += drift * dt + noise * model.sigma_at(x, y) * xi;
        if !x.is_finite() {
            return Err(Error::BlowUp(k + 1));
        }
        if (k + 1) % cfg.store_stride == 0 {
            out.push(x);
        }
    }
    Path::new(dt * cfg.store_stride as f64, out)
}

/// Effective drift `int lambda_i(x, y) mu^i(dy; x)` of the limiting ODE.
///
/// Regime 1 integrates `(1 + dchi/dy) c`, Regime 2 integrates
/// `gamma b + c` and Regime 3 integrates `c`, each against the regime's
/// invariant density.
pub fn averaged_drift(model: &ModelSpec, regime: Regime, theta: f64, x: f64, grid: &TorusGrid) -> Result<f64> {
    let density = stationary_density(model, regime, theta, x, grid)?;
    let value = match regime {
        Regime::Regime1 => {
            let cell = solve_cell_problem(model, theta, x, grid)?;
            let integrand: Vec<f64> = grid
                .nodes()
                .iter()
                .zip(&cell.dchi_dy)
                .map(|(&y, d)| (1.0 + d) * model.c(theta, x, y))
                .collect();
            density.integrate(&integrand)
        }
        Regime::Regime2 { gamma } => density.expectation(|y| gamma * model.b(theta, x, y) + model.c(theta, x, y)),
        Regime::Regime3 => density.expectation(|y| model.c(theta, x, y)),
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("averaged drift"))
    }
}

/// Classical RK4 integration of `x' = f(x)` from `x0` over `[0, horizon]`.
pub fn integrate_rk4(f: impl Fn(f64) -> Result<f64>, x0: f64, horizon: f64, step: f64) -> Result<Path> {
    let n = step_count(horizon, step)?;
    let mut out = Vec::with_capacity(n + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..n {
        let k1 = f(x)?;
        let k2 = f(x + 0.5 * step * k1)?;
        let k3 = f(x + 0.5 * step * k2)?;
        let k4 = f(x + step * k3)?;
        x += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !x.is_finite() {
            return Err(Error::NonFinite("limiting ODE state"));
        }
        out.push(x);
    }
    Path::new(step, out)
}

/// Solution of the limiting ODE for the given regime.
pub fn solve_limiting_ode(
    model: &ModelSpec,
    regime: Regime,
    theta: f64,
    x0: f64,
    horizon: f64,
    ode_step: f64,
    grid: &TorusGrid,
) -> Result<Path> {
    if !(ode_step > 0.0) {
        return Err(Error::InvalidArgument(format!("ode step must be positive, got {ode_step}")));
    }
    integrate_rk4(|x| averaged_drift(model, regime, theta, x, grid), x0, horizon, ode_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, ModelOptions, PURE_OU, REGIME3_POSITIVE_SPEED};

    #[test]
    fn step_bound_examples() {
        let s = ScaleParams::new(0.1, 0.01, Regime::Regime1).unwrap();
        assert!((step_bound(&s, 0.001) - 1e-6).abs() < 1e-18);
        let s = ScaleParams::new(1.0, 1.0, Regime::Regime2 { gamma: 1.0 }).unwrap();
        assert_eq!(step_bound(&s, 0.5), 0.5);
        let s = ScaleParams::new(0.05, 0.0025, Regime::Regime1).unwrap();
        assert!((step_bound(&s, 0.001) - 1.25e-7).abs() < 1e-20);
    }

    #[test]
    fn fit_step_hits_micro_grid() {
        let s = ScaleParams::new(0.1, 0.01, Regime::Regime1).unwrap();
        let step = fit_step(1.0, step_bound(&s, 0.001));
        assert_eq!(step_count(1.0, step).unwrap(), 1_000_000);
        assert_eq!(step, 1e-6);
    }

    #[test]
    fn coarse_step_rejected_unless_overridden() {
        let m = builtin_model(PURE_OU, &ModelOptions::new()).unwrap();
        let s = ScaleParams::new(0.1, 0.01, Regime::Regime1).unwrap();
        let cfg = SimConfig::new(1.0, 0.01, 1e-4, 1);
        assert!(matches!(simulate_euler(&m, &s, 1.0, &cfg), Err(Error::StepTooCoarse { .. })));
        assert!(simulate_euler(&m, &s, 1.0, &cfg.allow_coarse(true)).is_ok());
    }

    #[test]
    fn stride_must_divide() {
        let m = builtin_model(PURE_OU, &ModelOptions::new()).unwrap();
        let s = ScaleParams::new(0.1, 1.0, Regime::Regime3).unwrap();
        let cfg = SimConfig::new(1.0, 1.0, 0.001, 1).with_stride(7);
        assert!(simulate_euler(&m, &s, 1.0, &cfg).is_err());
        let p = simulate_euler(&m, &s, 1.0, &cfg.with_stride(10)).unwrap();
        assert_eq!(p.len(), 101);
        assert!((p.step() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn noiseless_reduces_to_explicit_euler() {
        let m = builtin_model(PURE_OU, &ModelOptions::new()).unwrap();
        let s = ScaleParams::new(0.1, 1.0, Regime::Regime3).unwrap();
        let mut cfg = SimConfig::new(2.0, 1.0, 0.001, 9);
        cfg.noise_scale = 0.0;
        let p = simulate_euler(&m, &s, 1.5, &cfg).unwrap();
        let mut x = 2.0;
        for (k, v) in p.values().iter().enumerate() {
            assert_eq!(*v, x, "step {k}");
            x += -1.5 * x * 0.001;
        }
    }

    #[test]
    fn same_seed_same_path() {
        let m = builtin_model(PURE_OU, &ModelOptions::new()).unwrap();
        let s = ScaleParams::new(0.1, 1.0, Regime::Regime3).unwrap();
        let cfg = SimConfig::new(1.0, 1.0, 0.001, 42);
        let a = simulate_euler(&m, &s, 1.0, &cfg).unwrap();
        let b = simulate_euler(&m, &s, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_euler(&m, &s, 1.0, &cfg.clone().with_stream(1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn regime3_y_free_drift_is_c_itself() {
        let m = builtin_model(PURE_OU, &ModelOptions::new()).unwrap();
        let grid = TorusGrid::for_model(&m);
        let v = averaged_drift(&m, Regime::Regime3, 1.3, 0.7, &grid).unwrap();
        assert!((v + 1.3 * 0.7).abs() < 1e-14);
        let v2 = averaged_drift(&m, Regime::Regime2 { gamma: 2.0 }, 1.3, 0.7, &grid).unwrap();
        assert!((v - v2).abs() < 1e-12);
    }

    #[test]
    fn positive_speed_averages_to_harmonic_mean() {
        // mu ~ 1/c, so int c dmu = lambda / int 1/c = sqrt(3) for 2 + sin
        let m = builtin_model(REGIME3_POSITIVE_SPEED, &ModelOptions::new()).unwrap();
        let grid = TorusGrid::for_model(&m);
        let v = averaged_drift(&m, Regime::Regime3, 1.0, 0.0, &grid).unwrap();
        assert!((v - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_ode_is_constant() {
        let p = integrate_rk4(|_| Ok(0.0), 0.4, 1.0, 0.01).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.4));
    }
}
