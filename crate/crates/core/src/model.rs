//! Multiscale diffusion models
//!
//! A model is the coefficient triple of
//!
//! ```text
//! dX = [ (eps/delta) b_theta(X, X/delta) + c_theta(X, X/delta) ] dt + sqrt(eps) sigma(X, X/delta) dW
//! ```
//!
//! with `b`, `c`, `sigma` periodic with period `lambda` in the fast variable
//! `y = x/delta`, together with the parameter interval and, for the
//! two-scale potential family `b = -Q'(y)`, `c = -theta V'(x)`,
//! `sigma = sqrt(2D)`, the potential data that enables closed-form routes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Drift coefficient `(theta, x, y) -> value`.
pub type DriftFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Diffusion coefficient `(x, y) -> value`.
pub type DiffusionFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub type ModelOptions = BTreeMap<String, f64>;

const PERIODICITY_TOL: f64 = 1e-12;
const SIGMA_MIN: f64 = 1e-8;
const PROBE_SEED: u64 = 0x005e_ed0f_7e57;
const PROBE_COUNT: usize = 64;
const PROBE_X_RANGE: f64 = 5.0;

/// Closed parameter interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaDomain {
    pub lo: f64,
    pub hi: f64,
}

impl ThetaDomain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "theta domain requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lo && theta <= self.hi
    }

    pub fn check(&self, theta: f64) -> Result<()> {
        if self.contains(theta) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                theta,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// `points` equally spaced values including both endpoints.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        assert!(points >= 2, "a theta grid needs at least two points");
        let h = (self.hi - self.lo) / (points - 1) as f64;
        (0..points)
            .map(|k| if k + 1 == points { self.hi } else { self.lo + k as f64 * h })
            .collect()
    }
}

/// Potential data of the two-scale gradient family
/// `b(y) = -Q'(y)`, `c_theta(x) = -theta V'(x)`, `sigma = sqrt(2D)`.
#[derive(Clone)]
pub struct GradientStructure {
    pub q: ScalarFn,
    pub dq: ScalarFn,
    pub dv: ScalarFn,
    /// Temperature `D`.
    pub diffusion: f64,
}

impl GradientStructure {
    pub fn sigma(&self) -> f64 {
        (2.0 * self.diffusion).sqrt()
    }
}

impl fmt::Debug for GradientStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GradientStructure")
            .field("diffusion", &self.diffusion)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub drift_b: DriftFn,
    pub drift_c: DriftFn,
    pub sigma: DiffusionFn,
    pub period: f64,
    pub theta_domain: ThetaDomain,
    pub linear_in_theta: bool,
    pub dimension: usize,
    pub gradient: Option<GradientStructure>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("period", &self.period)
            .field("theta_domain", &self.theta_domain)
            .field("linear_in_theta", &self.linear_in_theta)
            .field("dimension", &self.dimension)
            .field("gradient", &self.gradient)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Builds a one-dimensional model and validates periodicity and
    /// nondegeneracy on a probe set.
    pub fn new(
        name: impl Into<String>,
        period: f64,
        theta_domain: ThetaDomain,
        drift_b: DriftFn,
        drift_c: DriftFn,
        sigma: DiffusionFn,
    ) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidModel(format!("period must be positive, got {period}")));
        }
        let spec = Self {
            name: name.into(),
            drift_b,
            drift_c,
            sigma,
            period,
            theta_domain,
            linear_in_theta: false,
            dimension: 1,
            gradient: None,
        };
        spec.check_periodicity()?;
        spec.check_nondegenerate()?;
        Ok(spec)
    }

    pub fn with_linear_in_theta(mut self, linear: bool) -> Self {
        self.linear_in_theta = linear;
        self
    }

    /// Attaches potential data; the model becomes linear in theta.
    pub fn with_gradient(mut self, gradient: GradientStructure) -> Self {
        self.gradient = Some(gradient);
        self.linear_in_theta = true;
        self
    }

    pub fn with_theta_domain(mut self, domain: ThetaDomain) -> Self {
        self.theta_domain = domain;
        self
    }

    #[inline]
    pub fn b(&self, theta: f64, x: f64, y: f64) -> f64 {
        (self.drift_b)(theta, x, y)
    }

    #[inline]
    pub fn c(&self, theta: f64, x: f64, y: f64) -> f64 {
        (self.drift_c)(theta, x, y)
    }

    #[inline]
    pub fn sigma_at(&self, x: f64, y: f64) -> f64 {
        (self.sigma)(x, y)
    }

    pub fn gradient_structure(&self) -> Result<&GradientStructure> {
        self.gradient
            .as_ref()
            .ok_or_else(|| Error::MissingGradient(self.name.clone()))
    }

    fn probes(&self) -> Vec<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let dom = self.theta_domain;
        (0..PROBE_COUNT)
            .map(|_| {
                (
                    rng.random_range(dom.lo..=dom.hi),
                    rng.random_range(-PROBE_X_RANGE..=PROBE_X_RANGE),
                    rng.random_range(0.0..self.period),
                )
            })
            .collect()
    }

    /// `f(theta, x, y + lambda) = f(theta, x, y)` on random probes for
    /// `b`, `c` and `sigma`.
    pub fn check_periodicity(&self) -> Result<()> {
        for (theta, x, y) in self.probes() {
            let checks = [
                ("b", self.b(theta, x, y), self.b(theta, x, y + self.period)),
                ("c", self.c(theta, x, y), self.c(theta, x, y + self.period)),
                ("sigma", self.sigma_at(x, y), self.sigma_at(x, y + self.period)),
            ];
            for (label, a, shifted) in checks {
                if !a.is_finite() || (a - shifted).abs() > PERIODICITY_TOL * a.abs().max(1.0) {
                    return Err(Error::InvalidModel(format!(
                        "{label} is not {}-periodic at theta={theta}, x={x}, y={y}: {a} vs {shifted}",
                        self.period
                    )));
                }
            }
        }
        Ok(())
    }

    /// Minimum of `sigma^2` over a probe grid.
    pub fn min_sigma_sq(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..=20 {
            let x = -PROBE_X_RANGE + i as f64 * PROBE_X_RANGE / 10.0;
            for j in 0..32 {
                let y = j as f64 * self.period / 32.0;
                let s = self.sigma_at(x, y);
                min = min.min(if s.is_finite() { s * s } else { 0.0 });
            }
        }
        min
    }

    fn check_nondegenerate(&self) -> Result<()> {
        let min = self.min_sigma_sq();
        if min < SIGMA_MIN * SIGMA_MIN {
            return Err(Error::InvalidModel(format!(
                "diffusion is degenerate: min sigma^2 = {min:e}"
            )));
        }
        Ok(())
    }

    /// True when `b` vanishes identically on the probe set.
    pub fn fast_drift_vanishes(&self) -> bool {
        self.probes().into_iter().all(|(theta, x, y)| self.b(theta, x, y) == 0.0)
    }
}

/// Limit of `eps/delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `eps/delta -> infinity` (homogenization).
    Regime1,
    /// `eps/delta -> gamma`.
    Regime2 { gamma: f64 },
    /// `eps/delta -> 0` (averaging).
    Regime3,
}

impl Regime {
    pub fn index(&self) -> u8 {
        match self {
            Regime::Regime1 => 1,
            Regime::Regime2 { .. } => 2,
            Regime::Regime3 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    pub epsilon: f64,
    pub delta: f64,
    pub regime: Regime,
}

impl ScaleParams {
    pub fn new(epsilon: f64, delta: f64, regime: Regime) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0 && delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon and delta must be positive, got ({epsilon}, {delta})"
            )));
        }
        if let Regime::Regime2 { gamma } = regime {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
            }
        }
        Ok(Self {
            epsilon,
            delta,
            regime,
        })
    }

    /// `eps / delta`.
    pub fn ratio(&self) -> f64 {
        self.epsilon / self.delta
    }

    /// `|eps/delta - gamma|` for Regime 2; reported, never enforced.
    pub fn gamma_mismatch(&self) -> Option<f64> {
        match self.regime {
            Regime::Regime2 { gamma } => Some((self.ratio() - gamma).abs()),
            _ => None,
        }
    }
}

/// Advisory regime from the observed ratio. Ratios exactly on a band edge
/// map to Regime 2, which then carries the ratio as `gamma`.
pub fn classify_regime(epsilon: f64, delta: f64, tolerance_band: f64) -> Regime {
    let ratio = epsilon / delta;
    if ratio > 1.0 / tolerance_band {
        Regime::Regime1
    } else if ratio < tolerance_band {
        Regime::Regime3
    } else {
        Regime::Regime2 { gamma: ratio }
    }
}

pub type ModelFactory = Arc<dyn Fn(&ModelOptions) -> Result<ModelSpec> + Send + Sync>;

/// Named model constructors. [`ModelRegistry::with_builtins`] carries the
/// three built-in models; more can be registered.
#[derive(Clone)]
pub struct ModelRegistry {
    factories: BTreeMap<String, ModelFactory>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(LANGEVIN_COS_SIN, Arc::new(langevin_cos_sin));
        reg.register(PURE_OU, Arc::new(pure_ou));
        reg.register(REGIME3_POSITIVE_SPEED, Arc::new(regime3_positive_speed));
        reg
    }

    pub fn register(&mut self, name: impl Into<String>, factory: ModelFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, options: &ModelOptions) -> Result<ModelSpec> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownModel(name.to_string()))?;
        factory(options)
    }
}

pub const LANGEVIN_COS_SIN: &str = "langevin-cos-sin";
pub const PURE_OU: &str = "pure-ou";
pub const REGIME3_POSITIVE_SPEED: &str = "regime3-positive-speed";

pub const DEFAULT_DIFFUSION: f64 = 0.5;
const DEFAULT_THETA_LO: f64 = -10.0;
const DEFAULT_THETA_HI: f64 = 10.0;

/// Builds one of the built-in models.
pub fn builtin_model(name: &str, options: &ModelOptions) -> Result<ModelSpec> {
    ModelRegistry::with_builtins().build(name, options)
}

struct OptionReader<'a> {
    model: &'static str,
    options: &'a ModelOptions,
    allowed: &'static [&'static str],
}

impl OptionReader<'_> {
    fn validate(&self) -> Result<()> {
        for key in self.options.keys() {
            if !self.allowed.contains(&key.as_str()) {
                return Err(Error::InvalidModel(format!(
                    "model `{}` does not accept option `{key}` (allowed: {})",
                    self.model,
                    self.allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.options.get(key).copied().unwrap_or(default)
    }

    fn diffusion(&self) -> Result<f64> {
        let d = self.get("D", DEFAULT_DIFFUSION);
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidModel(format!(
                "model `{}`: D must be positive so that sigma = sqrt(2D) > 0, got {d}",
                self.model
            )));
        }
        Ok(d)
    }

    fn domain(&self) -> Result<ThetaDomain> {
        ThetaDomain::new(
            self.get("theta_lo", DEFAULT_THETA_LO),
            self.get("theta_hi", DEFAULT_THETA_HI),
        )
        .map_err(|e| Error::InvalidModel(e.to_string()))
    }
}

fn gradient_model(
    name: &'static str,
    d: f64,
    domain: ThetaDomain,
    period: f64,
    q: ScalarFn,
    dq: ScalarFn,
    dv: ScalarFn,
) -> Result<ModelSpec> {
    let sigma = (2.0 * d).sqrt();
    let dq_b = dq.clone();
    let dv_c = dv.clone();
    let spec = ModelSpec::new(
        name,
        period,
        domain,
        Arc::new(move |_theta, _x, y| -dq_b(y)),
        Arc::new(move |theta, x, _y| -theta * dv_c(x)),
        Arc::new(move |_x, _y| sigma),
    )?;
    Ok(spec.with_gradient(GradientStructure {
        q,
        dq,
        dv,
        diffusion: d,
    }))
}

/// `Q(y) = cos y + sin y`, `V(x) = x^2/2`, `sigma = sqrt(2D)`, period `2 pi`.
fn langevin_cos_sin(options: &ModelOptions) -> Result<ModelSpec> {
    let reader = OptionReader {
        model: LANGEVIN_COS_SIN,
        options,
        allowed: &["D", "theta_lo", "theta_hi"],
    };
    reader.validate()?;
    gradient_model(
        LANGEVIN_COS_SIN,
        reader.diffusion()?,
        reader.domain()?,
        2.0 * PI,
        Arc::new(|y: f64| y.cos() + y.sin()),
        Arc::new(|y: f64| y.cos() - y.sin()),
        Arc::new(|x: f64| x),
    )
}

/// Ornstein-Uhlenbeck drift `c = -theta x`, no fast drift.
fn pure_ou(options: &ModelOptions) -> Result<ModelSpec> {
    let reader = OptionReader {
        model: PURE_OU,
        options,
        allowed: &["D", "theta_lo", "theta_hi"],
    };
    reader.validate()?;
    gradient_model(
        PURE_OU,
        reader.diffusion()?,
        reader.domain()?,
        2.0 * PI,
        Arc::new(|_| 0.0),
        Arc::new(|_| 0.0),
        Arc::new(|x: f64| x),
    )
}

/// `c = theta (2 + sin(2 pi y / lambda))`, positive for theta > 0.
fn regime3_positive_speed(options: &ModelOptions) -> Result<ModelSpec> {
    let reader = OptionReader {
        model: REGIME3_POSITIVE_SPEED,
        options,
        allowed: &["D", "theta_lo", "theta_hi", "period"],
    };
    reader.validate()?;
    let d = reader.diffusion()?;
    let period = reader.get("period", 2.0 * PI);
    let sigma = (2.0 * d).sqrt();
    let wave = 2.0 * PI / period;
    let lo = reader.get("theta_lo", 0.0);
    let hi = reader.get("theta_hi", DEFAULT_THETA_HI);
    let domain = ThetaDomain::new(lo, hi).map_err(|e| Error::InvalidModel(e.to_string()))?;
    Ok(ModelSpec::new(
        REGIME3_POSITIVE_SPEED,
        period,
        domain,
        Arc::new(|_, _, _| 0.0),
        Arc::new(move |theta, _x, y| theta * (2.0 + (wave * y).sin())),
        Arc::new(move |_, _| sigma),
    )?
    .with_linear_in_theta(true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(pairs: &[(&str, f64)]) -> ModelOptions {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn langevin_coefficients() {
        let m = builtin_model(LANGEVIN_COS_SIN, &opts(&[("D", 0.5)])).unwrap();
        assert!((m.period - 2.0 * PI).abs() < 1e-15);
        for &y in &[0.0, 0.3, 1.7, 4.0] {
            assert!((m.b(1.0, 0.2, y) - (y.sin() - y.cos())).abs() < 1e-15);
            assert_eq!(m.sigma_at(0.0, y), 1.0);
        }
        assert_eq!(m.c(2.0, 1.5, 0.1), -3.0);
        assert!(m.linear_in_theta);
        assert!(!m.fast_drift_vanishes());
    }

    #[test]
    fn pure_ou_has_no_fast_drift() {
        let m = builtin_model(PURE_OU, &opts(&[("D", 0.5)])).unwrap();
        assert!(m.fast_drift_vanishes());
        assert!(m.check_periodicity().is_ok());
        assert_eq!(m.c(1.0, 2.0, 0.3), -2.0);
    }

    #[test]
    fn regime3_speed_is_positive() {
        let m = builtin_model(REGIME3_POSITIVE_SPEED, &ModelOptions::new()).unwrap();
        let min = (0..1000)
            .map(|j| m.c(1.0, 0.0, j as f64 * m.period / 1000.0))
            .fold(f64::INFINITY, f64::min);
        assert!(min >= 1.0 - 1e-12);
        assert!((min - 1.0).abs() < 1e-4);
    }

    #[test]
    fn unknown_name_and_bad_options() {
        assert!(matches!(
            builtin_model("nope", &ModelOptions::new()),
            Err(Error::UnknownModel(_))
        ));
        assert!(matches!(
            builtin_model(PURE_OU, &opts(&[("D", 0.0)])),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            builtin_model(PURE_OU, &opts(&[("bogus", 1.0)])),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn non_periodic_model_is_rejected() {
        let res = ModelSpec::new(
            "bad",
            1.0,
            ThetaDomain::new(0.0, 1.0).unwrap(),
            Arc::new(|_, _, y| y),
            Arc::new(|_, _, _| 0.0),
            Arc::new(|_, _| 1.0),
        );
        assert!(matches!(res, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify_regime(0.1, 0.001, 0.1), Regime::Regime1);
        assert_eq!(classify_regime(0.1, 0.1, 0.1), Regime::Regime2 { gamma: 1.0 });
        // ratio 0.1 is above the 0.05 band, so intermediate
        assert!(matches!(classify_regime(0.01, 0.1, 0.05), Regime::Regime2 { .. }));
        assert_eq!(classify_regime(0.001, 0.1, 0.05), Regime::Regime3);
        // exactly on the edge
        assert!(matches!(classify_regime(1.0, 10.0, 0.1), Regime::Regime2 { .. }));
    }

    #[test]
    fn registry_accepts_custom_models() {
        let mut reg = ModelRegistry::with_builtins();
        reg.register(
            "flat",
            Arc::new(|_: &ModelOptions| {
                ModelSpec::new(
                    "flat",
                    1.0,
                    ThetaDomain::new(-1.0, 1.0)?,
                    Arc::new(|_, _, _| 0.0),
                    Arc::new(|t, _, _| t),
                    Arc::new(|_, _| 1.0),
                )
            }),
        );
        assert!(reg.build("flat", &ModelOptions::new()).is_ok());
        assert_eq!(reg.names().count(), 4);
    }

    #[test]
    fn scale_params_validate() {
        assert!(ScaleParams::new(0.0, 1.0, Regime::Regime3).is_err());
        assert!(ScaleParams::new(0.1, 0.1, Regime::Regime2 { gamma: -1.0 }).is_err());
        let s = ScaleParams::new(0.1, 0.05, Regime::Regime2 { gamma: 1.5 }).unwrap();
        assert!((s.gamma_mismatch().unwrap() - 0.5).abs() < 1e-12);
    }
}
