//! Point estimation: closed-form discretized MLE for gradient models, the
//! homogenization correction, bounded argmax for everything else and CLT
//! standardization.

use crate::dynamics::{fit_step, solve_limiting_ode};
use crate::error::{Error, Result};
use crate::likelihood::{
    fisher_information, log_likelihood, pseudo_log_likelihood, LikelihoodKind, DEFAULT_FISHER_FLOOR,
};
use crate::model::{GradientStructure, ModelSpec, ScaleParams, ThetaDomain};
use crate::numerics::{trapezoid, CompensatedSum};
use crate::path::Path;
use crate::torus::{partition_constants, TorusGrid};

/// Points in the pre-scan of [`maximize`].
pub const SCAN_POINTS: usize = 33;
/// Termination width of the golden-section search.
pub const ARGMAX_TOL: f64 = 1e-8;
/// Distance to an endpoint below which a maximizer is flagged.
pub const BOUNDARY_TOL: f64 = 1e-6;
/// Default step of the ODE used for Fisher information and variances.
pub const DEFAULT_ODE_STEP: f64 = 1e-3;

fn gradient_of(model: &ModelSpec) -> Result<&GradientStructure> {
    if !model.linear_in_theta {
        return Err(Error::MissingGradient(format!(
            "model '{}' is not linear in theta",
            model.name
        )));
    }
    model.gradient_structure()
}

/// Path sums `(sum V' dx, sum Q'(x/delta) V' step, sum V'^2 step)` over the
/// left endpoints.
fn gradient_sums(path: &Path, g: &GradientStructure, delta: f64) -> (f64, f64, f64) {
    let mut a = CompensatedSum::new();
    let mut b = CompensatedSum::new();
    let mut c = CompensatedSum::new();
    for (x, dx) in path.increments() {
        let dv = (g.dv)(x);
        a.add(dv * dx);
        b.add((g.dq)(x / delta) * dv);
        c.add(dv * dv);
    }
    let step = path.step();
    (a.value(), b.value() * step, c.value() * step)
}

/// Maximizer of the discretized pseudo-likelihood for `b = -Q'(y)`,
/// `c = -theta V'(x)`:
///
/// `[(1 + r^2) sum V' dx + r sum Q' V' step] / [-(1 + r^2) sum V'^2 step]`,
/// `r = delta / eps`.
pub fn mle_closed_form(path: &Path, model: &ModelSpec, scale: &ScaleParams) -> Result<f64> {
    let g = gradient_of(model)?;
    let r = scale.delta / scale.epsilon;
    let (a, b, c) = gradient_sums(path, g, scale.delta);
    let denom = -c * (1.0 + r * r);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::VanishingDenominator);
    }
    let theta = (a * (1.0 + r * r) + r * b) / denom;
    if theta.is_finite() {
        Ok(theta)
    } else {
        Err(Error::NonFinite("closed-form estimate"))
    }
}

/// Homogenization factor `lambda^2 / (Z Zhat)` of a gradient model.
pub fn correction_factor(model: &ModelSpec, grid: &TorusGrid) -> Result<f64> {
    let g = model.gradient_structure()?;
    let q = g.q.clone();
    let factor = partition_constants(&move |y| q(y), g.diffusion, grid)?.homogenization_factor();
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::NonFinite("correction factor"));
    }
    Ok(factor)
}

/// `(theta_hat / factor, factor)`.
pub fn correct_estimator(theta_hat: f64, model: &ModelSpec, grid: &TorusGrid) -> Result<(f64, f64)> {
    let factor = correction_factor(model, grid)?;
    Ok((theta_hat / factor, factor))
}

/// Path-dependent center of the pseudo-MLE:
/// `theta0 + (eps/delta) sum V'Q' step / ((1 + r^2) sum V'^2 step)`.
pub fn langevin_bias_center(path: &Path, model: &ModelSpec, scale: &ScaleParams, theta0: f64) -> Result<f64> {
    let g = gradient_of(model)?;
    let r = scale.delta / scale.epsilon;
    let (_, b, c) = gradient_sums(path, g, scale.delta);
    if c == 0.0 {
        return Err(Error::VanishingDenominator);
    }
    Ok(theta0 + scale.ratio() * b / ((1.0 + r * r) * c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Argmax {
    pub theta: f64,
    pub value: f64,
    /// Maximizer within [`BOUNDARY_TOL`] of an endpoint.
    pub boundary: bool,
}

fn is_unimodal(values: &[f64]) -> bool {
    let peak = argmax_index(values);
    values[..=peak].windows(2).all(|w| w[1] >= w[0]) && values[peak..].windows(2).all(|w| w[1] <= w[0])
}

fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn scan(f: &dyn Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let thetas: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| if i + 1 == SCAN_POINTS { hi } else { lo + i as f64 * h })
        .collect();
    let values = thetas.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
    Ok((thetas, values))
}

fn golden_section(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > ARGMAX_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Maximizes `f` over `[lo, hi]`: a coarse scan, then golden section in the
/// bracket around the best scan point when the scan is unimodal, otherwise
/// repeated rescans around the best point.
pub fn maximize(f: &dyn Fn(f64) -> Result<f64>, domain: ThetaDomain) -> Result<Argmax> {
    let (mut lo, mut hi) = (domain.lo, domain.hi);
    let (thetas, values) = scan(f, lo, hi)?;
    let i = argmax_index(&values);
    let mut best = (thetas[i], values[i]);
    let bracket = |i: usize, thetas: &[f64]| (thetas[i.saturating_sub(1)], thetas[(i + 1).min(thetas.len() - 1)]);

    let theta = if is_unimodal(&values) {
        let (a, b) = bracket(i, &thetas);
        let t = golden_section(f, a, b)?;
        let v = f(t)?;
        if v >= best.1 {
            t
        } else {
            best.0
        }
    } else {
        let (mut thetas, mut values) = (thetas, values);
        loop {
            let i = argmax_index(&values);
            if values[i] >= best.1 {
                best = (thetas[i], values[i]);
            }
            let (a, b) = bracket(i, &thetas);
            lo = a;
            hi = b;
            if hi - lo <= ARGMAX_TOL {
                break best.0;
            }
            (thetas, values) = scan(f, lo, hi)?;
        }
    };
    let value = f(theta)?;
    let boundary = (theta - domain.lo).abs() < BOUNDARY_TOL || (domain.hi - theta).abs() < BOUNDARY_TOL;
    Ok(Argmax { theta, value, boundary })
}

/// Maximizer of the exact or pseudo log-likelihood over `domain`.
pub fn mle_argmax(
    path: &Path,
    model: &ModelSpec,
    scale: &ScaleParams,
    kind: LikelihoodKind,
    domain: ThetaDomain,
) -> Result<Argmax> {
    let objective: Box<dyn Fn(f64) -> Result<f64>> = match kind {
        LikelihoodKind::Exact => Box::new(|t| Ok(log_likelihood(path, model, scale, t)?.value)),
        LikelihoodKind::Pseudo => Box::new(|t| Ok(pseudo_log_likelihood(path, model, scale, t)?.value)),
        other => {
            return Err(Error::InvalidArgument(format!(
                "argmax over a path needs the exact or pseudo likelihood, got {other}"
            )))
        }
    };
    maximize(objective.as_ref(), domain)
}

/// `(theta_hat - center) / sqrt(eps * variance)`.
pub fn standardize(theta_hat: f64, center: f64, variance: f64, epsilon: f64) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {variance}")));
    }
    Ok((theta_hat - center) / (epsilon * variance).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub theta_hat: f64,
    pub theta_tilde: f64,
    pub correction_factor: f64,
    pub fisher_info: Option<f64>,
    pub asymptotic_sd: Option<f64>,
    pub standardized_residual: Option<f64>,
    pub kind: LikelihoodKind,
    pub boundary: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(crate::io::format_f64).unwrap_or_default()
}

impl EstimateReport {
    pub const CSV_HEADER: &'static str =
        "theta_hat,theta_tilde,correction_factor,fisher_info,asymptotic_sd,standardized_residual,kind,boundary";

    pub fn to_key_value(&self) -> String {
        use crate::io::format_f64 as f;
        format!(
            "theta_hat={}\ntheta_tilde={}\ncorrection_factor={}\nfisher_info={}\nasymptotic_sd={}\nstandardized_residual={}\nkind={}\nboundary={}\n",
            f(self.theta_hat),
            f(self.theta_tilde),
            f(self.correction_factor),
            opt(self.fisher_info),
            opt(self.asymptotic_sd),
            opt(self.standardized_residual),
            self.kind,
            self.boundary
        )
    }

    pub fn to_csv_row(&self) -> String {
        use crate::io::format_f64 as f;
        format!(
            "{},{},{},{},{},{},{},{}",
            f(self.theta_hat),
            f(self.theta_tilde),
            f(self.correction_factor),
            opt(self.fisher_info),
            opt(self.asymptotic_sd),
            opt(self.standardized_residual),
            self.kind,
            self.boundary
        )
    }
}

/// How residuals are centered.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Centering {
    Fixed(f64),
    /// Path-dependent center of the pseudo-MLE.
    Langevin(f64),
}

/// Per-configuration quantities shared by every path: correction factor,
/// limiting ODE, Fisher information and asymptotic variance.
#[derive(Debug, Clone)]
pub struct Estimator<'a> {
    model: &'a ModelSpec,
    scale: ScaleParams,
    kind: LikelihoodKind,
    factor: f64,
    fisher_info: Option<f64>,
    variance: Option<f64>,
    centering: Option<Centering>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub kind: LikelihoodKind,
    /// True parameter; enables residuals.
    pub theta0: Option<f64>,
    pub x0: f64,
    pub horizon: f64,
    pub ode_step: f64,
    pub fisher_floor: f64,
}

impl EstimatorOptions {
    pub fn new(kind: LikelihoodKind, theta0: Option<f64>, x0: f64, horizon: f64) -> Self {
        Self {
            kind,
            theta0,
            x0,
            horizon,
            ode_step: DEFAULT_ODE_STEP,
            fisher_floor: DEFAULT_FISHER_FLOOR,
        }
    }
}

impl<'a> Estimator<'a> {
    pub fn new(model: &'a ModelSpec, scale: &ScaleParams, grid: &TorusGrid, opts: &EstimatorOptions) -> Result<Self> {
        // the homogenization bias only arises in Regime 1
        let factor = if model.gradient.is_some() && scale.regime == crate::model::Regime::Regime1 {
            correction_factor(model, grid)?
        } else {
            1.0
        };
        let mut fisher_info = None;
        let mut variance = None;
        let mut centering = None;
        if let Some(theta0) = opts.theta0 {
            let ode_step = fit_step(opts.horizon, opts.ode_step);
            let ode = solve_limiting_ode(model, scale.regime, theta0, opts.x0, opts.horizon, ode_step, grid)?;
            if model.fast_drift_vanishes() {
                let report = fisher_information(&ode, model, theta0, scale.regime, grid, opts.fisher_floor)?;
                fisher_info = Some(report.info);
                variance = Some(1.0 / report.info);
                centering = Some(Centering::Fixed(theta0));
            } else if let (Some(g), true) = (&model.gradient, model.linear_in_theta) {
                let dv2: Vec<f64> = ode.values().iter().map(|&x| (g.dv)(x).powi(2)).collect();
                let integral = trapezoid(&dv2, ode.step());
                if integral > 0.0 {
                    variance = Some(2.0 * g.diffusion / integral);
                    centering = Some(Centering::Langevin(theta0));
                }
            }
        }
        Ok(Self {
            model,
            scale: *scale,
            kind: opts.kind,
            factor,
            fisher_info,
            variance,
            centering,
        })
    }

    pub fn correction_factor(&self) -> f64 {
        self.factor
    }

    pub fn variance(&self) -> Option<f64> {
        self.variance
    }

    pub fn estimate(&self, path: &Path) -> Result<EstimateReport> {
        let use_closed = self.model.linear_in_theta
            && self.model.gradient.is_some()
            && (self.kind == LikelihoodKind::Pseudo || self.model.fast_drift_vanishes());
        let (theta_hat, boundary) = if use_closed {
            (mle_closed_form(path, self.model, &self.scale)?, false)
        } else {
            let a = mle_argmax(path, self.model, &self.scale, self.kind, self.model.theta_domain)?;
            (a.theta, a.boundary)
        };
        let standardized_residual = match (self.centering, self.variance) {
            (Some(Centering::Fixed(center)), Some(v)) => Some(standardize(theta_hat, center, v, self.scale.epsilon)?),
            (Some(Centering::Langevin(theta0)), Some(v)) => {
                let center = langevin_bias_center(path, self.model, &self.scale, theta0)?;
                Some(standardize(theta_hat, center, v, self.scale.epsilon)?)
            }
            _ => None,
        };
        Ok(EstimateReport {
            theta_hat,
            theta_tilde: theta_hat / self.factor,
            correction_factor: self.factor,
            fisher_info: self.fisher_info,
            asymptotic_sd: self.variance.map(|v| (self.scale.epsilon * v).sqrt()),
            standardized_residual,
            kind: self.kind,
            boundary,
        })
    }
}
