//! Path functionals: discretized exact and pseudo log-likelihoods, their
//! limits along the averaged ODE, the Regime 1 bias `H`, Fisher information
//! and the normed likelihood ratio.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Regime, ScaleParams};
use crate::numerics::{trapezoid, CompensatedSum};
use crate::path::Path;
use crate::torus::{partition_constants, solve_poisson_phi_with, stationary_density, TorusDensity, TorusGrid};

/// Default lower bound on the Fisher information.
pub const DEFAULT_FISHER_FLOOR: f64 = 1e-10;
/// Relative agreement required between the two routes to `H`.
pub const BIAS_CROSS_CHECK_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LikelihoodKind {
    Exact,
    Pseudo,
    LimitingRegime1,
    LimitingRegime2,
    LimitingRegime3,
    /// `J^1 + H`, the Regime 1 limit of the pseudo-likelihood.
    LimitingPseudo,
}

impl LikelihoodKind {
    pub fn limiting(regime: Regime) -> Self {
        match regime {
            Regime::Regime1 => Self::LimitingRegime1,
            Regime::Regime2 { .. } => Self::LimitingRegime2,
            Regime::Regime3 => Self::LimitingRegime3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Pseudo => "pseudo",
            Self::LimitingRegime1 => "limiting1",
            Self::LimitingRegime2 => "limiting2",
            Self::LimitingRegime3 => "limiting3",
            Self::LimitingPseudo => "limiting-pseudo",
        }
    }
}

impl fmt::Display for LikelihoodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodValue {
    pub value: f64,
    pub kind: LikelihoodKind,
    pub theta: f64,
}

impl LikelihoodValue {
    fn new(value: f64, kind: LikelihoodKind, theta: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("likelihood accumulation"));
        }
        Ok(Self { value, kind, theta })
    }
}

/// `sum f(x_k) dx_k - 1/2 sum |drift(x_k)|^2_alpha step` with the fast drift
/// weighted by `fast_weight`.
fn discretized(path: &Path, model: &ModelSpec, scale: &ScaleParams, theta: f64, fast_weight: f64) -> f64 {
    let inv_delta = 1.0 / scale.delta;
    let mut stochastic = CompensatedSum::new();
    let mut riemann = CompensatedSum::new();
    for (x, dx) in path.increments() {
        let y = x * inv_delta;
        let drift = if fast_weight == 0.0 {
            model.c(theta, x, y)
        } else {
            fast_weight * model.b(theta, x, y) + model.c(theta, x, y)
        };
        let s = model.sigma_at(x, y);
        let weighted = drift / (s * s);
        stochastic.add(weighted * dx);
        riemann.add(weighted * drift);
    }
    stochastic.value() - 0.5 * riemann.value() * path.step()
}

/// Discretized log-likelihood `Z^eps_theta` with left-point stochastic sums.
pub fn log_likelihood(path: &Path, model: &ModelSpec, scale: &ScaleParams, theta: f64) -> Result<LikelihoodValue> {
    model.theta_domain.check(theta)?;
    let v = discretized(path, model, scale, theta, scale.ratio());
    LikelihoodValue::new(v, LikelihoodKind::Exact, theta)
}

/// `Z^eps_theta` evaluated with the fast drift forced to zero.
pub fn log_likelihood_slow(path: &Path, model: &ModelSpec, scale: &ScaleParams, theta: f64) -> Result<LikelihoodValue> {
    model.theta_domain.check(theta)?;
    let v = discretized(path, model, scale, theta, 0.0);
    LikelihoodValue::new(v, LikelihoodKind::Exact, theta)
}

/// Pseudo log-likelihood `(delta/eps)^2 Z + Z(b = 0)`.
pub fn pseudo_log_likelihood(path: &Path, model: &ModelSpec, scale: &ScaleParams, theta: f64) -> Result<LikelihoodValue> {
    let r = scale.delta / scale.epsilon;
    let full = log_likelihood(path, model, scale, theta)?.value;
    let slow = log_likelihood_slow(path, model, scale, theta)?.value;
    LikelihoodValue::new(r * r * full + slow, LikelihoodKind::Pseudo, theta)
}

/// Precomputed invariant densities along an ODE path, reused across `theta`.
pub struct LimitingLikelihood<'a> {
    model: &'a ModelSpec,
    path: &'a Path,
    regime: Regime,
    theta0: f64,
    densities: Vec<TorusDensity>,
}

impl<'a> LimitingLikelihood<'a> {
    /// `ode_path` is the limiting path at `theta0`. Regime 1 requires `b = 0`;
    /// with a fast drift use [`limiting_pseudo_likelihood`].
    pub fn new(ode_path: &'a Path, model: &'a ModelSpec, theta0: f64, regime: Regime, grid: &TorusGrid) -> Result<Self> {
        if regime == Regime::Regime1 && !model.fast_drift_vanishes() {
            return Err(Error::FastDriftPresent);
        }
        let densities = ode_path
            .values()
            .iter()
            .map(|&x| stationary_density(model, regime, theta0, x, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            path: ode_path,
            regime,
            theta0,
            densities,
        })
    }

    pub fn value(&self, theta: f64) -> Result<LikelihoodValue> {
        self.model.theta_domain.check(theta)?;
        let m = self.model;
        let t0 = self.theta0;
        let gamma = match self.regime {
            Regime::Regime2 { gamma } => Some(gamma),
            _ => None,
        };
        let integrand: Vec<f64> = self
            .path
            .values()
            .iter()
            .zip(&self.densities)
            .map(|(&x, mu)| {
                mu.expectation(|y| {
                    let (d, d0) = match gamma {
                        Some(g) => (g * m.b(theta, x, y) + m.c(theta, x, y), g * m.b(t0, x, y) + m.c(t0, x, y)),
                        None => (m.c(theta, x, y), m.c(t0, x, y)),
                    };
                    (d * d0 - 0.5 * d * d) / m.sigma_at(x, y).powi(2)
                })
            })
            .collect();
        LikelihoodValue::new(
            trapezoid(&integrand, self.path.step()),
            LikelihoodKind::limiting(self.regime),
            theta,
        )
    }
}

/// Limiting log-likelihood of the given regime along `ode_path`.
pub fn limiting_log_likelihood(
    ode_path: &Path,
    model: &ModelSpec,
    theta: f64,
    theta0: f64,
    regime: Regime,
    grid: &TorusGrid,
) -> Result<LikelihoodValue> {
    LimitingLikelihood::new(ode_path, model, theta0, regime, grid)?.value(theta)
}

/// `H` by quadrature of `int c_theta0 dPhi/dy dmu^1` along the path.
pub fn bias_term_h_generic(ode_path: &Path, model: &ModelSpec, theta: f64, theta0: f64, grid: &TorusGrid) -> Result<f64> {
    let mut integrand = Vec::with_capacity(ode_path.len());
    for &x in ode_path.values() {
        let mu = stationary_density(model, Regime::Regime1, theta0, x, grid)?;
        let phi = solve_poisson_phi_with(model, theta, theta0, x, &mu)?;
        let weighted: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&phi.dphi_dy)
            .map(|(&y, dphi)| model.c(theta0, x, y) * dphi)
            .collect();
        integrand.push(mu.integrate(&weighted));
    }
    let h = trapezoid(&integrand, ode_path.step());
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::NonFinite("bias term"))
    }
}

/// Closed form `(theta theta0 / 2D) (K - 1) int V'(x)^2 ds` for gradient
/// models, `K = lambda^2 / (Z Zhat)`. `None` without gradient structure.
pub fn bias_term_h_closed_form(
    ode_path: &Path,
    model: &ModelSpec,
    theta: f64,
    theta0: f64,
    grid: &TorusGrid,
) -> Result<Option<f64>> {
    let Some(g) = &model.gradient else {
        return Ok(None);
    };
    let q = g.q.clone();
    let k = partition_constants(&move |y| q(y), g.diffusion, grid)?.homogenization_factor();
    let dv2: Vec<f64> = ode_path.values().iter().map(|&x| (g.dv)(x).powi(2)).collect();
    let integral = trapezoid(&dv2, ode_path.step());
    Ok(Some(theta * theta0 / (2.0 * g.diffusion) * (k - 1.0) * integral))
}

/// Bias `H_{theta,theta0}`. Gradient models return the closed form after
/// checking it against the generic quadrature.
pub fn bias_term_h(ode_path: &Path, model: &ModelSpec, theta: f64, theta0: f64, grid: &TorusGrid) -> Result<f64> {
    let generic = bias_term_h_generic(ode_path, model, theta, theta0, grid)?;
    match bias_term_h_closed_form(ode_path, model, theta, theta0, grid)? {
        Some(closed) => {
            if (generic - closed).abs() > BIAS_CROSS_CHECK_TOL * closed.abs().max(1.0) {
                return Err(Error::BiasCrossCheck { generic, closed });
            }
            Ok(closed)
        }
        None => Ok(generic),
    }
}

/// `J^1`: `int int [<b,b0> - |b|^2/2 + <c,c0> - |c|^2/2]_alpha dmu^1 ds`.
pub fn j1(ode_path: &Path, model: &ModelSpec, theta: f64, theta0: f64, grid: &TorusGrid) -> Result<f64> {
    let mut integrand = Vec::with_capacity(ode_path.len());
    for &x in ode_path.values() {
        let mu = stationary_density(model, Regime::Regime1, theta0, x, grid)?;
        integrand.push(mu.expectation(|y| {
            let b = model.b(theta, x, y);
            let b0 = model.b(theta0, x, y);
            let c = model.c(theta, x, y);
            let c0 = model.c(theta0, x, y);
            (b * b0 - 0.5 * b * b + c * c0 - 0.5 * c * c) / model.sigma_at(x, y).powi(2)
        }));
    }
    Ok(trapezoid(&integrand, ode_path.step()))
}

/// Regime 1 limit of the pseudo-likelihood, `J^1 + H`.
pub fn limiting_pseudo_likelihood(
    ode_path: &Path,
    model: &ModelSpec,
    theta: f64,
    theta0: f64,
    grid: &TorusGrid,
) -> Result<LikelihoodValue> {
    model.theta_domain.check(theta)?;
    let value = j1(ode_path, model, theta, theta0, grid)? + bias_term_h(ode_path, model, theta, theta0, grid)?;
    LikelihoodValue::new(value, LikelihoodKind::LimitingPseudo, theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherReport {
    pub info: f64,
    /// `q(x_s, theta)` at each node of the ODE path.
    pub q_values: Vec<f64>,
}

/// `d c / d theta` by central differences.
pub fn dc_dtheta(model: &ModelSpec, theta: f64, x: f64, y: f64) -> f64 {
    let h = 1e-6 * theta.abs().max(1.0);
    (model.c(theta + h, x, y) - model.c(theta - h, x, y)) / (2.0 * h)
}

/// Fisher information `int q(x_s, theta) ds`, `q = int (dc/dtheta / sigma)^2 dmu`.
pub fn fisher_information(
    ode_path: &Path,
    model: &ModelSpec,
    theta: f64,
    regime: Regime,
    grid: &TorusGrid,
    floor: f64,
) -> Result<FisherReport> {
    if !model.fast_drift_vanishes() {
        return Err(Error::FastDriftPresent);
    }
    let mut q_values = Vec::with_capacity(ode_path.len());
    for &x in ode_path.values() {
        let mu = stationary_density(model, regime, theta, x, grid)?;
        q_values.push(mu.expectation(|y| (dc_dtheta(model, theta, x, y) / model.sigma_at(x, y)).powi(2)));
    }
    let info = trapezoid(&q_values, ode_path.step());
    if !info.is_finite() {
        return Err(Error::NonFinite("Fisher information"));
    }
    if info < floor {
        return Err(Error::DegenerateFisher { info, floor });
    }
    Ok(FisherReport { info, q_values })
}

/// `M_eps(theta, u) = (Z_{theta + sqrt(eps) u} - Z_theta) / eps` with `b = 0`.
pub fn normed_likelihood_ratio(path: &Path, model: &ModelSpec, scale: &ScaleParams, theta: f64, u: f64) -> Result<f64> {
    let shifted = theta + scale.epsilon.sqrt() * u;
    model.theta_domain.check(theta)?;
    model.theta_domain.check(shifted)?;
    let a = log_likelihood_slow(path, model, scale, shifted)?.value;
    let b = log_likelihood_slow(path, model, scale, theta)?.value;
    Ok((a - b) / scale.epsilon)
}
