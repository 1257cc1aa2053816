//! Periodic-cell computations on `[0, lambda)`.
//!
//! Quadrature is the rectangle rule on a uniform periodic grid (spectrally
//! accurate for smooth periodic integrands). Generic operators
//! `L = a(y) d/dy + g(y) d^2/dy^2` are discretized with second-order central
//! differences; the stationary density solves `L_h^T m = 0` and Poisson
//! problems solve `L_h u = f` after projecting `f` onto the range of `L_h`.
//! Both singular systems are closed by pinning node 0 (the dropped row is
//! implied by the others), which leaves a plain tridiagonal solve. Each FD
//! solve runs on the grid and on its refinement and the two are combined by
//! Richardson extrapolation at the coarse nodes.

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Regime};
use crate::numerics::{kahan_sum, solve_tridiagonal, spectral_antiderivative};

pub const DEFAULT_GRID_POINTS: usize = 512;
/// Tolerance on Fredholm (centering) integrals.
pub const CENTERING_TOL: f64 = 1e-8;
const EXP_GUARD: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    n: usize,
    period: f64,
}

impl TorusGrid {
    pub fn new(n: usize, period: f64) -> Result<Self> {
        if n < 16 || !n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "torus grid needs an even number of points >= 16, got {n}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
        }
        Ok(Self { n, period })
    }

    /// Default-resolution grid for a model's period.
    pub fn for_model(model: &ModelSpec) -> Self {
        Self {
            n: DEFAULT_GRID_POINTS,
            period: model.period,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Node spacing, also the quadrature weight.
    pub fn spacing(&self) -> f64 {
        self.period / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n).map(|j| f(self.node(j))).collect()
    }

    pub fn refined(&self) -> Self {
        Self {
            n: 2 * self.n,
            period: self.period,
        }
    }

    /// Rectangle-rule integral over one period.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        kahan_sum(values.iter().copied()) * self.spacing()
    }
}

/// Density of an invariant measure on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusDensity {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl TorusDensity {
    fn normalized(grid: TorusGrid, mut values: Vec<f64>) -> Result<Self> {
        let mass = grid.integrate(&values);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::StationarySolveFailed(format!("density mass {mass}")));
        }
        for v in &mut values {
            *v /= mass;
        }
        if let Some(j) = values.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::StationarySolveFailed(format!(
                "density not positive at node {j} ({})",
                values[j]
            )));
        }
        Ok(Self { grid, values })
    }

    /// `sum_j values_j m_j h`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.values.len());
        let h = self.grid.spacing();
        kahan_sum(values.iter().zip(&self.values).map(|(f, m)| f * m)) * h
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.grid.spacing();
        kahan_sum(
            self.values
                .iter()
                .enumerate()
                .map(|(j, m)| f(self.grid.node(j)) * m),
        ) * h
    }

    pub fn total_mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub grid: TorusGrid,
    pub chi: Vec<f64>,
    pub dchi_dy: Vec<f64>,
}

impl CellSolution {
    /// `int (1 + dchi/dy) dmu`, the homogenization factor of the drift.
    pub fn homogenized_factor(&self, density: &TorusDensity) -> f64 {
        let shifted: Vec<f64> = self.dchi_dy.iter().map(|d| 1.0 + d).collect();
        density.integrate(&shifted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub grid: TorusGrid,
    pub phi: Vec<f64>,
    pub dphi_dy: Vec<f64>,
    /// `max |L_h phi_h - f_h|` of the fine-level discrete solve.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConstants {
    /// `int exp(-Q/D) dy`
    pub z: f64,
    /// `int exp(Q/D) dy`
    pub zhat: f64,
    pub period: f64,
}

impl PartitionConstants {
    /// `lambda^2 / (Z Zhat)`, at most one by Cauchy-Schwarz.
    pub fn homogenization_factor(&self) -> f64 {
        self.period * self.period / (self.z * self.zhat)
    }
}

fn scaled_potential(q: &dyn Fn(f64) -> f64, d: f64, grid: &TorusGrid) -> Result<Vec<f64>> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature D must be positive, got {d}")));
    }
    let scaled = grid.sample(|y| q(y) / d);
    let worst = scaled.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !worst.is_finite() || worst > EXP_GUARD {
        return Err(Error::PotentialOverflow(worst));
    }
    Ok(scaled)
}

/// Gibbs density `exp(-Q/D) / Z`.
pub fn gibbs_density(q: &dyn Fn(f64) -> f64, d: f64, grid: &TorusGrid) -> Result<TorusDensity> {
    let scaled = scaled_potential(q, d, grid)?;
    TorusDensity::normalized(*grid, scaled.iter().map(|s| (-s).exp()).collect())
}

pub fn partition_constants(q: &dyn Fn(f64) -> f64, d: f64, grid: &TorusGrid) -> Result<PartitionConstants> {
    let scaled = scaled_potential(q, d, grid)?;
    let z = grid.integrate(&scaled.iter().map(|s| (-s).exp()).collect::<Vec<_>>());
    let zhat = grid.integrate(&scaled.iter().map(|s| s.exp()).collect::<Vec<_>>());
    Ok(PartitionConstants {
        z,
        zhat,
        period: grid.period(),
    })
}

/// Rows of `L_h = a D_1 + g D_2` on a periodic grid.
struct FdOperator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl FdOperator {
    fn new(drift: &[f64], diffusion: &[f64], h: f64) -> Self {
        let n = drift.len();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for j in 0..n {
            let (a, g) = (drift[j], diffusion[j]);
            lower[j] = g / (h * h) - a / (2.0 * h);
            diag[j] = -2.0 * g / (h * h);
            upper[j] = g / (h * h) + a / (2.0 * h);
        }
        Self { lower, diag, upper }
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                self.lower[j] * u[(j + n - 1) % n] + self.diag[j] * u[j] + self.upper[j] * u[(j + 1) % n]
            })
            .collect()
    }

    /// Null vector of `L_h^T` with node 0 pinned to one (not normalized).
    fn adjoint_null(&self) -> Option<Vec<f64>> {
        let n = self.len();
        let m = n - 1;
        let mut sub = vec![0.0; m];
        let mut dia = vec![0.0; m];
        let mut sup = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            let j = i + 1;
            sub[i] = self.upper[j - 1];
            dia[i] = self.diag[j];
            sup[i] = self.lower[(j + 1) % n];
        }
        rhs[0] -= self.upper[0];
        rhs[m - 1] -= self.lower[0];
        let rest = solve_tridiagonal(&sub, &dia, &sup, &rhs)?;
        let mut out = Vec::with_capacity(n);
        out.push(1.0);
        out.extend(rest);
        Some(out)
    }

    /// Solves `L_h u = f` with `u_0 = 0`; `f` must be in the range.
    fn solve_pinned(&self, f: &[f64]) -> Option<Vec<f64>> {
        let n = self.len();
        let m = n - 1;
        let sub: Vec<f64> = (1..n).map(|j| self.lower[j]).collect();
        let dia: Vec<f64> = (1..n).map(|j| self.diag[j]).collect();
        let sup: Vec<f64> = (1..n).map(|j| self.upper[j]).collect();
        let rest = solve_tridiagonal(&sub, &dia, &sup, &f[1..])?;
        debug_assert_eq!(rest.len(), m);
        let mut out = Vec::with_capacity(n);
        out.push(0.0);
        out.extend(rest);
        Some(out)
    }
}

fn central_difference(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|j| (u[(j + 1) % n] - u[(j + n - 1) % n]) / (2.0 * h))
        .collect()
}

fn richardson(coarse: &[f64], fine: &[f64]) -> Vec<f64> {
    coarse
        .iter()
        .enumerate()
        .map(|(j, c)| (4.0 * fine[2 * j] - c) / 3.0)
        .collect()
}

/// Unnormalized discrete invariant density of `L_h` on one grid level.
fn fd_level_density(drift: &dyn Fn(f64) -> f64, diffusion: &dyn Fn(f64) -> f64, grid: &TorusGrid) -> Result<Vec<f64>> {
    let op = FdOperator::new(&grid.sample(drift), &grid.sample(diffusion), grid.spacing());
    let m = op
        .adjoint_null()
        .ok_or_else(|| Error::StationarySolveFailed(format!("singular adjoint system at n = {}", grid.len())))?;
    let mass = grid.integrate(&m);
    Ok(m.into_iter().map(|v| v / mass).collect())
}

/// Stationary density of `a d/dy + g d^2/dy^2` by the second-order scheme
/// on a single grid, without extrapolation.
pub fn fd_stationary_density_order2(
    drift: &dyn Fn(f64) -> f64,
    diffusion: &dyn Fn(f64) -> f64,
    grid: &TorusGrid,
) -> Result<TorusDensity> {
    let m = fd_level_density(drift, diffusion, grid)?;
    TorusDensity::normalized(*grid, m)
}

/// Stationary density of `a d/dy + g d^2/dy^2`, extrapolated from the grid
/// and its refinement.
pub fn fd_stationary_density(
    drift: &dyn Fn(f64) -> f64,
    diffusion: &dyn Fn(f64) -> f64,
    grid: &TorusGrid,
) -> Result<TorusDensity> {
    let coarse = fd_level_density(drift, diffusion, grid)?;
    let fine = fd_level_density(drift, diffusion, &grid.refined())?;
    TorusDensity::normalized(*grid, richardson(&coarse, &fine))
}

/// Time-average density of `z' = c(z)`: proportional to `1/|c|`.
pub fn reciprocal_speed_density(speed: &dyn Fn(f64) -> f64, grid: &TorusGrid) -> Result<TorusDensity> {
    let c = grid.sample(speed);
    let scale = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tiny = 1e-12 * scale.max(1e-300);
    for (j, &v) in c.iter().enumerate() {
        if !v.is_finite() || v.abs() <= tiny || v.signum() != c[0].signum() {
            return Err(Error::DegenerateFastFlow(grid.node(j)));
        }
    }
    TorusDensity::normalized(*grid, c.iter().map(|v| 1.0 / v.abs()).collect())
}

/// Invariant density of the fast operator of the given regime at `(theta, x)`.
///
/// Regime 1 with gradient structure returns the Gibbs density; otherwise
/// Regimes 1 and 2 are solved by finite differences. Regime 3 uses the
/// reciprocal-speed formula, or the uniform density when `c` does not
/// depend on `y`.
pub fn stationary_density(
    model: &ModelSpec,
    regime: Regime,
    theta: f64,
    x: f64,
    grid: &TorusGrid,
) -> Result<TorusDensity> {
    match regime {
        Regime::Regime1 => {
            if let Some(g) = &model.gradient {
                let q = g.q.clone();
                return gibbs_density(&move |y| q(y), g.diffusion, grid);
            }
            fd_stationary_density(
                &|y| model.b(theta, x, y),
                &|y| 0.5 * model.sigma_at(x, y).powi(2),
                grid,
            )
        }
        Regime::Regime2 { gamma } => fd_stationary_density(
            &|y| gamma * model.b(theta, x, y) + model.c(theta, x, y),
            &|y| 0.5 * gamma * model.sigma_at(x, y).powi(2),
            grid,
        ),
        Regime::Regime3 => {
            let c = grid.sample(|y| model.c(theta, x, y));
            let scale = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if c.iter().all(|v| (v - c[0]).abs() <= 1e-14 * scale) {
                // y-free slow drift: every measure averages it the same way
                return TorusDensity::normalized(*grid, vec![1.0; grid.len()]);
            }
            reciprocal_speed_density(&|y| model.c(theta, x, y), grid)
        }
    }
}

/// One-level FD Poisson solve, returning `(u, du/dy, residual)`.
fn fd_level_poisson(
    drift: &dyn Fn(f64) -> f64,
    diffusion: &dyn Fn(f64) -> f64,
    rhs: &dyn Fn(f64) -> f64,
    grid: &TorusGrid,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let h = grid.spacing();
    let op = FdOperator::new(&grid.sample(drift), &grid.sample(diffusion), h);
    let pi = op
        .adjoint_null()
        .ok_or_else(|| Error::PoissonSolveFailed(format!("singular adjoint system at n = {}", grid.len())))?;
    let mut f = grid.sample(rhs);
    let shift = kahan_sum(pi.iter().zip(&f).map(|(p, v)| p * v)) / kahan_sum(pi.iter().copied());
    for v in &mut f {
        *v -= shift;
    }
    let u = op
        .solve_pinned(&f)
        .ok_or_else(|| Error::PoissonSolveFailed(format!("singular system at n = {}", grid.len())))?;
    let residual = op
        .apply(&u)
        .iter()
        .zip(&f)
        .fold(0.0_f64, |acc, (lu, fv)| acc.max((lu - fv).abs()));
    let du = central_difference(&u, h);
    Ok((u, du, residual))
}

/// Solves `(a d/dy + g d^2/dy^2) u = f` on the torus with `int u dmu = 0`,
/// using the second-order scheme only (no extrapolation).
pub fn fd_solve_poisson_order2(
    drift: &dyn Fn(f64) -> f64,
    diffusion: &dyn Fn(f64) -> f64,
    rhs: &dyn Fn(f64) -> f64,
    density: &TorusDensity,
) -> Result<PoissonSolution> {
    let grid = density.grid;
    let (mut u, du, residual) = fd_level_poisson(drift, diffusion, rhs, &grid)?;
    center(&mut u, density);
    Ok(PoissonSolution {
        grid,
        phi: u,
        dphi_dy: du,
        residual,
    })
}

/// Solves `(a d/dy + g d^2/dy^2) u = f` on the torus with `int u dmu = 0`,
/// Richardson-extrapolated from the density's grid and its refinement.
pub fn fd_solve_poisson(
    drift: &dyn Fn(f64) -> f64,
    diffusion: &dyn Fn(f64) -> f64,
    rhs: &dyn Fn(f64) -> f64,
    density: &TorusDensity,
) -> Result<PoissonSolution> {
    let grid = density.grid;
    let (u_c, du_c, _) = fd_level_poisson(drift, diffusion, rhs, &grid)?;
    let (u_f, du_f, residual) = fd_level_poisson(drift, diffusion, rhs, &grid.refined())?;
    let mut u = richardson(&u_c, &u_f);
    center(&mut u, density);
    Ok(PoissonSolution {
        grid,
        phi: u,
        dphi_dy: richardson(&du_c, &du_f),
        residual,
    })
}

fn center(u: &mut [f64], density: &TorusDensity) {
    let mean = density.integrate(u);
    for v in u.iter_mut() {
        *v -= mean;
    }
}

fn check_fast_centering(model: &ModelSpec, theta: f64, x: f64, density: &TorusDensity) -> Result<()> {
    let mean_b = density.expectation(|y| model.b(theta, x, y));
    if mean_b.abs() > CENTERING_TOL {
        return Err(Error::CenteringViolated(mean_b));
    }
    Ok(())
}

/// Cell problem `L^1 chi = -b`, `int chi dmu^1 = 0`.
///
/// Gradient models use the closed form `chi' = -1 + lambda exp(Q/D) / Zhat`
/// integrated spectrally; everything else goes through
/// [`solve_cell_problem_fd`].
pub fn solve_cell_problem(model: &ModelSpec, theta: f64, x: f64, grid: &TorusGrid) -> Result<CellSolution> {
    let Some(g) = &model.gradient else {
        return solve_cell_problem_fd(model, theta, x, grid);
    };
    let q = g.q.clone();
    let density = gibbs_density(&move |y| q(y), g.diffusion, grid)?;
    check_fast_centering(model, theta, x, &density)?;
    let q = g.q.clone();
    let pc = partition_constants(&move |y| q(y), g.diffusion, grid)?;
    let lambda = grid.period();
    let dchi_dy = grid.sample(|y| -1.0 + lambda * ((g.q)(y) / g.diffusion).exp() / pc.zhat);
    let mut chi = spectral_antiderivative(&dchi_dy, lambda);
    center(&mut chi, &density);
    Ok(CellSolution {
        grid: *grid,
        chi,
        dchi_dy,
    })
}

/// Cell problem by finite differences for any model.
pub fn solve_cell_problem_fd(model: &ModelSpec, theta: f64, x: f64, grid: &TorusGrid) -> Result<CellSolution> {
    let density = stationary_density(model, Regime::Regime1, theta, x, grid)?;
    check_fast_centering(model, theta, x, &density)?;
    let sol = fd_solve_poisson(
        &|y| model.b(theta, x, y),
        &|y| 0.5 * model.sigma_at(x, y).powi(2),
        &|y| -model.b(theta, x, y),
        &density,
    )?;
    Ok(CellSolution {
        grid: *grid,
        chi: sol.phi,
        dchi_dy: sol.dphi_dy,
    })
}

/// Second-order cell solve on a single grid; used for convergence studies.
pub fn solve_cell_problem_fd_order2(model: &ModelSpec, theta: f64, x: f64, grid: &TorusGrid) -> Result<CellSolution> {
    let density = stationary_density(model, Regime::Regime1, theta, x, grid)?;
    check_fast_centering(model, theta, x, &density)?;
    let sol = fd_solve_poisson_order2(
        &|y| model.b(theta, x, y),
        &|y| 0.5 * model.sigma_at(x, y).powi(2),
        &|y| -model.b(theta, x, y),
        &density,
    )?;
    Ok(CellSolution {
        grid: *grid,
        chi: sol.phi,
        dchi_dy: sol.dphi_dy,
    })
}

/// `<b_theta0, c_theta>_alpha = b c / sigma^2` at `(x, y)`.
fn cross_term(model: &ModelSpec, theta: f64, theta0: f64, x: f64, y: f64) -> f64 {
    model.b(theta0, x, y) * model.c(theta, x, y) / model.sigma_at(x, y).powi(2)
}

/// Poisson problem `L^1_{theta0} Phi = -<b_theta0, c_theta>_alpha` with
/// `int Phi dmu^1_{theta0} = 0`.
pub fn solve_poisson_phi(
    model: &ModelSpec,
    theta: f64,
    theta0: f64,
    x: f64,
    grid: &TorusGrid,
) -> Result<PoissonSolution> {
    let density = stationary_density(model, Regime::Regime1, theta0, x, grid)?;
    solve_poisson_phi_with(model, theta, theta0, x, &density)
}

pub(crate) fn solve_poisson_phi_with(
    model: &ModelSpec,
    theta: f64,
    theta0: f64,
    x: f64,
    density: &TorusDensity,
) -> Result<PoissonSolution> {
    let grid = density.grid;
    let source = grid.sample(|y| cross_term(model, theta, theta0, x, y));
    let mean = density.integrate(&source);
    if mean.abs() > CENTERING_TOL {
        return Err(Error::CrossCenteringViolated(mean));
    }
    if source.iter().all(|v| *v == 0.0) {
        return Ok(PoissonSolution {
            grid,
            phi: vec![0.0; grid.len()],
            dphi_dy: vec![0.0; grid.len()],
            residual: 0.0,
        });
    }
    fd_solve_poisson(
        &|y| model.b(theta0, x, y),
        &|y| 0.5 * model.sigma_at(x, y).powi(2),
        &|y| -cross_term(model, theta, theta0, x, y),
        density,
    )
}
