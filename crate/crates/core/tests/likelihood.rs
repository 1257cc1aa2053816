use std::sync::Arc;

use msmle::dynamics::{simulate_euler, solve_limiting_ode, SimConfig};
use msmle::likelihood::*;
use msmle::mc::{mean, sample_sd};
use msmle::model::{
    builtin_model, ModelOptions, ModelSpec, Regime, ScaleParams, ThetaDomain, LANGEVIN_COS_SIN, PURE_OU,
};
use msmle::torus::{partition_constants, TorusGrid};
use msmle::{Error, Path};

fn ou() -> ModelSpec {
    builtin_model(PURE_OU, &ModelOptions::new()).unwrap()
}

fn langevin() -> ModelSpec {
    builtin_model(LANGEVIN_COS_SIN, &ModelOptions::new()).unwrap()
}

fn langevin_path(eps: f64, delta: f64, seed: u64) -> Path {
    let s = ScaleParams::new(eps, delta, Regime::Regime1).unwrap();
    let cfg = SimConfig::new(1.0, 0.2, 1e-5, seed).allow_coarse(true);
    simulate_euler(&langevin(), &s, 1.0, &cfg).unwrap()
}

fn ou_integral_sq(x0: f64, theta0: f64, t: f64) -> f64 {
    x0 * x0 * (1.0 - (-2.0 * theta0 * t).exp()) / (2.0 * theta0)
}

#[test]
fn empty_drift_gives_zero() {
    let m = ModelSpec::new(
        "null",
        1.0,
        ThetaDomain::new(-1.0, 1.0).unwrap(),
        Arc::new(|_, _, _| 0.0),
        Arc::new(|_, _, _| 0.0),
        Arc::new(|_, _| 1.0),
    )
    .unwrap();
    let s = ScaleParams::new(0.1, 0.01, Regime::Regime1).unwrap();
    let p = Path::new(0.1, vec![0.0, 1.0, -2.0, 3.5]).unwrap();
    assert_eq!(log_likelihood(&p, &m, &s, 0.5).unwrap().value, 0.0);
}

#[test]
fn exact_likelihood_matches_naive_accumulation() {
    let (eps, delta) = (0.1, 0.01);
    let s = ScaleParams::new(eps, delta, Regime::Regime1).unwrap();
    let p = langevin_path(eps, delta, 3);
    let theta = 0.8;
    // independent loop with the coefficients written out
    let (mut stoch, mut comp_s) = (0.0_f64, 0.0_f64);
    let (mut riem, mut comp_r) = (0.0_f64, 0.0_f64);
    let kahan = |sum: &mut f64, comp: &mut f64, v: f64| {
        let y = v - *comp;
        let t = *sum + y;
        *comp = (t - *sum) - y;
        *sum = t;
    };
    let v = p.values();
    for k in 0..v.len() - 1 {
        let x = v[k];
        let y = x / delta;
        let drift = (eps / delta) * (y.sin() - y.cos()) - theta * x;
        kahan(&mut stoch, &mut comp_s, drift * (v[k + 1] - x));
        kahan(&mut riem, &mut comp_r, drift * drift);
    }
    let naive = stoch - 0.5 * riem * p.step();
    let ours = log_likelihood(&p, &langevin(), &s, theta).unwrap().value;
    assert!((ours - naive).abs() <= 1e-9 * naive.abs(), "{ours} vs {naive}");
}

#[test]
fn pseudo_matches_expanded_quadratic_form() {
    let (eps, delta) = (0.1, 0.01);
    let s = ScaleParams::new(eps, delta, Regime::Regime1).unwrap();
    let p = langevin_path(eps, delta, 4);
    let m = langevin();
    let r = delta / eps;
    // theta-dependent part with sigma^2 = 2D = 1:
    // -(1 + r^2)(theta sum V' dx + theta^2/2 sum V'^2 step) - r theta sum Q'V' step
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (x, dx) in p.increments() {
        let y = x / delta;
        a += x * dx;
        b += (-y.sin() + y.cos()) * x * p.step();
        c += x * x * p.step();
    }
    let form = |t: f64| -(1.0 + r * r) * (t * a + 0.5 * t * t * c) - r * t * b;
    let base = pseudo_log_likelihood(&p, &m, &s, 0.0).unwrap().value;
    for t in [-1.0, 0.5, 2.0] {
        let diff = pseudo_log_likelihood(&p, &m, &s, t).unwrap().value - base;
        assert!((diff - form(t)).abs() <= 1e-9 * diff.abs().max(1.0), "{diff} vs {}", form(t));
    }
}

#[test]
fn equal_scales_give_plain_sum() {
    let s = ScaleParams::new(0.1, 0.1, Regime::Regime2 { gamma: 1.0 }).unwrap();
    let p = langevin_path(0.1, 0.1, 5);
    let m = langevin();
    let z = log_likelihood(&p, &m, &s, 1.1).unwrap().value;
    let z0 = log_likelihood_slow(&p, &m, &s, 1.1).unwrap().value;
    let ps = pseudo_log_likelihood(&p, &m, &s, 1.1).unwrap().value;
    assert!((ps - (z + z0)).abs() < 1e-12 * ps.abs().max(1.0));
}

#[test]
fn pure_ou_limit_has_closed_form() {
    let m = ou();
    let grid = TorusGrid::for_model(&m);
    let (theta0, x0) = (1.0, 1.0);
    let ode = solve_limiting_ode(&m, Regime::Regime3, theta0, x0, 1.0, 1e-3, &grid).unwrap();
    let integral = ou_integral_sq(x0, theta0, 1.0);
    for theta in [0.0, 0.5, 1.0, 2.5] {
        let v = limiting_log_likelihood(&ode, &m, theta, theta0, Regime::Regime3, &grid).unwrap();
        let exact = (theta * theta0 - 0.5 * theta * theta) * integral;
        assert!((v.value - exact).abs() < 1e-6, "{} vs {exact}", v.value);
        assert_eq!(v.kind, LikelihoodKind::LimitingRegime3);
    }
}

#[test]
fn regimes_one_and_three_coincide_on_shared_measure() {
    let m = ou();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime3, 1.0, 1.0, 1.0, 1e-2, &grid).unwrap();
    for theta in [-0.5, 0.7, 1.9] {
        let a = limiting_log_likelihood(&ode, &m, theta, 1.0, Regime::Regime1, &grid).unwrap().value;
        let b = limiting_log_likelihood(&ode, &m, theta, 1.0, Regime::Regime3, &grid).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn no_fast_drift_means_no_bias() {
    let m = ou();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime1, 1.0, 1.0, 1.0, 1e-2, &grid).unwrap();
    assert_eq!(bias_term_h_generic(&ode, &m, 0.7, 1.0, &grid).unwrap(), 0.0);
    assert_eq!(bias_term_h(&ode, &m, 0.7, 1.0, &grid).unwrap(), 0.0);
    let pseudo = limiting_pseudo_likelihood(&ode, &m, 0.7, 1.0, &grid).unwrap().value;
    let plain = limiting_log_likelihood(&ode, &m, 0.7, 1.0, Regime::Regime1, &grid).unwrap().value;
    assert!((pseudo - plain).abs() < 1e-12);
}

#[test]
fn langevin_bias_routes_agree() {
    let m = langevin();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime1, 1.0, 1.0, 1.0, 1e-3, &grid).unwrap();
    let generic = bias_term_h_generic(&ode, &m, 1.0, 1.0, &grid).unwrap();
    let k = partition_constants(&|y: f64| y.cos() + y.sin(), 0.5, &grid)
        .unwrap()
        .homogenization_factor();
    let sq: Vec<f64> = ode.values().iter().map(|x| x * x).collect();
    let closed = (k - 1.0) * msmle::numerics::trapezoid(&sq, ode.step());
    assert!((generic - closed).abs() < 1e-7, "{generic} vs {closed}");
    assert!(generic < 0.0);
}

#[test]
fn limiting_pseudo_peaks_at_scaled_parameter() {
    let m = langevin();
    let grid = TorusGrid::for_model(&m);
    let theta0 = 2.0;
    let k = partition_constants(&|y: f64| y.cos() + y.sin(), 0.5, &grid)
        .unwrap()
        .homogenization_factor();
    let ode = solve_limiting_ode(&m, Regime::Regime1, theta0, 1.0, 1.0, 0.05, &grid).unwrap();
    let thetas: Vec<f64> = (0..=40).map(|i| i as f64 * 0.01).collect();
    let values: Vec<f64> = thetas
        .iter()
        .map(|&t| limiting_pseudo_likelihood(&ode, &m, t, theta0, &grid).unwrap().value)
        .collect();
    let best = (0..thetas.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    assert!((thetas[best] - theta0 * k).abs() <= 0.005 + 1e-12, "{} vs {}", thetas[best], theta0 * k);
    assert!((thetas[best] - theta0).abs() > 1.0);
}

#[test]
fn bias_differences_carry_no_fast_only_terms() {
    // b is theta-free, so J1(theta) - J1(theta') equals the c-only difference
    let m = langevin();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime1, 1.0, 1.0, 1.0, 0.05, &grid).unwrap();
    let d = j1(&ode, &m, 1.5, 1.0, &grid).unwrap() - j1(&ode, &m, 0.5, 1.0, &grid).unwrap();
    let sq: Vec<f64> = ode.values().iter().map(|x| x * x).collect();
    let i = msmle::numerics::trapezoid(&sq, ode.step());
    let expected = ((1.5 - 0.5 * 1.5 * 1.5) - (0.5 - 0.5 * 0.25)) * i;
    assert!((d - expected).abs() < 1e-10, "{d} vs {expected}");
}

#[test]
fn regime1_limit_refuses_fast_drift() {
    let m = langevin();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime1, 1.0, 1.0, 0.1, 0.01, &grid).unwrap();
    assert!(matches!(
        limiting_log_likelihood(&ode, &m, 1.0, 1.0, Regime::Regime1, &grid),
        Err(Error::FastDriftPresent)
    ));
}

#[test]
fn ou_fisher_information_is_decay_integral() {
    let m = ou();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime3, 1.0, 1.0, 1.0, 5e-4, &grid).unwrap();
    let r = fisher_information(&ode, &m, 1.0, Regime::Regime3, &grid, DEFAULT_FISHER_FLOOR).unwrap();
    let exact = ou_integral_sq(1.0, 1.0, 1.0);
    assert!((r.info - exact).abs() < 1e-7, "{} vs {exact}", r.info);
    assert_eq!(r.q_values.len(), ode.len());
}

#[test]
fn theta_free_drift_has_degenerate_information() {
    let m = ModelSpec::new(
        "fixed",
        1.0,
        ThetaDomain::new(-1.0, 1.0).unwrap(),
        Arc::new(|_, _, _| 0.0),
        Arc::new(|_, x, _| -x),
        Arc::new(|_, _| 1.0),
    )
    .unwrap();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime3, 0.5, 1.0, 1.0, 1e-2, &grid).unwrap();
    assert!(matches!(
        fisher_information(&ode, &m, 0.5, Regime::Regime3, &grid, DEFAULT_FISHER_FLOOR),
        Err(Error::DegenerateFisher { .. })
    ));
}

#[test]
fn doubling_sigma_quarters_information() {
    let make = |sigma: f64| {
        ModelSpec::new(
            "ou-sigma",
            1.0,
            ThetaDomain::new(-5.0, 5.0).unwrap(),
            Arc::new(|_, _, _| 0.0),
            Arc::new(|t, x, _| -t * x),
            Arc::new(move |_, _| sigma),
        )
        .unwrap()
    };
    let (a, b) = (make(1.0), make(2.0));
    let grid = TorusGrid::for_model(&a);
    let ode = solve_limiting_ode(&a, Regime::Regime3, 1.0, 1.0, 1.0, 1e-2, &grid).unwrap();
    let ia = fisher_information(&ode, &a, 1.0, Regime::Regime3, &grid, 1e-12).unwrap().info;
    let ib = fisher_information(&ode, &b, 1.0, Regime::Regime3, &grid, 1e-12).unwrap().info;
    assert!((ia / ib - 4.0).abs() < 1e-9);
}

#[test]
fn normed_ratio_is_scaled_difference() {
    let m = ou();
    let s = ScaleParams::new(0.05, 1.0, Regime::Regime3).unwrap();
    let cfg = SimConfig::new(1.0, 1.0, 1e-3, 9);
    let p = simulate_euler(&m, &s, 1.0, &cfg).unwrap();
    let u = 0.7;
    let direct = (log_likelihood(&p, &m, &s, 1.0 + 0.05f64.sqrt() * u).unwrap().value
        - log_likelihood(&p, &m, &s, 1.0).unwrap().value)
        / 0.05;
    let m_eps = normed_likelihood_ratio(&p, &m, &s, 1.0, u).unwrap();
    assert!((m_eps - direct).abs() < 1e-12 * direct.abs().max(1.0));
    assert!(normed_likelihood_ratio(&p, &m, &s, 9.9, 5.0).is_err());
}

#[test]
fn normed_ratio_is_centered_at_minus_half_information() {
    let m = ou();
    let eps = 0.01;
    let s = ScaleParams::new(eps, 1.0, Regime::Regime3).unwrap();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime3, 1.0, 1.0, 1.0, 1e-3, &grid).unwrap();
    let info = fisher_information(&ode, &m, 1.0, Regime::Regime3, &grid, 1e-10).unwrap().info;
    let u = 1.0;
    let samples: Vec<f64> = (0..200)
        .map(|r| {
            let cfg = SimConfig::new(1.0, 1.0, 1e-3, 21).with_stream(r);
            let p = simulate_euler(&m, &s, 1.0, &cfg).unwrap();
            normed_likelihood_ratio(&p, &m, &s, 1.0, u).unwrap()
        })
        .collect();
    let target = -0.5 * u * u * info;
    let se = sample_sd(&samples) / (samples.len() as f64).sqrt();
    assert!((mean(&samples) - target).abs() < 3.0 * se, "{} vs {target} (se {se})", mean(&samples));
}

#[test]
fn likelihood_approaches_its_limit() {
    let m = ou();
    let grid = TorusGrid::for_model(&m);
    let ode = solve_limiting_ode(&m, Regime::Regime3, 1.0, 1.0, 1.0, 1e-3, &grid).unwrap();
    let lim = LimitingLikelihood::new(&ode, &m, 1.0, Regime::Regime3, &grid).unwrap();
    let thetas: Vec<f64> = (0..21).map(|i| i as f64 * 0.15).collect();
    let limits: Vec<f64> = thetas.iter().map(|&t| lim.value(t).unwrap().value).collect();
    let mut medians = Vec::new();
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let s = ScaleParams::new(eps, 1.0, Regime::Regime3).unwrap();
        // sigma = 1 here, so eps * Z^eps is the quantity that converges
        let gaps: Vec<f64> = (0..20)
            .map(|r| {
                let cfg = SimConfig::new(1.0, 1.0, 1e-3, 31).with_stream(r);
                let p = simulate_euler(&m, &s, 1.0, &cfg).unwrap();
                thetas
                    .iter()
                    .zip(&limits)
                    .map(|(&t, l)| (log_likelihood(&p, &m, &s, t).unwrap().value - l).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        medians.push(msmle::mc::quantile(&gaps, 0.5));
    }
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}
