use msmle::dynamics::solve_limiting_ode;
use msmle::estimate::maximize;
use msmle::io::{read_path_csv, write_path_csv};
use msmle::likelihood::{bias_term_h_generic, pseudo_log_likelihood};
use msmle::model::{builtin_model, ModelOptions, Regime, ScaleParams, ThetaDomain, LANGEVIN_COS_SIN};
use msmle::torus::{fd_stationary_density, partition_constants, TorusGrid};
use msmle::Path;
use proptest::prelude::*;

fn langevin_with(d: f64) -> msmle::ModelSpec {
    let mut opts = ModelOptions::new();
    opts.insert("D".into(), d);
    builtin_model(LANGEVIN_COS_SIN, &opts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_product_dominates_period_squared(
        a in -2.0..2.0_f64,
        b in -2.0..2.0_f64,
        k in 1u32..4,
        d in 0.2..3.0_f64,
    ) {
        let grid = TorusGrid::new(256, std::f64::consts::TAU).unwrap();
        let q = move |y: f64| a * (k as f64 * y).cos() + b * y.sin();
        let pc = partition_constants(&q, d, &grid).unwrap();
        prop_assert!(pc.z * pc.zhat >= pc.period * pc.period * (1.0 - 1e-12));
        let factor = pc.homogenization_factor();
        prop_assert!(factor > 0.0 && factor <= 1.0 + 1e-12);
    }

    #[test]
    fn stationary_density_is_positive_and_normalized(
        alpha in -2.0..2.0_f64,
        beta in -2.0..2.0_f64,
        gamma in -0.8..0.8_f64,
    ) {
        let grid = TorusGrid::new(128, std::f64::consts::TAU).unwrap();
        let drift = move |y: f64| alpha + beta * y.sin();
        let diff = move |y: f64| 1.0 + gamma * y.cos();
        let mu = fd_stationary_density(&drift, &diff, &grid).unwrap();
        prop_assert!(mu.values.iter().all(|v| *v > 0.0));
        prop_assert!((mu.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pseudo_likelihood_is_quadratic_in_theta(
        xs in prop::collection::vec(-3.0..3.0_f64, 3..60),
        t in -2.0..2.0_f64,
        h in 0.1..1.0_f64,
    ) {
        let p = Path::new(1e-2, xs).unwrap();
        let m = langevin_with(0.5);
        let s = ScaleParams::new(0.1, 0.01, Regime::Regime1).unwrap();
        let l = |th: f64| pseudo_log_likelihood(&p, &m, &s, th).unwrap().value;
        let second = |c: f64| l(c + h) - 2.0 * l(c) + l(c - h);
        let scale = l(t).abs() + l(t + h).abs() + l(0.0).abs() + 1.0;
        prop_assert!((second(t) - second(0.0)).abs() <= 1e-9 * scale);
        prop_assert!(second(t) <= 1e-12 * scale);
    }

    #[test]
    fn path_csv_round_trips_exactly(
        xs in prop::collection::vec(-1e6..1e6_f64, 3..100),
        step in 1e-6..1.0_f64,
    ) {
        let p = Path::new(step, xs).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&p, &mut buf).unwrap();
        let q = read_path_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(q.values(), p.values());
        prop_assert!((q.step() - step).abs() <= 1e-12 * step);
    }

    #[test]
    fn argmax_is_invariant_under_positive_affine_maps(
        center in -1.5..1.5_f64,
        lambda in 0.01..100.0_f64,
        shift in -100.0..100.0_f64,
    ) {
        let dom = ThetaDomain::new(-2.0, 2.0).unwrap();
        let f = move |t: f64| Ok(-(t - center).powi(2));
        let g = move |t: f64| Ok(lambda * f(t)? + shift);
        let a = maximize(&f, dom).unwrap();
        let b = maximize(&g, dom).unwrap();
        prop_assert!((a.theta - b.theta).abs() < 1e-6);
        prop_assert!((a.theta - center).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn langevin_bias_is_never_positive(d in 0.2..2.0_f64, theta in 0.1..3.0_f64, theta0 in 0.1..3.0_f64) {
        let m = langevin_with(d);
        let grid = TorusGrid::new(256, std::f64::consts::TAU).unwrap();
        let ode = solve_limiting_ode(&m, Regime::Regime1, theta0, 1.0, 1.0, 0.05, &grid).unwrap();
        let h = bias_term_h_generic(&ode, &m, theta, theta0, &grid).unwrap();
        prop_assert!(h <= 1e-12, "H = {}", h);
    }
}
