//! Noiseless oracles: signals whose states and disturbance are known in closed form.

use std::sync::Arc;

use modfun_core::estimator::QuadratureRule;
use modfun_core::signals::{make_grid, relative_l2_error};
use modfun_core::systems::{academic3, simulate, DisturbanceLaw, Nonlinearity};
use modfun_core::*;

fn fam(size: u32, truncation: usize, exponent: u32) -> FamilyConfig {
    FamilyConfig {
        size,
        truncation,
        exponent,
    }
}

fn config(
    states: Vec<FamilyConfig>,
    disturbance: Option<FamilyConfig>,
    scheme: Scheme,
) -> EstimatorConfig {
    EstimatorConfig {
        states,
        disturbance,
        scheme,
        formulation: Formulation::Recursive,
        basis: BasisKind::MonomialScaled,
        quadrature: QuadratureRule::Trapezoid,
    }
}

fn poly(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * t + v)
}

fn deriv(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, v)| k as f64 * v)
        .collect()
}

fn signal(g: TimeGrid, f: impl Fn(f64) -> f64) -> SampledSignal {
    SampledSignal::from_fn(g, f).unwrap()
}

/// Relative L2 error (fraction, not percent) of `est` against `truth` over the estimate's grid.
fn rel(truth: impl Fn(f64) -> f64, est: &SampledSignal) -> f64 {
    let g = *est.grid();
    let x = signal(g, truth);
    relative_l2_error(&x, est, g.t0(), g.tf()).unwrap() / 100.0
}

fn coeff_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn zero_law() -> DisturbanceLaw {
    Arc::new(|_, _| 0.0)
}

#[test]
fn chain3_polynomial_recovered_offline() {
    let c = [0.3, -1.0, 0.5, 0.8, -0.2, 0.05];
    let (c2, c3, cd) = (deriv(&c), deriv(&deriv(&c)), deriv(&deriv(&deriv(&c))));
    let g = make_grid(0.0, 2.0, 2e-3).unwrap();
    let y = signal(g, |t| poly(&c, t));
    let u = SampledSignal::zeros(g);
    let sys = TriangularSystem::chain(3, zero_law());
    let cfg = config(
        vec![fam(6, 5, 2), fam(5, 4, 2)],
        Some(fam(4, 3, 2)),
        Scheme::Offline,
    );
    let est = Estimator::new(&sys, &cfg, &g).unwrap().run(&y, &u).unwrap();
    assert!(rel(|t| poly(&c2, t), &est.states[0].signal) < 1e-6);
    assert!(rel(|t| poly(&c3, t), &est.states[1].signal) < 1e-6);
    assert!(rel(|t| poly(&cd, t), &est.disturbance.unwrap().signal) < 1e-6);
}

#[test]
fn input_driven_polynomial_recovered() {
    // x1 = 1 + t^3, x2 = 2 t^2 + t, u = t^2 - t, f1 = u, f2 = -x1 u.
    let f1: Nonlinearity = Arc::new(|_, u| u);
    let f2: Nonlinearity = Arc::new(|x, u| -x[0] * u);
    let sys = TriangularSystem::new("driven", vec![f1, f2], zero_law(), vec![1.0, 0.0]).unwrap();
    let x1 = |t: f64| 1.0 + t.powi(3);
    let x2 = |t: f64| 2.0 * t * t + t;
    let uf = |t: f64| t * t - t;
    let d = |t: f64| 4.0 * t + 1.0 + x1(t) * uf(t);
    let g = make_grid(0.0, 1.5, 1.5e-3).unwrap();
    let (y, u) = (signal(g, x1), signal(g, uf));
    let cfg = config(vec![fam(4, 3, 2)], Some(fam(7, 6, 2)), Scheme::Offline);
    let est = Estimator::new(&sys, &cfg, &g).unwrap().run(&y, &u).unwrap();
    assert!(rel(x2, &est.states[0].signal) < 1e-6);
    assert!(rel(d, &est.disturbance.unwrap().signal) < 1e-6);
}

#[test]
fn direct_matches_recursive_on_polynomial_chain() {
    let c = [0.1, 0.4, -0.6, 0.3, 0.1, -0.02];
    let g = make_grid(0.0, 2.0, 2e-3).unwrap();
    let y = signal(g, |t| poly(&c, t));
    let u = SampledSignal::zeros(g);
    let sys = TriangularSystem::chain(3, zero_law());
    let mut cfg = config(
        vec![fam(6, 5, 3), fam(5, 4, 3)],
        Some(fam(4, 3, 3)),
        Scheme::Offline,
    );
    cfg.quadrature = QuadratureRule::Gregory;
    let rec = Estimator::new(&sys, &cfg, &g).unwrap().run(&y, &u).unwrap();
    cfg.formulation = Formulation::Direct;
    let dir = Estimator::new(&sys, &cfg, &g).unwrap().run(&y, &u).unwrap();
    for (a, b) in dir.states.iter().zip(&rec.states) {
        assert!(
            coeff_rel(&a.windows[0].coeffs, &b.windows[0].coeffs) < 1e-6,
            "{}",
            a.target
        );
    }
    let (a, b) = (dir.disturbance.unwrap(), rec.disturbance.unwrap());
    assert!(coeff_rel(&a.windows[0].coeffs, &b.windows[0].coeffs) < 1e-6);
}

#[test]
fn pure_chain_cubic() {
    let g = make_grid(0.0, 1.0, 1e-3).unwrap();
    let y = signal(g, |t| t.powi(3));
    let u = SampledSignal::zeros(g);
    let sys = TriangularSystem::chain(3, zero_law());
    let cfg = config(
        vec![fam(4, 3, 2), fam(3, 2, 2)],
        Some(fam(2, 1, 2)),
        Scheme::Offline,
    );
    let est = Estimator::new(&sys, &cfg, &g).unwrap().run(&y, &u).unwrap();
    assert!(rel(|t| 3.0 * t * t, &est.states[0].signal) < 1e-6);
    assert!(rel(|t| 6.0 * t, &est.states[1].signal) < 1e-6);
    let d = est.disturbance.unwrap();
    assert!((d.windows[0].coeffs[0] - 6.0).abs() < 1e-6);
}

#[test]
fn constant_disturbance_single_term() {
    let g = make_grid(0.0, 2.0, 1e-3).unwrap();
    let y = signal(g, |t| 0.25 * t * t);
    let sys = TriangularSystem::chain(2, zero_law());
    let cfg = config(vec![fam(3, 2, 2)], Some(fam(1, 1, 2)), Scheme::Offline);
    let est = Estimator::new(&sys, &cfg, &g)
        .unwrap()
        .run(&y, &SampledSignal::zeros(g))
        .unwrap();
    let d = est.disturbance.unwrap();
    assert!((d.windows[0].coeffs[0] - 0.5).abs() < 1e-7);
}

#[test]
fn quadratic_disturbance() {
    let g = make_grid(0.0, 2.0, 1e-3).unwrap();
    let y = signal(g, |t| t.powi(4) / 12.0);
    let sys = TriangularSystem::chain(2, zero_law());
    let cfg = config(vec![fam(5, 4, 2)], Some(fam(4, 3, 2)), Scheme::Offline);
    let est = Estimator::new(&sys, &cfg, &g)
        .unwrap()
        .run(&y, &SampledSignal::zeros(g))
        .unwrap();
    assert!(rel(|t| t.powi(3) / 3.0, &est.states[0].signal) < 1e-6);
    let d = est.disturbance.unwrap();
    assert!(rel(|t| t * t, &d.signal) < 1e-6);
    let raw = d.raw_coefficients(0);
    assert!(raw[0].abs() < 1e-6 && raw[1].abs() < 1e-6 && (raw[2] - 1.0).abs() < 1e-6);
}

#[test]
fn online_recovers_polynomial_in_every_window() {
    let c = [1.0, -0.5, 0.25, 0.1, -0.05];
    let c2 = deriv(&c);
    let cd = deriv(&c2);
    let g = make_grid(0.0, 3.0, 1e-3).unwrap();
    let y = signal(g, |t| poly(&c, t));
    let sys = TriangularSystem::chain(2, zero_law());
    let cfg = config(
        vec![fam(5, 4, 2)],
        Some(fam(4, 3, 2)),
        Scheme::Online {
            window: 1.0,
            stride: 25,
            evaluate_at: 0.5,
        },
    );
    let est = Estimator::new(&sys, &cfg, &g)
        .unwrap()
        .run(&y, &SampledSignal::zeros(g))
        .unwrap();
    assert!(rel(|t| poly(&c2, t), &est.states[0].signal) < 1e-6);
    assert!(rel(|t| poly(&cd, t), &est.disturbance.unwrap().signal) < 1e-6);
}

#[test]
fn online_full_span_equals_offline() {
    let sys = academic3();
    let g = make_grid(0.0, 2.0, 1e-3).unwrap();
    let u = SampledSignal::zeros(g);
    let tr = simulate(&sys, &u, &g).unwrap();
    let states = vec![fam(6, 6, 2), fam(5, 5, 2)];
    let off = config(states.clone(), Some(fam(4, 4, 3)), Scheme::Offline);
    let on = config(
        states,
        Some(fam(4, 4, 3)),
        Scheme::Online {
            window: 2.0,
            stride: 1,
            evaluate_at: 1.0,
        },
    );
    let a = Estimator::new(&sys, &off, &g)
        .unwrap()
        .run(tr.output(), &u)
        .unwrap();
    let est = Estimator::new(&sys, &on, &g).unwrap();
    assert_eq!(est.window_count(), 1);
    let b = est.run(tr.output(), &u).unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x.windows[0].coeffs, y.windows[0].coeffs);
    }
    assert_eq!(
        a.disturbance.unwrap().windows[0].coeffs,
        b.disturbance.unwrap().windows[0].coeffs
    );
}

#[test]
fn online_tracks_constant_velocity() {
    let g = make_grid(0.0, 4.0, 1e-3).unwrap();
    let y = signal(g, |t| 0.7 - 1.3 * t);
    let sys = TriangularSystem::chain(2, zero_law());
    let cfg = config(vec![fam(2, 1, 2)], Some(fam(2, 1, 2)), Scheme::online(0.5));
    let est = Estimator::new(&sys, &cfg, &g)
        .unwrap()
        .run(&y, &SampledSignal::zeros(g))
        .unwrap();
    assert!(est.states[0]
        .signal
        .values()
        .iter()
        .all(|v| (v + 1.3).abs() < 1e-8));
    assert!(est
        .disturbance
        .unwrap()
        .signal
        .values()
        .iter()
        .all(|v| v.abs() < 1e-6));
}

#[test]
fn raw_and_scaled_bases_agree() {
    let sys = academic3();
    let g = make_grid(0.0, 2.0, 1e-3).unwrap();
    let u = SampledSignal::zeros(g);
    let tr = simulate(&sys, &u, &g).unwrap();
    let mut cfg = config(
        vec![fam(6, 6, 2), fam(5, 5, 2)],
        Some(fam(4, 4, 3)),
        Scheme::Offline,
    );
    let scaled = Estimator::new(&sys, &cfg, &g)
        .unwrap()
        .run(tr.output(), &u)
        .unwrap();
    cfg.basis = BasisKind::MonomialRaw;
    let raw = Estimator::new(&sys, &cfg, &g)
        .unwrap()
        .run(tr.output(), &u)
        .unwrap();
    for (a, b) in scaled.states.iter().zip(&raw.states) {
        assert!(coeff_rel(&a.raw_coefficients(0), &b.raw_coefficients(0)) < 1e-8);
        let ga = *a.signal.grid();
        let e = relative_l2_error(&a.signal, &b.signal, ga.t0(), ga.tf()).unwrap();
        assert!(e < 1e-6, "{}: {e}", a.target);
    }
}

#[test]
fn estimates_ignore_true_initial_state() {
    let g = make_grid(0.0, 2.0, 1e-3).unwrap();
    let u = SampledSignal::zeros(g);
    let tr = simulate(&academic3(), &u, &g).unwrap();
    let cfg = config(
        vec![fam(6, 6, 2), fam(5, 5, 2)],
        Some(fam(4, 4, 3)),
        Scheme::online(1.0),
    );
    let a = Estimator::new(&academic3(), &cfg, &g)
        .unwrap()
        .run(tr.output(), &u)
        .unwrap();
    let other = academic3().with_x0(vec![-3.0, 7.0, 0.1]).unwrap();
    let b = Estimator::new(&other, &cfg, &g)
        .unwrap()
        .run(tr.output(), &u)
        .unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x.signal.values(), y.signal.values());
    }
}

#[test]
fn online_window_uses_only_its_own_samples() {
    let g = make_grid(0.0, 3.0, 1e-3).unwrap();
    let u = SampledSignal::zeros(g);
    let sys = academic3();
    let tr = simulate(&sys, &u, &g).unwrap();
    let cfg = config(
        vec![fam(5, 5, 2), fam(4, 4, 3)],
        Some(fam(2, 2, 2)),
        Scheme::online(1.0),
    );
    let full = Estimator::new(&sys, &cfg, &g)
        .unwrap()
        .run(tr.output(), &u)
        .unwrap();
    let w = 1234;
    let sub = TimeGrid::from_count(g.time(w), g.dt(), 1001).unwrap();
    let y_sub = tr.output().restrict(&sub).unwrap();
    let local = Estimator::new(&sys, &cfg, &sub)
        .unwrap()
        .run(&y_sub, &SampledSignal::zeros(sub))
        .unwrap();
    for (a, b) in full.states.iter().zip(&local.states) {
        assert_eq!(a.windows[w].start, w);
        let diff = coeff_rel(&a.windows[w].coeffs, &b.windows[0].coeffs);
        assert!(diff < 1e-12, "{diff}");
    }
}
