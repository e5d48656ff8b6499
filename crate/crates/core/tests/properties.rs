use std::f64::consts::TAU;

use proptest::prelude::*;

use magflow::critical::{taimanov_value, TaimanovFilm};
use magflow::descent::{flow_step, FlowConfig, StepPolicy};
use magflow::paths::action;
use magflow::presets::{preset, presets, psi_cutoff, PRESET_NAMES};
use magflow::surface::{Mat2, Rect, Vec2};
use magflow::{ChartPoint, DiscretePath, HomotopyClass, LagrangianModel, SurfaceModel};

fn surfaces() -> Vec<SurfaceModel> {
    vec![
        SurfaceModel::flat_torus(1.0, 2.0).unwrap(),
        SurfaceModel::hyperbolic(Rect { x_min: -5.0, x_max: 5.0, y_min: 0.05, y_max: 20.0 }).unwrap(),
        SurfaceModel::sphere(1.5).unwrap(),
    ]
}

fn point_on(s: &SurfaceModel, u: f64, v: f64) -> ChartPoint {
    match s {
        SurfaceModel::FlatTorus { lx, ly } => ChartPoint::new(u * lx, v * ly),
        SurfaceModel::HyperbolicHalfPlane { .. } => ChartPoint::new(8.0 * u - 4.0, 0.1 + 10.0 * v),
        SurfaceModel::RoundSphere { .. } => ChartPoint::in_chart((u > 0.5) as u8, 2.8 * v - 1.4, 2.8 * u.fract() - 1.4),
    }
}

fn metric_derivative(s: &SurfaceModel, p: ChartPoint, l: usize, h: f64) -> Mat2 {
    let mut a = p;
    let mut b = p;
    a.q[l] += h;
    b.q[l] -= h;
    (s.metric_at(a).unwrap() - s.metric_at(b).unwrap()) / (2.0 * h)
}

/// Loop of winding `(m, n)` on the unit torus with a smooth transverse wiggle.
fn wiggly_loop(m: i64, n: i64, amp: f64, phase: f64, nodes: usize) -> DiscretePath {
    let pts = (0..nodes)
        .map(|i| {
            let t = i as f64 / nodes as f64;
            let w = amp * (TAU * 3.0 * t + phase).sin();
            ChartPoint::new((m as f64 * t + w).rem_euclid(1.0), (n as f64 * t - w).rem_euclid(1.0))
        })
        .collect();
    DiscretePath::closed(pts, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_is_symmetric_positive_definite(u in 0.0f64..1.0, v in 0.0f64..1.0) {
        for s in surfaces() {
            let p = point_on(&s, u, v);
            let g = s.metric_at(p).unwrap();
            prop_assert!((g - g.transpose()).norm() == 0.0);
            prop_assert!(g[(0, 0)] > 0.0 && g.determinant() > 0.0);
        }
    }

    #[test]
    fn christoffel_symbols_match_metric_differences(u in 0.05f64..0.95, v in 0.05f64..0.95) {
        for s in surfaces() {
            let p = point_on(&s, u, v);
            let gamma = s.christoffel_at(p).unwrap();
            let h = 1e-5 * (1.0 + p.q.norm());
            let dg = [metric_derivative(&s, p, 0, h), metric_derivative(&s, p, 1, h)];
            let ginv = s.metric_at(p).unwrap().try_inverse().unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let fd: f64 = (0..2)
                            .map(|l| 0.5 * ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]))
                            .sum();
                        let scale = 1.0 + fd.abs();
                        prop_assert!((gamma[i][j][k] - fd).abs() < 1e-6 * scale, "{i}{j}{k}: {} vs {fd}", gamma[i][j][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn homotopy_class_survives_small_deformations(m in -2i64..=2, n in -2i64..=2, amp in 0.0f64..0.05, phase in 0.0f64..TAU) {
        let s = SurfaceModel::flat_torus(1.0, 1.0).unwrap();
        let p = wiggly_loop(m, n, amp, phase, 96);
        let class = s.homotopy_class(&p).unwrap();
        prop_assert_eq!(class, HomotopyClass::Winding(m, n));
        prop_assert_eq!(class.is_trivial(), m == 0 && n == 0);
    }

    #[test]
    fn action_is_invariant_under_cyclic_relabelling(shift in 0usize..64, amp in 0.0f64..0.1, k in 0.0f64..2.0) {
        let model = preset("torus-psi-cutoff").unwrap().model;
        let p = wiggly_loop(1, 0, amp, 0.3, 64);
        let mut q = p.clone();
        q.nodes.rotate_left(shift);
        let (a, b) = (action(&model, &p, k).unwrap(), action(&model, &q, k).unwrap());
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn descent_step_does_not_increase_action(amp in 0.0f64..0.1, phase in 0.0f64..TAU, period in 0.3f64..3.0, k in 0.05f64..1.0) {
        let model = preset("torus-psi-cutoff").unwrap().model;
        let mut p = wiggly_loop(1, 0, amp, phase, 48);
        for node in &mut p.nodes {
            node.q.y = (node.q.y + 0.4).rem_euclid(1.0);
        }
        p.period = period;
        let mut cfg = FlowConfig::new(k);
        cfg.policy = StepPolicy::Adaptive;
        let before = action(&model, &p, k).unwrap();
        let out = flow_step(&model, &p, &cfg, 0.05).unwrap();
        let after = action(&model, &out.path, k).unwrap();
        prop_assert!(after <= before + 1e-12, "{before} -> {after}");
        prop_assert!(out.delta_s <= 0.0);
    }

    #[test]
    fn film_value_is_monotone_in_energy(cx in 0.0f64..1.0, cy in 0.0f64..1.0, r in 0.05f64..0.45, k in 0.0f64..5.0, dk in 0.0f64..5.0) {
        let model = preset("torus-oscillating").unwrap().model;
        let film = TaimanovFilm::disc(48, 1.0, 1.0, Vec2::new(cx, cy), r);
        let a = taimanov_value(&model, &film, k).unwrap();
        let b = taimanov_value(&model, &film, k + dk).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn cutoff_is_a_bump_equal_to_one_near_half(t in -1.0f64..2.0) {
        let psi = psi_cutoff();
        let v = psi.value(t);
        prop_assert!((0.0..=1.0).contains(&v));
        if !(0.1..=0.9).contains(&t) {
            prop_assert_eq!(v, 0.0);
        }
        if (0.3..=0.7).contains(&t) {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn horocycle_form_is_dx_over_y(x in -250.0f64..250.0, y in 0.01f64..400.0) {
        let model = preset("hyperbolic-horocycle").unwrap().model;
        let th = model.theta_at(ChartPoint::new(x, y));
        prop_assert!((th.x - 1.0 / y).abs() <= 1e-15 / y);
        prop_assert_eq!(th.y, 0.0);
    }

    #[test]
    fn energy_is_conserved_by_the_integrator(x in 0.0f64..1.0, y in 0.0f64..1.0, a in 0.0f64..TAU, speed in 0.1f64..2.0) {
        let model = preset("torus-oscillating").unwrap().model;
        let traj = model.shoot(ChartPoint::new(x, y), Vec2::new(a.cos(), a.sin()) * speed, 2.0, 2000).unwrap();
        prop_assert!(traj.energy_drift < 1e-8, "drift {}", traj.energy_drift);
    }
}

#[test]
fn there_are_six_presets() {
    let all = presets().unwrap();
    assert_eq!(all.len(), 6);
    let names: Vec<&str> = all.iter().map(|p| p.name).collect();
    assert_eq!(names, PRESET_NAMES);
}

#[test]
fn every_preset_has_a_valid_default_path() {
    for p in presets().unwrap() {
        let path = p.default_path(p.k).unwrap();
        path.validate(&p.model.surface).unwrap();
        assert!(path.period > 0.0, "{}", p.name);
    }
}

#[test]
fn sphere_rejects_one_forms() {
    let s = SurfaceModel::sphere(1.0).unwrap();
    let r = LagrangianModel::new(
        s,
        magflow::fields::OneForm::Horocycle { strength: 1.0 },
        magflow::fields::ScalarField::zero(),
        magflow::fields::ScalarField::zero(),
        magflow::QuadraticBounds { a: 0.5, b: 10.0 },
    );
    assert!(matches!(r, Err(magflow::MagflowError::Config(_))));
}
