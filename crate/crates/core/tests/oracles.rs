//! Closed-form checks computed independently of the library.

use std::f64::consts::{PI, TAU};

use magflow::critical::{
    e0, hyperbolic_circle_point, k_q, minimize, taimanov_value, upper_cap, MinimizeConfig, TaimanovFilm,
};
use magflow::fields::{OneForm, ScalarField};
use magflow::paths::{action, loop_value};
use magflow::presets::{path_a, preset};
use magflow::surface::Vec2;
use magflow::{ChartPoint, DiscretePath, HomotopyClass, LagrangianModel, QuadraticBounds, Submanifold, SurfaceModel};

fn flat_unit_torus() -> LagrangianModel {
    LagrangianModel::new(
        SurfaceModel::flat_torus(1.0, 1.0).unwrap(),
        OneForm::Zero,
        ScalarField::zero(),
        ScalarField::zero(),
        QuadraticBounds { a: 0.5, b: 0.0 },
    )
    .unwrap()
}

/// Clockwise hyperbolic circle of radius `r` around `(0, c)`.
fn hyperbolic_circle(c: f64, r: f64, n: usize) -> DiscretePath {
    let nodes = (0..n)
        .map(|i| {
            let q = hyperbolic_circle_point(0.0, c, r, -(i as f64) / n as f64);
            ChartPoint::new(q.x, q.y)
        })
        .collect();
    DiscretePath::closed(nodes, 1.0).unwrap()
}

#[test]
fn hyperbolic_circles_match_length_and_area() {
    let model = preset("hyperbolic-horocycle").unwrap().model;
    for (r, k, speed) in [(0.5, 0.1, 1.0), (1.5, 0.3, 0.7), (0.8, 0.0, 1.3)] {
        let mut path = hyperbolic_circle(1.0, r, 1024);
        let len = TAU * f64::sinh(r);
        path.period = len / speed;
        // kinetic + k over the period, minus the enclosed area (clockwise)
        let want = 0.5 * len * len / path.period + k * path.period - TAU * (f64::cosh(r) - 1.0);
        let got = action(&model, &path, k).unwrap();
        assert!(((got - want) / want).abs() < 1e-4, "r {r}: {got} vs {want}");
    }
}

#[test]
fn straight_loops_on_the_flat_torus() {
    let model = flat_unit_torus();
    for (m, n, t, k) in [(1i64, 0i64, 2.0f64, 0.5f64), (2, 1, 0.7, 0.1), (-1, 3, 1.9, 1.4)] {
        let nodes = (0..40)
            .map(|i| {
                let s = i as f64 / 40.0;
                ChartPoint::new((0.2 + m as f64 * s).rem_euclid(1.0), (0.6 + n as f64 * s).rem_euclid(1.0))
            })
            .collect();
        let path = DiscretePath::closed(nodes, t).unwrap();
        let len2 = (m * m + n * n) as f64;
        let want = len2 / (2.0 * t) + k * t;
        assert!((action(&model, &path, k).unwrap() - want).abs() < 1e-12);
        assert_eq!(path.homotopy_class(&model.surface).unwrap(), HomotopyClass::Winding(m, n));
    }
}

#[test]
fn diagonal_minimizer_has_action_sqrt_2k_times_length() {
    let model = flat_unit_torus();
    let k: f64 = 0.5;
    let nodes = (0..48)
        .map(|i| {
            let s = i as f64 / 48.0;
            ChartPoint::new((s + 0.03 * (TAU * s).sin()).rem_euclid(1.0), (s + 0.1).rem_euclid(1.0))
        })
        .collect();
    let path = DiscretePath::closed(nodes, 0.8).unwrap();
    let rep = minimize(&model, &path, k, &MinimizeConfig::new(k)).unwrap();
    let want = (2.0 * k).sqrt() * 2f64.sqrt();
    assert!(rep.is_orbit, "{:?}", rep.notes);
    assert!((rep.value.unwrap() - want).abs() < 1e-4, "{:?}", rep.value);
    assert!((rep.period - 2f64.sqrt() / (2.0 * k).sqrt()).abs() < 1e-3);
}

#[test]
fn larmor_radius_under_constant_field() {
    let model = preset("torus-constant-B").unwrap().model;
    let k: f64 = 0.125;
    let speed = (2.0 * k).sqrt();
    let start = ChartPoint::new(2.0, 2.0);
    let traj = model.shoot(start, Vec2::new(0.0, speed), TAU, 6000).unwrap();
    // with unit density the radius is the speed
    let mut acc = start.q;
    let mut far: f64 = 0.0;
    for w in traj.nodes.windows(2) {
        acc += model.surface.displacement(w[0], w[1]);
        far = far.max((acc - start.q).norm());
    }
    assert!((far - 2.0 * speed).abs() < 1e-5, "diameter {far}");
    assert!((acc - start.q).norm() < 1e-6);
}

#[test]
fn strip_path_action_is_k_minus_half() {
    let model = preset("torus-psi-cutoff").unwrap().model;
    for k in [0.0, 0.25, 0.3, 0.75, 2.0] {
        let a = action(&model, &path_a(64).unwrap(), k).unwrap();
        assert!((a - (k - 0.5)).abs() < 1e-9, "k {k}: {a}");
    }
}

#[test]
fn conormal_energy_thresholds() {
    let model = preset("torus-psi-cutoff").unwrap().model;
    let line = Submanifold::HorizontalLine { y: 0.5 };
    assert!((model.min_conormal_energy(&line) - 0.5).abs() < 1e-9);
    let point = Submanifold::Point { at: ChartPoint::new(0.5, 0.5) };
    assert_eq!(model.min_conormal_energy(&point), 0.0);
    // away from the strip the one-form vanishes
    assert!(model.min_conormal_energy(&Submanifold::HorizontalLine { y: 0.05 }).abs() < 1e-12);
}

#[test]
fn mechanical_levels() {
    let p = preset("mechanical-torus").unwrap();
    assert!((e0(&p.model) - 1.0).abs() < 1e-9);
    assert!((upper_cap(&p.model) - 1.0).abs() < 1e-9);
    let (q0, q1) = p.boundary.as_ref().unwrap();
    let (lo, hi) = k_q(&p.model, q0, q1).unwrap();
    // the only intersection point is (1/4, 1/4), where V vanishes
    assert!(lo.abs() < 1e-12 && hi.abs() < 1e-12);
}

#[test]
fn horocycle_cap_is_one_half() {
    let model = preset("hyperbolic-horocycle").unwrap().model;
    // |dx/y| = 1 in the hyperbolic metric, so the cap is 1 / (4 a)
    assert!((upper_cap(&model) - 0.5).abs() < 1e-12);
}

#[test]
fn latitude_values_on_the_round_sphere() {
    let model = preset("sphere-standard-magnetic").unwrap().model;
    let k: f64 = 0.5;
    for phi in [PI / 6.0, PI / 4.0, PI / 3.0] {
        let rho = (phi / 2.0).tan();
        let n = 512;
        let nodes = (0..n)
            .map(|i| {
                let t = TAU * i as f64 / n as f64;
                ChartPoint::in_chart(0, rho * t.cos(), -rho * t.sin())
            })
            .collect();
        let mut path = DiscretePath::closed(nodes, 1.0).unwrap();
        let len = TAU * phi.sin();
        path.period = len / (2.0 * k).sqrt();
        // sqrt(2k) * length minus the enclosed polar cap
        let want = (2.0 * k).sqrt() * len - TAU * (1.0 - phi.cos());
        let got = loop_value(&model, &path, k).unwrap();
        assert!((got - want).abs() < 1e-3 * want.abs().max(1.0), "phi {phi}: {got} vs {want}");
    }
}

#[test]
fn film_of_a_disc_under_constant_density() {
    let model = preset("torus-constant-B").unwrap().model;
    let (r, k) = (0.9, 0.3f64);
    let film = TaimanovFilm::disc(256, 4.0, 4.0, Vec2::new(2.0, 2.0), r);
    let want = (2.0 * k).sqrt() * TAU * r + PI * r * r;
    let got = taimanov_value(&model, &film, k).unwrap();
    assert!(((got - want) / want).abs() < 2e-3, "{got} vs {want}");
    assert_eq!(taimanov_value(&model, &TaimanovFilm::empty(64, 4.0, 4.0), k).unwrap(), 0.0);
}
