//! Acceptance criteria, one PASS/FAIL line each. Pass criterion numbers as arguments to run a subset.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use magflow::critical::{
    chain_consistent, critical_value_report, e0, film_search, hyperbolic_circle_point, latitude_family, mane_bracket,
    mane_upper, minimax_sweep, minimize, mountain_pass, tau_plus_bracket, taimanov_value, LoopClass, ManeSearch,
    MinimizeConfig, MountainPassConfig, PotentialBasis, SweepStatus, TaimanovFilm, TaimanovSearch,
};
use magflow::fields::{OneForm, ScalarField};
use magflow::paths::{action, eta_k};
use magflow::presets::{path_a, preset, PRESET_NAMES};
use magflow::{
    ChartPoint, DiscretePath, LagrangianModel, PathTangent, QuadraticBounds, Result, SurfaceModel,
};

type Outcome = Result<(bool, String)>;

fn hyperbolic_circle(model: &LagrangianModel, r: f64, n: usize) -> Result<DiscretePath> {
    let c = match model.surface {
        SurfaceModel::HyperbolicHalfPlane { bbox } => (bbox.y_min * bbox.y_max).sqrt(),
        _ => 1.0,
    };
    // clockwise, so the enclosed area enters with a negative sign
    let nodes = (0..n)
        .map(|i| {
            let q = hyperbolic_circle_point(0.0, c, r, -(i as f64) / n as f64);
            ChartPoint::new(q.x, q.y)
        })
        .collect();
    DiscretePath::closed(nodes, 1.0)
}

fn c1_hyperbolic_circle_action() -> Outcome {
    let start = Instant::now();
    let model = preset("hyperbolic-horocycle")?.model;
    let (r, k) = (1.0f64, 0.25);
    let mut path = hyperbolic_circle(&model, r, 512)?;
    path.period = TAU * r.sinh();
    let got = action(&model, &path, k)?;
    let want = (0.5 + k) * TAU * r.sinh() - TAU * (r.cosh() - 1.0);
    let rel = ((got - want) / want).abs();
    let secs = start.elapsed().as_secs_f64();
    Ok((rel < 1e-3 && secs < 1.0, format!("action {got:.6} vs {want:.6}, rel err {rel:.2e}, {secs:.3} s")))
}

fn c2_hyperbolic_mane_bracket() -> Outcome {
    let start = Instant::now();
    let model = preset("hyperbolic-horocycle")?.model;
    let b = mane_bracket(&model, LoopClass::Contractible, -0.05, 0.575, &ManeSearch::default())?;
    let secs = start.elapsed().as_secs_f64();
    let ok = b.contains(0.5) && b.width() <= 0.06 && secs < 60.0;
    Ok((ok, format!("bracket [{:.4}, {:.4}], width {:.4}, {secs:.1} s", b.lo, b.hi, b.width())))
}

fn c3_psi_example() -> Outcome {
    let p = preset("torus-psi-cutoff")?;
    let mut worst = 0.0f64;
    for k in [0.1, 0.3, 0.5, 0.9] {
        let a = action(&p.model, &path_a(64)?, k)?;
        worst = worst.max((a - (k - 0.5)).abs());
    }
    let mut seed = vec![0.0; 2];
    seed[0] = 0.5;
    let basis = PotentialBasis { seeds: vec![seed], ..PotentialBasis::default() };
    let up = mane_upper(&p.model, &basis)?;
    let ok = worst < 1e-6 && up.value <= 0.125 + 1e-3;
    Ok((ok, format!("path a action error {worst:.2e}; upper bound {:.6}", up.value)))
}

fn c4_mechanical_collapse() -> Outcome {
    let p = preset("mechanical-torus")?;
    let e = e0(&p.model);
    let rep = critical_value_report(&p.model, None, &ManeSearch::default(), Some(&PotentialBasis::default()), None)?;
    let near = |x: f64| (x - 1.0).abs() <= 0.02;
    let ok = near(e) && near(rep.cu.lo) && near(rep.cu.hi) && near(rep.c.lo) && near(rep.c.hi);
    Ok((
        ok,
        format!("e0 {e:.5}, c_u [{:.5}, {:.5}], c [{:.5}, {:.5}]", rep.cu.lo, rep.cu.hi, rep.c.lo, rep.c.hi),
    ))
}

fn random_loop(rng: &mut ChaCha8Rng, n: usize) -> Result<DiscretePath> {
    let (x0, y0): (f64, f64) = (rng.gen(), rng.gen());
    let (ax, ay, bx, by): (f64, f64, f64, f64) =
        (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let wind = rng.gen_range(-1i32..=1) as f64;
    let nodes = (0..n)
        .map(|i| {
            let s = i as f64 / n as f64;
            let x = x0 + wind * s + ax * (TAU * s).sin() + bx * (2.0 * TAU * s).cos();
            let y = y0 + ay * (TAU * s).cos() + by * (3.0 * TAU * s).sin();
            ChartPoint::new(x.rem_euclid(1.0), y.rem_euclid(1.0))
        })
        .collect();
    DiscretePath::closed(nodes, rng.gen_range(0.5..2.0))
}

fn c5_eta_matches_differences() -> Outcome {
    let start = Instant::now();
    let mut model = preset("torus-psi-cutoff")?.model;
    model.potential = ScalarField::CosProduct { offset: 0.0, amplitude: 0.3, kx: 1.0, ky: 2.0, lx: 1.0, ly: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let path = random_loop(&mut rng, 48)?;
        let k = rng.gen_range(0.1..1.0);
        let xi = PathTangent {
            nodes: (0..path.nodes.len())
                .map(|_| nalgebra::Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
            dt: rng.gen_range(-1.0..1.0),
        };
        let eta = eta_k(&model, &path, k)?;
        let exact = eta.pair(&xi);
        // fourth-order central difference
        let h = 1e-4;
        let moved = PathTangent { nodes: xi.nodes.clone(), dt: 0.0 };
        let f = |t: f64| -> Result<f64> {
            let mut p = path.apply(&model.surface, &moved, t)?;
            p.period = path.period + t * xi.dt;
            action(&model, &p, k)
        };
        let fd = (8.0 * (f(h)? - f(-h)?) - (f(2.0 * h)? - f(-2.0 * h)?)) / (12.0 * h);
        worst = worst.max((exact - fd).abs() / exact.abs().max(1e-3));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst < 1e-5 && secs < 10.0, format!("max rel err {worst:.2e} over 100 paths, {secs:.2} s")))
}

fn c6_constant_field_circle() -> Outcome {
    let model = preset("torus-constant-B")?.model;
    let start = ChartPoint::new(2.0, 2.0);
    let v0 = nalgebra::Vector2::new(1.0, 0.0);
    let steps = (TAU / 1e-3).round() as usize;
    let traj = model.shoot(start, v0, TAU, steps)?;
    let lifted: Vec<_> = {
        let mut acc = start.q;
        let mut out = vec![acc];
        for w in traj.nodes.windows(2) {
            acc += model.surface.displacement(w[0], w[1]);
            out.push(acc);
        }
        out
    };
    let n = lifted.len() - 1;
    let center = lifted[..n].iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p) / n as f64;
    let radius_err = lifted.iter().map(|p| ((p - center).norm() - 1.0).abs()).fold(0.0, f64::max);
    let clockwise = center.y < start.q.y;
    // return time from the closure gap at speed 1
    let gap = (lifted[n] - lifted[0]).norm();
    let ok = radius_err < 1e-6 && gap < 1e-6 && traj.energy_drift < 1e-8 && clockwise;
    Ok((
        ok,
        format!(
            "radius err {radius_err:.2e}, period err {gap:.2e}, drift {:.2e}, clockwise {clockwise}",
            traj.energy_drift
        ),
    ))
}

fn c7_flat_minimizer() -> Outcome {
    let model = LagrangianModel::new(
        SurfaceModel::flat_torus(1.0, 1.0)?,
        OneForm::Zero,
        ScalarField::zero(),
        ScalarField::zero(),
        QuadraticBounds { a: 0.5, b: 0.0 },
    )?;
    let n = 64;
    let nodes = (0..n)
        .map(|i| {
            let s = i as f64 / n as f64;
            ChartPoint::new((s + 0.05 * (TAU * s).sin()).rem_euclid(1.0), 0.3 + 0.08 * (TAU * s).sin())
        })
        .collect();
    let path = DiscretePath::closed(nodes, 1.7)?;
    let rep = minimize(&model, &path, 0.5, &MinimizeConfig::new(0.5))?;
    let value = rep.value.unwrap_or(f64::NAN);
    let closure = rep.certificate.map_or(f64::NAN, |c| c.closure_residual);
    let ok = (value - 1.0).abs() < 1e-4 && closure < 1e-4;
    Ok((ok, format!("action {value:.8}, class {:?}, closure {closure:.2e}", rep.homotopy_class)))
}

fn c8_mechanical_sweep() -> Outcome {
    let p = preset("mechanical-torus")?;
    let family = p.family.clone().expect("mechanical preset has a family");
    let ks = p.k_grid.values();
    let report = minimax_sweep(&p.model, |k| family.build(&p.model, k), &ks, &MountainPassConfig::default())?;
    let certified = report.rows.iter().all(|r| r.status == SweepStatus::Certified);
    let positive = report.rows.iter().all(|r| r.c.map_or(false, |c| c > 0.0));
    let slope_dev = report.slopes.iter().map(|s| s.3).fold(0.0, f64::max);
    let index_ok = report.rows.iter().all(|r| r.hessian_index.map_or(false, |i| i >= 1));
    let ok = certified && positive && report.monotonicity_violation < 1e-6 && slope_dev <= 0.2 && index_ok;
    let cs: Vec<String> = report.rows.iter().map(|r| r.c.map_or("-".into(), |c| format!("{c:.4}"))).collect();
    let idx: Vec<String> =
        report.rows.iter().map(|r| r.hessian_index.map_or("-".into(), |i| i.to_string())).collect();
    Ok((
        ok,
        format!(
            "c = [{}], violation {:.1e}, max slope dev {slope_dev:.3}, index [{}]",
            cs.join(", "),
            report.monotonicity_violation,
            idx.join(", ")
        ),
    ))
}

fn c9_sphere_latitude() -> Outcome {
    let p = preset("sphere-standard-magnetic")?;
    let family = latitude_family(&p.model, 0.5, 24, 256, 1.0)?;
    let (value, rep) = mountain_pass(&p.model, &family, 0.5, &MountainPassConfig::default())?;
    let closure = rep.certificate.map_or(f64::NAN, |c| c.closure_residual);
    let ok = rep.eta_norm < 1e-6 && closure < 1e-3;
    Ok((
        ok,
        format!(
            "minimax {value:.6}, candidate {:.6} (latitude saddle {:.6}), index {:?}, |eta| {:.2e}, closure {closure:.2e}",
            rep.value.unwrap_or(f64::NAN),
            TAU * (2f64.sqrt() - 1.0),
            rep.hessian_index,
            rep.eta_norm
        ),
    ))
}

fn c10_taimanov() -> Outcome {
    let p = preset("torus-oscillating")?;
    let m = &p.model;
    let empty = taimanov_value(m, &TaimanovFilm::empty(64, 1.0, 1.0), 0.7)?;
    let films = [
        TaimanovFilm::disc(64, 1.0, 1.0, nalgebra::Vector2::new(0.5, 0.0), 0.2),
        TaimanovFilm::disc(64, 1.0, 1.0, nalgebra::Vector2::new(0.3, 0.6), 0.35),
        TaimanovFilm::full(64, 1.0, 1.0),
    ];
    let mut monotone = true;
    for f in &films {
        let vals: Vec<f64> = [0.0, 0.01, 0.1, 1.0, 10.0].iter().map(|&k| taimanov_value(m, f, k)).collect::<Result<_>>()?;
        monotone &= vals.windows(2).all(|w| w[1] >= w[0]);
    }
    let search = TaimanovSearch::default();
    let low = film_search(m, 0.01, &search)?.0;
    let high = film_search(m, 10.0, &search)?.0;
    let coarse = tau_plus_bracket(m, &search)?;
    let fine = tau_plus_bracket(m, &TaimanovSearch { grid: 2 * search.grid, ..search.clone() })?;
    let mid = |b: &magflow::critical::Bracket| (b.lo * b.hi).sqrt();
    let drift = (mid(&fine) / mid(&coarse) - 1.0).abs();
    let ok = empty == 0.0 && monotone && low < 0.0 && high >= 0.0 && drift <= 0.1 && fine.hi.is_finite();
    Ok((
        ok,
        format!(
            "T(empty) {empty}, monotone {monotone}, inf {low:.4} at k=0.01, {high:.4} at k=10, tau_+ [{:.4}, {:.4}] -> [{:.4}, {:.4}] ({:.1}%)",
            coarse.lo,
            coarse.hi,
            fine.lo,
            fine.hi,
            100.0 * drift
        ),
    ))
}

fn c11_obstruction() -> Outcome {
    let p = preset("torus-psi-cutoff")?;
    let (q0, q1) = p.boundary.clone().expect("psi preset has a boundary pair");
    let k: f64 = 0.3;
    let need = p.model.min_conormal_energy(&q1);
    let bound = ((2.0 * k).sqrt() - 1.0).abs();
    let mut all = true;
    let mut worst = f64::INFINITY;
    let starts: [(f64, f64, f64); 4] = [(0.3, 0.0, 1.0), (-0.4, 1.0, 2.0), (0.0, -1.0, 1.5), (0.6, 2.0, 3.0)];
    for (dx, dy, period) in starts {
        let n = 64;
        let nodes = (0..=n)
            .map(|i| {
                let s = i as f64 / n as f64;
                let x = 0.5 + dx * s + 0.05 * (PI * s).sin();
                let y = 0.5 + dy * s + 0.1 * (PI * s).sin();
                ChartPoint::new(x.rem_euclid(1.0), y.rem_euclid(1.0))
            })
            .collect();
        let path = DiscretePath::open(nodes, period, q0.clone(), q1.clone())?;
        let rep = minimize(&p.model, &path, k, &MinimizeConfig::new(k))?;
        let r = rep.conormal_residual.unwrap_or(0.0);
        worst = worst.min(r);
        all &= rep.infeasible && !rep.is_orbit && r >= bound - 1e-9;
    }
    let ok = (need - 0.5).abs() < 1e-9 && all;
    Ok((ok, format!("min conormal energy {need:.9}, least residual {worst:.4} vs bound {bound:.4}")))
}

fn c12_chain() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in PRESET_NAMES {
        let p = preset(name)?;
        let boundary = p.boundary.as_ref().map(|(a, b)| (a, b));
        let basis = match p.model.surface {
            SurfaceModel::FlatTorus { .. } => Some(PotentialBasis::default()),
            _ => None,
        };
        let tai = if name == "torus-oscillating" { Some(TaimanovSearch::default()) } else { None };
        let rep = critical_value_report(&p.model, boundary, &ManeSearch::default(), basis.as_ref(), tai.as_ref())?;
        let good = chain_consistent(&rep, 1e-6);
        ok &= good;
        lines.push(format!(
            "{name}: e0 {:.3} c_u [{:.3},{:.3}] c [{:.3},{:.3}] k0 {} cap {:.3} {}",
            rep.e0,
            rep.cu.lo,
            rep.cu.hi,
            rep.c.lo,
            rep.c.hi,
            rep.k0.as_ref().map_or("-".into(), |b| format!("[{:.3},{:.3}]", b.lo, b.hi)),
            rep.upper_cap,
            if good { "ok" } else { "VIOLATED" }
        ));
    }
    Ok((ok, lines.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 12] = [
        (1, "hyperbolic circle action", c1_hyperbolic_circle_action),
        (2, "hyperbolic critical value bracket", c2_hyperbolic_mane_bracket),
        (3, "strip one-form example", c3_psi_example),
        (4, "mechanical collapse of critical values", c4_mechanical_collapse),
        (5, "action differential vs finite differences", c5_eta_matches_differences),
        (6, "constant-field shooting oracle", c6_constant_field_circle),
        (7, "flat torus class (1,0) minimizer", c7_flat_minimizer),
        (8, "mechanical conormal minimax sweep", c8_mechanical_sweep),
        (9, "sphere latitude mountain pass", c9_sphere_latitude),
        (10, "film functional and tau_+", c10_taimanov),
        (11, "conormal obstruction below energy 1/2", c11_obstruction),
        (12, "critical value chain on all presets", c12_chain),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} {id:>2} {name}: {detail} [{secs:.1} s]", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
