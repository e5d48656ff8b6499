//! Mañé-type critical values: `e0`, `kQ`, bisection brackets for `c_u`, `c`, the `k0` proxy,
//! and the Hamiltonian upper bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::taimanov::{tau_plus_bracket, TaimanovSearch};
use super::Bracket;
use crate::descent::optimal_period;
use crate::dynamics::LagrangianModel;
use crate::error::{MagflowError, Result};
use crate::paths::{action, BoundarySpec, DiscretePath, PeriodProfile, Submanifold};
use crate::surface::{ChartPoint, HomotopyClass, SurfaceModel, Vec2};

/// Maximum of `E(q, 0) = V(q)`.
pub fn e0(model: &LagrangianModel) -> f64 {
    model.max_potential().0
}

/// `sup_q |theta_q|` in the dual metric, sampled on a grid.
pub fn theta_sup_norm(model: &LagrangianModel) -> f64 {
    if model.theta.is_zero() {
        return 0.0;
    }
    model
        .surface
        .area_quadrature(256)
        .into_iter()
        .filter(|(p, _)| model.surface.in_working_region(*p))
        .map(|(p, _)| model.theta_at(p).norm() / model.surface.conformal_factor(p.q).sqrt())
        .fold(0.0, f64::max)
}

/// `e0 + |theta|_inf^2 / (4a)`; infinite when the extra two-form has no bounded primitive.
pub fn upper_cap(model: &LagrangianModel) -> f64 {
    if model.has_extra_sigma() {
        return f64::INFINITY;
    }
    e0(model) + theta_sup_norm(model).powi(2) / (4.0 * model.bounds.a)
}

/// Points of `Q0 ∩ Q1` (sampled when the intersection is a curve).
pub fn intersection_points(model: &LagrangianModel, q0: &Submanifold, q1: &Submanifold) -> Vec<ChartPoint> {
    let s = &model.surface;
    if q0.is_point() {
        let p = q0.reference_point();
        return if q1.distance(s, p) < 1e-9 { vec![p] } else { vec![] };
    }
    if q1.is_point() {
        return intersection_points(model, q1, q0);
    }
    let samples = 4096;
    let f = |t: f64| q1.distance(s, q0.point_at(s, t));
    let vals: Vec<f64> = (0..samples).map(|i| f(i as f64 / samples as f64)).collect();
    if vals.iter().all(|v| *v < 1e-9) {
        return (0..64).map(|i| q0.point_at(s, i as f64 / 64.0)).collect();
    }
    let scale = s.injectivity_scale();
    let mut out: Vec<ChartPoint> = Vec::new();
    for i in 0..samples {
        let (prev, next) = (vals[(i + samples - 1) % samples], vals[(i + 1) % samples]);
        if vals[i] <= prev && vals[i] < next && vals[i] < 1e-2 * scale {
            let h = 1.0 / samples as f64;
            let (mut lo, mut hi) = ((i as f64 - 1.0) * h, (i as f64 + 1.0) * h);
            for _ in 0..100 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if f(m1) < f(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let t = 0.5 * (lo + hi);
            if f(t) < 1e-9 {
                let p = q1.project(s, q0.point_at(s, t.rem_euclid(1.0)));
                if out.iter().all(|o| s.chart_distance(*o, p) > 1e-6) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// `(k^-, k)` of the intersection `Q0 ∩ Q1`.
pub fn k_q(model: &LagrangianModel, q0: &Submanifold, q1: &Submanifold) -> Result<(f64, f64)> {
    let pts = intersection_points(model, q0, q1);
    if pts.is_empty() {
        return Err(MagflowError::Precondition("Q0 and Q1 do not intersect".into()));
    }
    let energy: Vec<f64> = pts.iter().map(|p| model.potential_value(*p)).collect();
    let theta = pts
        .iter()
        .map(|p| model.theta_at(*p).norm_squared() / model.surface.conformal_factor(p.q))
        .fold(0.0, f64::max)
        / (4.0 * model.bounds.a);
    let lo = energy.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo + theta, hi + theta))
}

/// `(2 sqrt(a (k - c_E)) - c_theta) eps`, the action bound on paths of length `eps` leaving `Q0 ∩ Q1`.
pub fn alpha_lower_bound(model: &LagrangianModel, q0: &Submanifold, q1: &Submanifold, k: f64, eps: f64) -> Result<f64> {
    let pts = intersection_points(model, q0, q1);
    if pts.is_empty() {
        return Err(MagflowError::Precondition("Q0 and Q1 do not intersect".into()));
    }
    let ce = pts.iter().map(|p| model.potential_value(*p)).fold(f64::NEG_INFINITY, f64::max);
    let ct = pts
        .iter()
        .map(|p| model.theta_at(*p).norm() / model.surface.conformal_factor(p.q).sqrt())
        .fold(0.0, f64::max);
    if k <= ce {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((2.0 * (model.bounds.a * (k - ce)).sqrt() - ct) * eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopClass {
    All,
    Contractible,
    Nullhomologous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeSearch {
    /// Bisection stops at this bracket width.
    pub tol: f64,
    /// Node spacing in units of the injectivity scale.
    pub spacing: f64,
    pub max_nodes: usize,
    pub max_winding: i64,
    pub offsets: usize,
    pub circle_centers: usize,
    pub circle_radii: usize,
    pub strip_levels: usize,
    /// Strip rectangles run over up to `2^strip_doublings` periods.
    pub strip_doublings: u32,
    pub hyperbolic_r_step: f64,
    /// Windings of a negative loop inserted into connector paths for the `k0` proxy: `2^0 .. 2^n`.
    pub k0_doublings: u32,
}

impl Default for ManeSearch {
    fn default() -> Self {
        ManeSearch {
            tol: 1e-3,
            spacing: 0.02,
            max_nodes: 1 << 17,
            max_winding: 2,
            offsets: 16,
            circle_centers: 6,
            circle_radii: 8,
            strip_levels: 20,
            strip_doublings: 6,
            hyperbolic_r_step: 0.25,
            k0_doublings: 6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Witness {
    pub path: DiscretePath,
    pub value: f64,
    pub note: String,
}

struct Seed {
    path: DiscretePath,
    /// Profile at `k = 0`; `b` grows by `k`.
    profile: PeriodProfile,
    note: String,
}

impl Seed {
    fn at(&self, k: f64) -> (f64, f64) {
        PeriodProfile { b: self.profile.b + k, ..self.profile }.infimum()
    }
}

fn closed_from(surface: &SurfaceModel, chart: u8, n: usize, f: impl Fn(f64) -> Vec2) -> Result<DiscretePath> {
    let nodes = (0..n)
        .map(|i| {
            let q = f(i as f64 / n as f64);
            if surface.lattice().is_some() {
                ChartPoint { chart, q }
            } else {
                surface.normalize(ChartPoint { chart, q })
            }
        })
        .collect();
    DiscretePath::closed(nodes, 1.0)
}

/// Closed polygon sampled uniformly in chart arclength.
fn polygon_loop(vertices: &[Vec2], spacing: f64, max_nodes: usize) -> Result<DiscretePath> {
    let m = vertices.len();
    let lens: Vec<f64> = (0..m).map(|i| (vertices[(i + 1) % m] - vertices[i]).norm()).collect();
    let total: f64 = lens.iter().sum();
    let n = ((total / spacing).ceil() as usize).clamp(8, max_nodes);
    let mut nodes = Vec::with_capacity(n);
    let (mut seg, mut acc) = (0usize, 0.0);
    for i in 0..n {
        let t = total * i as f64 / n as f64;
        while seg + 1 < m && acc + lens[seg] < t {
            acc += lens[seg];
            seg += 1;
        }
        let a = vertices[seg];
        let b = vertices[(seg + 1) % m];
        nodes.push(ChartPoint { chart: 0, q: a + ((t - acc) / lens[seg]).clamp(0.0, 1.0) * (b - a) });
    }
    DiscretePath::closed(nodes, 1.0)
}

fn reversed(p: &DiscretePath) -> DiscretePath {
    let mut nodes = p.nodes.clone();
    nodes.reverse();
    DiscretePath { nodes, period: p.period, boundary: p.boundary.clone() }
}

fn admissible(model: &LagrangianModel, p: &DiscretePath, class: LoopClass) -> bool {
    if class == LoopClass::All {
        return true;
    }
    matches!(p.homotopy_class(&model.surface), Ok(HomotopyClass::Trivial) | Ok(HomotopyClass::Winding(0, 0)))
}

fn seed_shapes(model: &LagrangianModel, class: LoopClass, cfg: &ManeSearch) -> Result<Vec<(DiscretePath, String)>> {
    let s = &model.surface;
    let mut shapes: Vec<(DiscretePath, String)> = Vec::new();
    // constant loops at the highest potential values
    let (_, top) = model.max_potential();
    shapes.push((DiscretePath::constant_loop(top, 8, 1.0)?, "constant loop at max V".into()));
    match s {
        SurfaceModel::FlatTorus { lx, ly } => {
            let (lx, ly) = (*lx, *ly);
            let h = cfg.spacing * lx.min(ly);
            for m in -cfg.max_winding..=cfg.max_winding {
                for n in 0..=cfg.max_winding {
                    if (m == 0 && n == 0) || (n == 0 && m < 0) || gcd(m.abs(), n) != 1 {
                        continue;
                    }
                    let d = Vec2::new(m as f64 * lx, n as f64 * ly);
                    let len = d.norm();
                    let normal = Vec2::new(-d.y, d.x) / len;
                    let count = ((len / h).ceil() as usize).clamp(16, cfg.max_nodes);
                    for o in 0..cfg.offsets {
                        let shift = normal * (o as f64 / cfg.offsets as f64) * (lx * ly / len);
                        let p = closed_from(s, 0, count, |t| shift + t * d)?;
                        shapes.push((reversed(&p), format!("geodesic ({},{}) offset {o}", -m, -n)));
                        shapes.push((p, format!("geodesic ({m},{n}) offset {o}")));
                    }
                }
            }
            let rmax = 0.45 * lx.min(ly);
            for ci in 0..cfg.circle_centers {
                for cj in 0..cfg.circle_centers {
                    let c = Vec2::new(lx * ci as f64 / cfg.circle_centers as f64, ly * cj as f64 / cfg.circle_centers as f64);
                    for ri in 0..cfg.circle_radii {
                        let r = rmax * (0.05f64).powf(1.0 - ri as f64 / (cfg.circle_radii - 1).max(1) as f64);
                        let count = ((std::f64::consts::TAU * r / h).ceil() as usize).clamp(16, cfg.max_nodes);
                        let p = closed_from(s, 0, count, |t| {
                            let a = std::f64::consts::TAU * t;
                            c + r * Vec2::new(a.cos(), a.sin())
                        })?;
                        shapes.push((reversed(&p), format!("circle r={r:.3} cw")));
                        shapes.push((p, format!("circle r={r:.3} ccw")));
                    }
                }
            }
            if !model.sigma_is_exact() {
                // large circles in the lift enclose unbounded flux
                for d in 0..6 {
                    let r = lx.min(ly) * f64::from(1u32 << d);
                    let count = ((std::f64::consts::TAU * r / h).ceil() as usize).clamp(16, cfg.max_nodes);
                    let p = closed_from(s, 0, count, |t| {
                        let a = std::f64::consts::TAU * t;
                        r * Vec2::new(a.cos(), a.sin())
                    })?;
                    shapes.push((reversed(&p), format!("lifted circle r={r} cw")));
                    shapes.push((p, format!("lifted circle r={r} ccw")));
                }
            }
            // long thin rectangles between two levels, in both directions
            let levels = cfg.strip_levels;
            for horizontal in [true, false] {
                let (along, across) = if horizontal { (lx, ly) } else { (ly, lx) };
                for i in 0..levels {
                    for j in i + 1..levels {
                        let (a, b) = (across * i as f64 / levels as f64, across * j as f64 / levels as f64);
                        for d in 0..=cfg.strip_doublings {
                            let w = along * f64::from(1u32 << d);
                            let pts = if horizontal {
                                [Vec2::new(0.0, a), Vec2::new(w, a), Vec2::new(w, b), Vec2::new(0.0, b)]
                            } else {
                                [Vec2::new(a, 0.0), Vec2::new(a, w), Vec2::new(b, w), Vec2::new(b, 0.0)]
                            };
                            let p = polygon_loop(&pts, h, cfg.max_nodes)?;
                            shapes.push((reversed(&p), format!("strip {a:.3}-{b:.3} x{w}")));
                            shapes.push((p, format!("strip {a:.3}-{b:.3} x{w} rev")));
                        }
                    }
                }
            }
        }
        SurfaceModel::HyperbolicHalfPlane { bbox } => {
            let c = (bbox.y_min * bbox.y_max).sqrt();
            let x0 = 0.5 * (bbox.x_min + bbox.x_max);
            let mut r = cfg.hyperbolic_r_step;
            loop {
                // Euclidean extent of the hyperbolic circle of radius r about (x0, c)
                let (lo, hi, half) = (c * (-r).exp(), c * r.exp(), c * r.sinh());
                if lo < bbox.y_min * 1.05 || hi > bbox.y_max / 1.05 || x0 + half > bbox.x_max || x0 - half < bbox.x_min {
                    break;
                }
                let len = std::f64::consts::TAU * r.sinh();
                let count = ((len / cfg.spacing).ceil() as usize).clamp(64, cfg.max_nodes);
                let p = closed_from(s, 0, count, |t| hyperbolic_circle_point(x0, c, r, t))?;
                shapes.push((reversed(&p), format!("hyperbolic circle r={r:.2} cw")));
                shapes.push((p, format!("hyperbolic circle r={r:.2} ccw")));
                r += cfg.hyperbolic_r_step;
            }
        }
        SurfaceModel::RoundSphere { .. } => {
            for j in 1..16 {
                let rho = (0.5 * std::f64::consts::PI * j as f64 / 16.0).tan();
                let count = 128;
                let p = closed_from(s, 0, count, |t| {
                    let a = std::f64::consts::TAU * t;
                    rho * Vec2::new(a.cos(), a.sin())
                })?;
                shapes.push((reversed(&p), format!("latitude {j}/16 cw")));
                shapes.push((p, format!("latitude {j}/16 ccw")));
            }
        }
    }
    Ok(shapes.into_iter().filter(|(p, _)| admissible(model, p, class)).collect())
}

/// Uniform-speed parametrisation of the hyperbolic circle of radius `r` about `(x0, c)`,
/// the image of a Euclidean circle in the disc model.
pub fn hyperbolic_circle_point(x0: f64, c: f64, r: f64, t: f64) -> Vec2 {
    let rho = (0.5 * r).tanh();
    let a = std::f64::consts::TAU * t;
    let (zr, zi) = (rho * a.cos(), rho * a.sin());
    // w = i c (1 + z) / (1 - z)
    let (nr, ni) = (1.0 + zr, zi);
    let (dr, di) = (1.0 - zr, -zi);
    let den = dr * dr + di * di;
    let (qr, qi) = ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den);
    Vec2::new(x0 - c * qi, c * qr)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct SeedBank {
    seeds: Vec<Seed>,
}

impl SeedBank {
    fn new(model: &LagrangianModel, class: LoopClass, cfg: &ManeSearch) -> Result<Self> {
        let shapes = seed_shapes(model, class, cfg)?;
        let mut seeds: Vec<Seed> = shapes
            .into_par_iter()
            .filter_map(|(path, note)| {
                let profile = PeriodProfile::of(model, &path, 0.0).ok()?;
                profile.c.is_finite().then_some(Seed { path, profile, note })
            })
            .collect();
        if model.surface.is_sphere() && !model.sigma_is_exact() {
            // a constant loop capped by the whole sphere: its value is the total flux with either sign
            let (_, top) = model.max_potential();
            let path = DiscretePath::constant_loop(top, 8, 1.0)?;
            let base = PeriodProfile::of(model, &path, 0.0)?;
            seeds.push(Seed {
                path,
                profile: PeriodProfile { c: base.c - model.sigma_flux().abs(), ..base },
                note: "constant loop capped by the complementary disc".into(),
            });
        }
        Ok(SeedBank { seeds })
    }

    fn best(&self, k: f64) -> Option<Witness> {
        self.seeds
            .iter()
            .map(|s| (s, s.at(k)))
            .filter(|(_, (_, v))| *v < 0.0)
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(s, (t, v))| {
                let mut path = s.path.clone();
                path.period = if t.is_finite() { t } else { 1e6 };
                Witness { path, value: v, note: s.note.clone() }
            })
    }
}

/// A loop of the given class with negative action (including the capping term) at energy `k`, if the seeded search finds one.
pub fn mane_lower(model: &LagrangianModel, k: f64, class: LoopClass, cfg: &ManeSearch) -> Result<Option<Witness>> {
    Ok(SeedBank::new(model, class, cfg)?.best(k))
}

fn bisect(mut neg: impl FnMut(f64) -> Result<bool>, k_lo: f64, k_hi: f64, tol: f64, what: &str) -> Result<Bracket> {
    if !(k_lo < k_hi) {
        return Err(MagflowError::Precondition(format!("bracket search needs k_lo < k_hi, got {k_lo}, {k_hi}")));
    }
    if neg(k_hi)? {
        return Ok(Bracket::new(k_hi, f64::INFINITY, format!("{what}: negative witness at the search limit")));
    }
    if !neg(k_lo)? {
        return Ok(Bracket::new(f64::NEG_INFINITY, k_lo, format!("{what}: no negative witness at the lower limit (heuristic upper side)")));
    }
    let (mut lo, mut hi) = (k_lo, k_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if neg(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Bracket::new(lo, hi, format!("{what}: bisection, lower side witnessed, upper side heuristic")))
}

/// Bisection bracket for the critical value of the loop class in `[k_lo, k_hi]`.
pub fn mane_bracket(model: &LagrangianModel, class: LoopClass, k_lo: f64, k_hi: f64, cfg: &ManeSearch) -> Result<Bracket> {
    let bank = SeedBank::new(model, class, cfg)?;
    let what = match class {
        LoopClass::All => "c",
        LoopClass::Contractible => "c_u",
        LoopClass::Nullhomologous => "c_0",
    };
    let mut b = bisect(|k| Ok(bank.best(k).is_some()), k_lo, k_hi, cfg.tol, what)?;
    if model.sigma_is_exact() {
        bound_above(&mut b, upper_cap(model), "e0 + |theta|^2/(4a)");
    }
    Ok(b)
}

/// Replace a heuristic upper side by a proven upper bound, or tighten a proven one.
fn bound_above(b: &mut Bracket, bound: f64, label: &str) {
    let proven = b.method.contains("proven");
    if !bound.is_finite() || (proven && bound >= b.hi) {
        return;
    }
    b.hi = bound.max(b.lo);
    let head = b.method.split(':').next().unwrap_or("").to_string();
    b.method = format!("{head}: lower side witnessed by a path of negative value, upper side proven ({label})");
}

/// Straight open path from `a` to `b` (lifted coordinates) with about `spacing` chart spacing.
fn connector(a: ChartPoint, b: Vec2, spacing: f64, max_nodes: usize) -> Vec<ChartPoint> {
    let d = b - a.q;
    let n = ((d.norm() / spacing).ceil() as usize).clamp(2, max_nodes);
    (0..=n).map(|i| ChartPoint { chart: a.chart, q: a.q + d * (i as f64 / n as f64) }).collect()
}

fn open_profile(model: &LagrangianModel, nodes: Vec<ChartPoint>, q0: &Submanifold, q1: &Submanifold) -> Option<(DiscretePath, PeriodProfile)> {
    let p = DiscretePath { nodes, period: 1.0, boundary: BoundarySpec::conormal(q0.clone(), q1.clone()) };
    let prof = PeriodProfile::of(model, &p, 0.0).ok()?;
    Some((p, prof))
}

/// Whether a `Q0 -> Q1` path of negative action is found at energy `k`.
fn k0_negative(model: &LagrangianModel, q0: &Submanifold, q1: &Submanifold, k: f64, cfg: &ManeSearch, bank: &SeedBank) -> bool {
    let s = &model.surface;
    let spacing = cfg.spacing * s.injectivity_scale();
    let starts: Vec<ChartPoint> = if q0.is_point() { vec![q0.reference_point()] } else { (0..16).map(|i| q0.point_at(s, i as f64 / 16.0)).collect() };
    let ends: Vec<ChartPoint> = if q1.is_point() { vec![q1.reference_point()] } else { (0..16).map(|i| q1.point_at(s, i as f64 / 16.0)).collect() };
    let shifts: Vec<Vec2> = match s.lattice() {
        Some((lx, ly)) => {
            let w = 4;
            (-w..=w).flat_map(|m| (-w..=w).map(move |n| Vec2::new(m as f64 * lx, n as f64 * ly))).collect()
        }
        None => vec![Vec2::zeros()],
    };
    let neg = |prof: &PeriodProfile| PeriodProfile { b: prof.b + k, ..*prof }.infimum().1 < 0.0;
    for a in &starts {
        for b in &ends {
            for sh in &shifts {
                let target = s.express_in(*b, a.chart) + sh;
                if let Some((_, prof)) = open_profile(model, connector(*a, target, spacing, cfg.max_nodes), q0, q1) {
                    if neg(&prof) {
                        return true;
                    }
                }
            }
        }
    }
    // connectors through the windings of a negative loop
    let Some(w) = bank.best(k) else {
        return false;
    };
    let lp = &w.path;
    let base = lp.nodes[0];
    let lift = lp.lifted(s);
    let loop_nodes = &lift[..lift.len() - 1];
    let loop_period = if w.path.period.is_finite() { w.path.period } else { 1e3 };
    let a = starts[0];
    let b = ends[0];
    let a_q = a.q;
    let base_q = if s.lattice().is_some() { a_q + s.displacement(a, base) } else { s.express_in(base, a.chart) };
    let b_q = if s.lattice().is_some() { base_q + s.displacement(base, b) } else { s.express_in(b, a.chart) };
    let seg1 = connector(a, base_q, spacing, cfg.max_nodes);
    let seg2 = connector(ChartPoint { chart: a.chart, q: base_q }, b_q, spacing, cfg.max_nodes);
    let piece_period = |nodes: &[ChartPoint]| -> f64 {
        if nodes.len() < 2 || nodes.iter().all(|p| (p.q - nodes[0].q).norm() == 0.0) {
            return 0.0;
        }
        open_profile(model, nodes.to_vec(), &Submanifold::Point { at: nodes[0] }, &Submanifold::Point { at: *nodes.last().unwrap_or(&nodes[0]) })
            .map(|(_, pr)| {
                let t = PeriodProfile { b: pr.b + k, ..pr }.infimum().0;
                if t.is_finite() { t } else { 1.0 }
            })
            .unwrap_or(1.0)
    };
    let (t1, t2) = (piece_period(&seg1), piece_period(&seg2));
    for d in 0..=cfg.k0_doublings {
        let reps = 1usize << d;
        let total_t = t1 + t2 + reps as f64 * loop_period;
        // common time step: the loop keeps its resolution
        let dt = loop_period / loop_nodes.len() as f64;
        let n1 = ((t1 / dt).round() as usize).max(1);
        let n2 = ((t2 / dt).round() as usize).max(1);
        let total_nodes = n1 + n2 + reps * loop_nodes.len();
        if total_nodes > cfg.max_nodes {
            break;
        }
        let mut nodes: Vec<ChartPoint> = Vec::with_capacity(total_nodes + 1);
        let resample = |seg: &[ChartPoint], n: usize, out: &mut Vec<ChartPoint>| {
            let (p, q) = (seg[0].q, seg[seg.len() - 1].q);
            for i in 0..n {
                out.push(ChartPoint { chart: a.chart, q: p + (q - p) * (i as f64 / n as f64) });
            }
        };
        resample(&seg1, n1, &mut nodes);
        for _ in 0..reps {
            for q in loop_nodes {
                nodes.push(ChartPoint { chart: a.chart, q: q - loop_nodes[0] + base_q });
            }
        }
        resample(&seg2, n2, &mut nodes);
        nodes.push(ChartPoint { chart: a.chart, q: b_q });
        let p = DiscretePath { nodes, period: total_t, boundary: BoundarySpec::conormal(q0.clone(), q1.clone()) };
        if p.nodes.iter().any(|n| s.check(*n).is_err()) {
            continue;
        }
        if let Ok(v) = action(model, &p, k) {
            let (_, best) = optimal_period(|t| action(model, &DiscretePath { period: t, ..p.clone() }, k).ok(), 1e-3 * total_t.max(1e-3), 1e3 * total_t.max(1e-3));
            if v.min(best) < 0.0 {
                return true;
            }
        }
    }
    false
}

/// Bracket of the `k0` proxy: infimum of `k` with no negative `Q0 -> Q1` path found.
pub fn k0_bracket(model: &LagrangianModel, q0: &Submanifold, q1: &Submanifold, k_lo: f64, k_hi: f64, cfg: &ManeSearch) -> Result<Bracket> {
    let bank = SeedBank::new(model, LoopClass::All, cfg)?;
    bisect(|k| Ok(k0_negative(model, q0, q1, k, cfg, &bank)), k_lo, k_hi, cfg.tol, "k0-proxy")
}

/// Trial potentials for the Hamiltonian upper bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialBasis {
    /// Include `x` and `y` (functions on the universal cover only: the bound then applies to `c_u`).
    pub linear: bool,
    /// Fourier modes `|m|, |n| <= fourier` on the torus.
    pub fourier: usize,
    /// Coefficient vectors tried as starting points.
    pub seeds: Vec<Vec<f64>>,
    pub grid: usize,
}

impl Default for PotentialBasis {
    fn default() -> Self {
        PotentialBasis { linear: true, fourier: 2, seeds: Vec::new(), grid: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub value: f64,
    pub coefficients: Vec<f64>,
    /// True when every trial potential is a function on the surface (bound applies to `c`, not only `c_u`).
    pub bounds_c: bool,
}

fn basis_gradients(model: &LagrangianModel, basis: &PotentialBasis, p: ChartPoint) -> Vec<Vec2> {
    let mut out = Vec::new();
    if basis.linear {
        out.push(Vec2::new(1.0, 0.0));
        out.push(Vec2::new(0.0, 1.0));
    }
    if let Some((lx, ly)) = model.surface.lattice() {
        let f = basis.fourier as i64;
        for m in -f..=f {
            for n in 0..=f {
                if n == 0 && m <= 0 {
                    continue;
                }
                let w = std::f64::consts::TAU * Vec2::new(m as f64 / lx, n as f64 / ly);
                let ph = w.dot(&p.q);
                out.push(-ph.sin() * w);
                out.push(ph.cos() * w);
            }
        }
    }
    out
}

fn hamiltonian(model: &LagrangianModel, p: ChartPoint, grads: &[Vec2], c: &[f64]) -> f64 {
    let du = grads.iter().zip(c).fold(Vec2::zeros(), |acc, (g, ci)| acc + g * *ci);
    let w = du - model.theta_at(p);
    0.5 * w.norm_squared() / model.surface.conformal_factor(p.q) + model.potential_value(p)
}

fn sup_on(model: &LagrangianModel, basis: &PotentialBasis, grid: usize, c: &[f64]) -> f64 {
    let s = &model.surface;
    let h = |p: ChartPoint| hamiltonian(model, p, &basis_gradients(model, basis, p), c);
    let mut samples: Vec<(f64, ChartPoint, f64)> = s
        .area_quadrature(grid)
        .par_iter()
        .filter(|(p, _)| s.in_working_region(*p))
        .map(|(p, w)| (h(*p), *p, (w / s.conformal_factor(p.q)).sqrt()))
        .collect();
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));
    // compass search from the largest samples: grid maxima miss peaks between nodes
    samples
        .par_iter()
        .take(8)
        .map(|&(v0, p0, step0)| {
            let (mut v, mut p, mut step) = (v0, p0, step0);
            while step > 1e-10 * (1.0 + p.q.norm()) {
                let mut moved = false;
                for d in [Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(0.0, -1.0)] {
                    let q = s.normalize(ChartPoint { chart: p.chart, q: p.q + step * d });
                    if s.check(q).is_err() || !s.in_working_region(q) {
                        continue;
                    }
                    let hv = h(q);
                    if hv > v {
                        v = hv;
                        p = q;
                        moved = true;
                        break;
                    }
                }
                if !moved {
                    step *= 0.5;
                }
            }
            v
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// `min_u sup_q H(q, d_q u)` over the trial basis, by soft-max descent at decreasing temperature.
pub fn mane_upper(model: &LagrangianModel, basis: &PotentialBasis) -> Result<UpperBound> {
    let pts: Vec<(ChartPoint, Vec<Vec2>)> = model
        .surface
        .area_quadrature(basis.grid)
        .into_iter()
        .filter(|(p, _)| model.surface.in_working_region(*p))
        .map(|(p, _)| (p, basis_gradients(model, basis, p)))
        .collect();
    if pts.is_empty() {
        return Err(MagflowError::Precondition("empty sampling grid".into()));
    }
    let dim = pts[0].1.len();
    let theta: Vec<Vec2> = pts.iter().map(|(p, _)| model.theta_at(*p)).collect();
    let lam: Vec<f64> = pts.iter().map(|(p, _)| model.surface.conformal_factor(p.q)).collect();
    let pot: Vec<f64> = pts.iter().map(|(p, _)| model.potential_value(*p)).collect();
    let h_all = |c: &[f64]| -> Vec<f64> {
        pts.iter()
            .enumerate()
            .map(|(i, (_, g))| {
                let du = g.iter().zip(c).fold(Vec2::zeros(), |acc, (gj, cj)| acc + gj * *cj);
                0.5 * (du - theta[i]).norm_squared() / lam[i] + pot[i]
            })
            .collect()
    };
    let max_of = |c: &[f64]| h_all(c).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; dim]];
    for s in &basis.seeds {
        let mut v = s.clone();
        v.resize(dim, 0.0);
        starts.push(v);
    }
    let mut best = starts
        .iter()
        .map(|c| (max_of(c), c.clone()))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::INFINITY, vec![0.0; dim]));
    if dim > 0 {
        let mut c = best.1.clone();
        let range = {
            let h = h_all(&c);
            let hi = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = h.iter().cloned().fold(f64::INFINITY, f64::min);
            (hi - lo).max(1e-3)
        };
        for stage in 0..7 {
            let beta = 10.0 * 3f64.powi(stage) / range;
            let soft = |c: &[f64]| -> (f64, Vec<f64>) {
                let h = h_all(c);
                let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = h.iter().map(|v| (beta * (v - m)).exp()).collect();
                let z: f64 = w.iter().sum();
                let val = m + z.ln() / beta;
                let mut g = vec![0.0; dim];
                for (i, (_, gr)) in pts.iter().enumerate() {
                    let wi = w[i] / z;
                    if wi < 1e-16 {
                        continue;
                    }
                    let du = gr.iter().zip(c).fold(Vec2::zeros(), |acc, (gj, cj)| acc + gj * *cj);
                    let r = (du - theta[i]) / lam[i];
                    for j in 0..dim {
                        g[j] += wi * r.dot(&gr[j]);
                    }
                }
                (val, g)
            };
            let mut step = 1.0;
            let (mut val, mut g) = soft(&c);
            for _ in 0..200 {
                let gn2: f64 = g.iter().map(|v| v * v).sum();
                if gn2 < 1e-24 {
                    break;
                }
                let mut accepted = false;
                while step > 1e-12 {
                    let trial: Vec<f64> = c.iter().zip(&g).map(|(ci, gi)| ci - step * gi).collect();
                    let (tv, tg) = soft(&trial);
                    if tv <= val - 1e-4 * step * gn2 {
                        c = trial;
                        val = tv;
                        g = tg;
                        accepted = true;
                        step *= 2.0;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            let m = max_of(&c);
            if m < best.0 {
                best = (m, c.clone());
            }
        }
    }
    // rigorous side: evaluate the chosen potential on a finer grid
    let value = sup_on(model, basis, 2 * basis.grid, &best.1).max(best.0);
    Ok(UpperBound { value, coefficients: best.1, bounds_c: !basis.linear })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalValueReport {
    pub e0: f64,
    pub cu: Bracket,
    pub c: Bracket,
    pub k0: Option<Bracket>,
    pub upper_cap: f64,
    pub k_q: Option<(f64, f64)>,
    pub tau_plus: Option<Bracket>,
    pub mane_upper: Option<f64>,
    pub notes: Vec<String>,
}

impl CriticalValueReport {
    /// `(quantity, bracket)` rows for tabular output.
    pub fn rows(&self) -> Vec<(String, Bracket)> {
        let mut rows = vec![
            ("e0".to_string(), Bracket::new(self.e0, self.e0, "max of V on a grid with local refinement")),
            ("c_u".to_string(), self.cu.clone()),
            ("c".to_string(), self.c.clone()),
        ];
        if let Some(b) = &self.k0 {
            rows.push(("k0".to_string(), b.clone()));
        }
        rows.push(("upper_cap".to_string(), Bracket::new(self.upper_cap, self.upper_cap, "e0 + |theta|^2/(4a)")));
        if let Some((lo, hi)) = self.k_q {
            rows.push(("k_Q-".to_string(), Bracket::new(lo, lo, "min E(q,0) + max |theta_q|^2/(4a) on Q0∩Q1")));
            rows.push(("k_Q".to_string(), Bracket::new(hi, hi, "max E(q,0) + max |theta_q|^2/(4a) on Q0∩Q1")));
        }
        if let Some(b) = &self.tau_plus {
            rows.push(("tau_plus".to_string(), b.clone()));
        }
        rows
    }

    /// Pairwise chain checks `e0 <= c_u <= c <= k0 <= cap`, bracket-aware with slack `tol`.
    pub fn chain_checks(&self, tol: f64) -> Vec<(String, bool)> {
        let mut out = vec![
            ("e0 <= c_u".to_string(), self.e0 <= self.cu.hi + tol),
            ("c_u <= c".to_string(), self.cu.lo <= self.c.hi + tol),
        ];
        match &self.k0 {
            Some(k0) => {
                out.push(("c <= k0".to_string(), self.c.lo <= k0.hi + tol));
                out.push(("k0 <= cap".to_string(), k0.lo <= self.upper_cap + tol));
            }
            None => out.push(("c <= cap".to_string(), self.c.lo <= self.upper_cap + tol)),
        }
        for (name, b) in [("c_u", &self.cu), ("c", &self.c)] {
            out.push((format!("{name} bracket ordered"), b.lo <= b.hi));
        }
        out
    }
}

pub fn chain_consistent(report: &CriticalValueReport, tol: f64) -> bool {
    report.chain_checks(tol).iter().all(|(_, ok)| *ok)
}

/// Assemble all critical-value estimates of a model.
pub fn critical_value_report(
    model: &LagrangianModel,
    boundary: Option<(&Submanifold, &Submanifold)>,
    search: &ManeSearch,
    basis: Option<&PotentialBasis>,
    taimanov: Option<&TaimanovSearch>,
) -> Result<CriticalValueReport> {
    let e = e0(model);
    let cap = upper_cap(model);
    let mut notes = Vec::new();
    let k_lo = e - 0.05 * (1.0 + e.abs());
    let k_hi = if cap.is_finite() { cap + 0.05 * (1.0 + cap.abs()) } else { e + 10.0 };
    let upper = match basis {
        Some(b) if !model.has_extra_sigma() => Some(mane_upper(model, b)?),
        _ => None,
    };
    let mut cu = mane_bracket(model, LoopClass::Contractible, k_lo, k_hi, search)?;
    let mut c = mane_bracket(model, LoopClass::All, k_lo, k_hi, search)?;
    if let Some(u) = &upper {
        bound_above(&mut cu, u.value, "trial potential");
        if u.bounds_c {
            bound_above(&mut c, u.value, "trial potential");
        }
    }
    let exact = model.sigma_is_exact();
    if !exact {
        notes.push("extra two-form is not exact: loops of arbitrarily negative value exist".into());
    }
    let (k0, kq) = match boundary {
        Some((q0, q1)) if !exact => (
            Some(Bracket::new(c.lo, f64::INFINITY, "k0-proxy: bounded below by c (extra two-form not exact)")),
            k_q(model, q0, q1).ok(),
        ),
        Some((q0, q1)) => {
            let kq = k_q(model, q0, q1).ok();
            let mut b = k0_bracket(model, q0, q1, k_lo, k_hi, search)?;
            bound_above(&mut b, cap, "e0 + |theta|^2/(4a)");
            (Some(b), kq)
        }
        None => (None, None),
    };
    let tau = match taimanov {
        Some(t) => Some(tau_plus_bracket(model, t)?),
        None => None,
    };
    Ok(CriticalValueReport {
        e0: e,
        cu,
        c,
        k0,
        upper_cap: cap,
        k_q: kq,
        tau_plus: tau,
        mane_upper: upper.map(|u| u.value),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperbolic_circle_parametrisation_is_uniform() {
        let (x0, c, r) = (0.0, 1.0, 1.3);
        let n = 400;
        let pts: Vec<Vec2> = (0..n).map(|i| hyperbolic_circle_point(x0, c, r, i as f64 / n as f64)).collect();
        // distance to the centre is r everywhere: cosh d = 1 + |p - q|^2 / (2 y_p y_q)
        for p in &pts {
            let d2 = (p.x - x0).powi(2) + (p.y - c).powi(2);
            let d = (1.0 + d2 / (2.0 * p.y * c)).acosh();
            assert!((d - r).abs() < 1e-12);
        }
        let seg = |i: usize| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            let ym = 0.5 * (a.y + b.y);
            (b - a).norm() / ym
        };
        let (s0, s1) = (seg(0), seg(n / 2));
        assert!((s0 - s1).abs() < 1e-3 * s0);
    }
}
