//! Discrete free-time paths, the action, the action one-form `eta_k` and its Sobolev gradient.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::LagrangianModel;
use crate::error::{MagflowError, Result};
use crate::linalg::{solve_cyclic_tridiagonal, BandMatrix};
use crate::surface::{ChartPoint, HomotopyClass, SurfaceModel, Vec2};

/// Boundary submanifolds for conormal problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Submanifold {
    Point { at: ChartPoint },
    HorizontalLine { y: f64 },
    VerticalLine { x: f64 },
    /// Euclidean chart circle.
    Circle { center: ChartPoint, radius: f64 },
}

impl Submanifold {
    pub fn reference_point(&self) -> ChartPoint {
        match self {
            Submanifold::Point { at } => *at,
            Submanifold::HorizontalLine { y } => ChartPoint::new(0.0, *y),
            Submanifold::VerticalLine { x } => ChartPoint::new(*x, 0.0),
            Submanifold::Circle { center, radius } => {
                ChartPoint { chart: center.chart, q: center.q + Vec2::new(*radius, 0.0) }
            }
        }
    }

    /// Closed-curve parametrisation over `t in [0, 1)`.
    pub fn point_at(&self, surface: &SurfaceModel, t: f64) -> ChartPoint {
        match self {
            Submanifold::Point { at } => *at,
            Submanifold::HorizontalLine { y } => {
                let span = match surface {
                    SurfaceModel::FlatTorus { lx, .. } => *lx,
                    SurfaceModel::HyperbolicHalfPlane { bbox } => bbox.x_max - bbox.x_min,
                    SurfaceModel::RoundSphere { .. } => 1.0,
                };
                let x0 = match surface {
                    SurfaceModel::HyperbolicHalfPlane { bbox } => bbox.x_min,
                    _ => 0.0,
                };
                ChartPoint::new(x0 + t * span, *y)
            }
            Submanifold::VerticalLine { x } => {
                let (y0, span) = match surface {
                    SurfaceModel::FlatTorus { ly, .. } => (0.0, *ly),
                    SurfaceModel::HyperbolicHalfPlane { bbox } => (bbox.y_min, bbox.y_max - bbox.y_min),
                    SurfaceModel::RoundSphere { .. } => (0.0, 1.0),
                };
                ChartPoint::new(*x, y0 + t * span)
            }
            Submanifold::Circle { center, radius } => {
                let a = std::f64::consts::TAU * t;
                surface.normalize(ChartPoint {
                    chart: center.chart,
                    q: center.q + *radius * Vec2::new(a.cos(), a.sin()),
                })
            }
        }
    }

    /// Tangent direction of `Q` at `p` in `p`'s chart, `None` for a point.
    pub fn tangent(&self, surface: &SurfaceModel, p: ChartPoint) -> Option<Vec2> {
        match self {
            Submanifold::Point { .. } => None,
            Submanifold::HorizontalLine { .. } => Some(Vec2::new(1.0, 0.0)),
            Submanifold::VerticalLine { .. } => Some(Vec2::new(0.0, 1.0)),
            Submanifold::Circle { center, .. } => {
                let qc = surface.express_in(p, center.chart);
                let r = qc - center.q;
                let t = Vec2::new(-r.y, r.x);
                let back = ChartPoint { chart: center.chart, q: qc };
                let j = surface.transition_jacobian(back, p.chart);
                Some((j * t).normalize())
            }
        }
    }

    /// Closest point of `Q` (in the chart sense) to `p`.
    pub fn project(&self, surface: &SurfaceModel, p: ChartPoint) -> ChartPoint {
        match self {
            Submanifold::Point { at } => {
                // keep the lift of the given point on the torus
                match surface.lattice() {
                    Some(_) => ChartPoint { chart: p.chart, q: p.q + surface.displacement(p, *at) },
                    None => *at,
                }
            }
            Submanifold::HorizontalLine { y } => {
                let yy = match surface.lattice() {
                    Some((_, ly)) => y + ly * ((p.q.y - y) / ly).round(),
                    None => *y,
                };
                ChartPoint { chart: p.chart, q: Vec2::new(p.q.x, yy) }
            }
            Submanifold::VerticalLine { x } => {
                let xx = match surface.lattice() {
                    Some((lx, _)) => x + lx * ((p.q.x - x) / lx).round(),
                    None => *x,
                };
                ChartPoint { chart: p.chart, q: Vec2::new(xx, p.q.y) }
            }
            Submanifold::Circle { center, radius } => {
                let c_lift = match surface.lattice() {
                    Some(_) => p.q + surface.displacement(p, *center),
                    None => center.q,
                };
                let qc = if surface.lattice().is_some() { p.q } else { surface.express_in(p, center.chart) };
                let r = qc - c_lift;
                let n = r.norm();
                let dir = if n > 0.0 { r / n } else { Vec2::new(1.0, 0.0) };
                let on = ChartPoint { chart: center.chart, q: c_lift + *radius * dir };
                if surface.is_sphere() {
                    surface.normalize(on)
                } else {
                    on
                }
            }
        }
    }

    pub fn distance(&self, surface: &SurfaceModel, p: ChartPoint) -> f64 {
        surface.chart_distance(p, self.project(surface, p))
    }

    /// Generator of the image of `pi_1(Q)` in the torus lattice.
    pub fn subgroup_generator(&self) -> Option<[i64; 2]> {
        match self {
            Submanifold::HorizontalLine { .. } => Some([1, 0]),
            Submanifold::VerticalLine { .. } => Some([0, 1]),
            _ => None,
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, Submanifold::Point { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundarySpec {
    Periodic,
    Conormal { q0: Submanifold, q1: Submanifold, subgroup: Vec<[i64; 2]> },
}

impl BoundarySpec {
    pub fn conormal(q0: Submanifold, q1: Submanifold) -> Self {
        let subgroup = [q0.subgroup_generator(), q1.subgroup_generator()].into_iter().flatten().collect();
        BoundarySpec::Conormal { q0, q1, subgroup }
    }
}

/// Discrete free-time path: nodes at `s = i / N` and a period `T > 0`.
/// Loops store `N` nodes (the closing segment is implicit); open paths store `N + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub nodes: Vec<ChartPoint>,
    pub period: f64,
    pub boundary: BoundarySpec,
}

/// Tangent vector to path space: node displacements (node charts) and a period component.
#[derive(Clone, Debug, PartialEq)]
pub struct PathTangent {
    pub nodes: Vec<Vec2>,
    pub dt: f64,
}

/// Covector on path space, dual to [`PathTangent`].
#[derive(Clone, Debug, PartialEq)]
pub struct CovectorField {
    pub nodes: Vec<Vec2>,
    pub dt: f64,
}

impl CovectorField {
    pub fn pair(&self, xi: &PathTangent) -> f64 {
        self.nodes.iter().zip(&xi.nodes).map(|(a, b)| a.dot(b)).sum::<f64>() + self.dt * xi.dt
    }

    pub fn add_assign(&mut self, other: &CovectorField) {
        for (a, b) in self.nodes.iter_mut().zip(&other.nodes) {
            *a += b;
        }
        self.dt += other.dt;
    }
}

impl PathTangent {
    pub fn zeros(n: usize) -> Self {
        PathTangent { nodes: vec![Vec2::zeros(); n], dt: 0.0 }
    }

    pub fn scaled(&self, s: f64) -> PathTangent {
        PathTangent { nodes: self.nodes.iter().map(|v| v * s).collect(), dt: self.dt * s }
    }

    pub fn axpy(&mut self, s: f64, other: &PathTangent) {
        for (a, b) in self.nodes.iter_mut().zip(&other.nodes) {
            *a += s * b;
        }
        self.dt += s * other.dt;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PathMetric {
    L2,
    #[default]
    H1,
}

impl DiscretePath {
    pub fn closed(nodes: Vec<ChartPoint>, period: f64) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(MagflowError::Resolution(format!("a loop needs at least 3 nodes, got {}", nodes.len())));
        }
        check_period(period)?;
        Ok(DiscretePath { nodes, period, boundary: BoundarySpec::Periodic })
    }

    pub fn open(nodes: Vec<ChartPoint>, period: f64, q0: Submanifold, q1: Submanifold) -> Result<Self> {
        if nodes.len() < 4 {
            return Err(MagflowError::Resolution(format!("an open path needs at least 4 nodes, got {}", nodes.len())));
        }
        check_period(period)?;
        Ok(DiscretePath { nodes, period, boundary: BoundarySpec::conormal(q0, q1) })
    }

    /// Validate endpoint placement against the boundary submanifolds.
    pub fn validate(&self, surface: &SurfaceModel) -> Result<()> {
        for p in &self.nodes {
            surface.check(*p)?;
        }
        if let BoundarySpec::Conormal { q0, q1, .. } = &self.boundary {
            let n = self.nodes.len() - 1;
            for (q, p) in [(q0, self.nodes[0]), (q1, self.nodes[n])] {
                let d = q.distance(surface, p);
                if d > 1e-8 {
                    return Err(MagflowError::Precondition(format!("endpoint {:?} is {d} away from {q:?}", p.q)));
                }
            }
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.boundary, BoundarySpec::Periodic)
    }

    pub fn segment_count(&self) -> usize {
        if self.is_closed() {
            self.nodes.len()
        } else {
            self.nodes.len() - 1
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.segment_count() as f64
    }

    pub fn segment_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.nodes.len();
        let closed = self.is_closed();
        (0..self.segment_count()).map(move |i| (i, if closed { (i + 1) % n } else { i + 1 }))
    }

    pub fn segments(&self) -> impl Iterator<Item = (ChartPoint, ChartPoint)> + '_ {
        self.segment_indices().map(|(i, j)| (self.nodes[i], self.nodes[j]))
    }

    /// Constant path (all nodes at `p`).
    pub fn constant_loop(p: ChartPoint, nodes: usize, period: f64) -> Result<Self> {
        DiscretePath::closed(vec![p; nodes], period)
    }

    /// Offsets of nodes `idx` from node `base`, in `base`'s chart, following the path for the torus lift.
    fn offsets(&self, surface: &SurfaceModel, base: usize, steps: &[isize]) -> Vec<Vec2> {
        let n = self.nodes.len() as isize;
        let b = self.nodes[base];
        steps
            .iter()
            .map(|&s| {
                if surface.lattice().is_some() {
                    let mut acc = Vec2::zeros();
                    let dir = s.signum();
                    let mut cur = base as isize;
                    for _ in 0..s.abs() {
                        let next = (cur + dir).rem_euclid(n);
                        acc += surface.displacement(self.nodes[cur as usize], self.nodes[next as usize]);
                        cur = next;
                    }
                    acc
                } else {
                    let j = (base as isize + s).rem_euclid(n) as usize;
                    surface.express_in(self.nodes[j], b.chart) - b.q
                }
            })
            .collect()
    }

    /// Endpoint velocities (third-order one-sided differences) of an open path.
    pub fn endpoint_velocities(&self, surface: &SurfaceModel) -> Result<(Vec2, Vec2)> {
        if self.is_closed() {
            return Err(MagflowError::Precondition("endpoint velocities need an open path".into()));
        }
        let ht = self.h() * self.period;
        let last = self.nodes.len() - 1;
        let d = self.offsets(surface, 0, &[1, 2, 3]);
        let e = self.offsets(surface, last, &[-1, -2, -3]);
        let v0 = (18.0 * d[0] - 9.0 * d[1] + 2.0 * d[2]) / (6.0 * ht);
        let v1 = -(18.0 * e[0] - 9.0 * e[1] + 2.0 * e[2]) / (6.0 * ht);
        Ok((v0, v1))
    }

    /// Position and velocity at `s = 0` (fourth-order central differences for loops).
    pub fn initial_condition(&self, surface: &SurfaceModel) -> Result<(ChartPoint, Vec2)> {
        if self.is_closed() {
            let ht = self.h() * self.period;
            let d = self.offsets(surface, 0, &[1, -1, 2, -2]);
            let v = (8.0 * (d[0] - d[1]) - (d[2] - d[3])) / (12.0 * ht);
            Ok((self.nodes[0], v))
        } else {
            Ok((self.nodes[0], self.endpoint_velocities(surface)?.0))
        }
    }

    /// Riemannian length over `s in [0, 1]`.
    pub fn length(&self, surface: &SurfaceModel) -> f64 {
        self.segments().map(|(a, b)| surface.chart_distance(a, b)).sum()
    }

    /// Kinetic energy `int_0^1 |x'|^2 ds`.
    pub fn kinetic(&self, surface: &SurfaceModel) -> f64 {
        let h = self.h();
        self.segments().map(|(a, b)| surface.chart_distance(a, b).powi(2) / h).sum()
    }

    /// Resample uniformly in `s` by piecewise-linear interpolation to `n` segments.
    pub fn resample(&self, surface: &SurfaceModel, n: usize) -> Result<DiscretePath> {
        let m = self.segment_count();
        let count = if self.is_closed() { n } else { n + 1 };
        let mut nodes = Vec::with_capacity(count);
        for i in 0..count {
            let s = i as f64 / n as f64 * m as f64;
            let seg = (s.floor() as usize).min(m - 1);
            let t = s - seg as f64;
            let a = self.nodes[seg];
            let b = self.nodes[if self.is_closed() { (seg + 1) % self.nodes.len() } else { seg + 1 }];
            let q = a.q + t * surface.displacement(a, b);
            nodes.push(surface.normalize(ChartPoint { chart: a.chart, q }));
        }
        if !self.is_closed() {
            nodes[count - 1] = *self.nodes.last().expect("nodes");
        }
        Ok(DiscretePath { nodes, period: self.period, boundary: self.boundary.clone() })
    }

    /// Resample a loop at constant Riemannian speed.
    pub fn reparametrize_by_length(&self, surface: &SurfaceModel, n: usize) -> Result<DiscretePath> {
        let segs: Vec<(ChartPoint, ChartPoint)> = self.segments().collect();
        let lens: Vec<f64> = segs.iter().map(|(a, b)| surface.chart_distance(*a, *b)).collect();
        let total: f64 = lens.iter().sum();
        if total <= 0.0 {
            return self.resample(surface, n);
        }
        let count = if self.is_closed() { n } else { n + 1 };
        let mut nodes = Vec::with_capacity(count);
        let (mut seg, mut acc) = (0usize, 0.0);
        for i in 0..count {
            let target = total * i as f64 / n as f64;
            while seg + 1 < segs.len() && acc + lens[seg] < target {
                acc += lens[seg];
                seg += 1;
            }
            let (a, b) = segs[seg];
            let t = if lens[seg] > 0.0 { ((target - acc) / lens[seg]).clamp(0.0, 1.0) } else { 0.0 };
            nodes.push(surface.normalize(ChartPoint { chart: a.chart, q: a.q + t * surface.displacement(a, b) }));
        }
        if !self.is_closed() {
            nodes[count - 1] = *self.nodes.last().expect("nodes");
        }
        Ok(DiscretePath { nodes, period: self.period, boundary: self.boundary.clone() })
    }

    /// Lifted node coordinates (torus lift / chart of node 0), one per node plus the closing node for loops.
    pub fn lifted(&self, surface: &SurfaceModel) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.nodes.len() + 1);
        let base = self.nodes[0];
        let mut acc = base.q;
        out.push(acc);
        for (a, b) in self.segments() {
            if surface.lattice().is_some() {
                acc += surface.displacement(a, b);
            } else {
                acc = surface.express_in(b, base.chart);
            }
            out.push(acc);
        }
        out
    }

    pub fn homotopy_class(&self, surface: &SurfaceModel) -> Result<HomotopyClass> {
        surface.homotopy_class(self)
    }

    /// Node-wise displacement from `self` to `other` (same node count).
    pub fn difference(&self, surface: &SurfaceModel, other: &DiscretePath) -> PathTangent {
        PathTangent {
            nodes: self.nodes.iter().zip(&other.nodes).map(|(a, b)| surface.displacement(*a, *b)).collect(),
            dt: other.period - self.period,
        }
    }

    /// Move along a tangent; open endpoints are re-projected onto their submanifolds.
    pub fn apply(&self, surface: &SurfaceModel, xi: &PathTangent, scale: f64) -> Result<DiscretePath> {
        let mut nodes: Vec<ChartPoint> = self
            .nodes
            .iter()
            .zip(&xi.nodes)
            .map(|(p, d)| surface.normalize(ChartPoint { chart: p.chart, q: p.q + scale * d }))
            .collect();
        if let BoundarySpec::Conormal { q0, q1, .. } = &self.boundary {
            let n = nodes.len() - 1;
            nodes[0] = q0.project(surface, nodes[0]);
            nodes[n] = q1.project(surface, nodes[n]);
        }
        for p in &nodes {
            surface.check(*p)?;
            if !surface.in_working_region(*p) {
                return Err(MagflowError::Domain(format!("node {:?} left the working region", p.q)));
            }
        }
        let dt = scale * xi.dt;
        let period = if dt >= 0.0 { self.period + dt } else { self.period * (dt / self.period).exp() };
        Ok(DiscretePath { nodes, period, boundary: self.boundary.clone() })
    }

    /// Linear interpolation `self + t (other - self)`.
    pub fn interpolate(&self, surface: &SurfaceModel, other: &DiscretePath, t: f64) -> Result<DiscretePath> {
        let d = self.difference(surface, other);
        let mut out = self.apply(surface, &PathTangent { nodes: d.nodes, dt: 0.0 }, t)?;
        out.period = self.period + t * (other.period - self.period);
        Ok(out)
    }

    /// Basis of admissible node displacements (columns, chart coordinates).
    pub fn node_basis(&self, surface: &SurfaceModel, i: usize) -> Vec<Vec2> {
        let BoundarySpec::Conormal { q0, q1, .. } = &self.boundary else {
            return vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        };
        let last = self.nodes.len() - 1;
        let q = if i == 0 {
            q0
        } else if i == last {
            q1
        } else {
            return vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        };
        match q.tangent(surface, self.nodes[i]) {
            None => vec![],
            Some(t) => vec![t.normalize()],
        }
    }

    pub fn write_csv(&self, path: &Path, k: f64) -> Result<()> {
        let mut file = File::create(path)?;
        writeln!(
            file,
            "# T={:.17e} k={:.17e} boundary={}",
            self.period,
            k,
            serde_json::to_string(&self.boundary)?
        )?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["s", "x", "y", "chart"])?;
        let n = self.segment_count();
        let mut rows: Vec<ChartPoint> = self.nodes.clone();
        if self.is_closed() {
            rows.push(self.nodes[0]);
        }
        for (i, p) in rows.iter().enumerate() {
            w.write_record(&[
                format!("{:.17e}", i as f64 / n as f64),
                format!("{:.17e}", p.q.x),
                format!("{:.17e}", p.q.y),
                p.chart.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a path written by [`DiscretePath::write_csv`]; returns the path and the stored `k`.
    pub fn read_csv(path: &Path) -> Result<(DiscretePath, f64)> {
        let file = File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim();
        let rest = header
            .strip_prefix("# ")
            .ok_or_else(|| MagflowError::Config(format!("missing path header in {}", path.display())))?;
        let mut period = None;
        let mut k = None;
        let mut boundary = None;
        let (head, bspec) = rest
            .split_once(" boundary=")
            .ok_or_else(|| MagflowError::Config("path header lacks boundary".into()))?;
        boundary = boundary.or(Some(serde_json::from_str::<BoundarySpec>(bspec)?));
        for tok in head.split_whitespace() {
            if let Some(v) = tok.strip_prefix("T=") {
                period = v.parse::<f64>().ok();
            } else if let Some(v) = tok.strip_prefix("k=") {
                k = v.parse::<f64>().ok();
            }
        }
        let period = period.ok_or_else(|| MagflowError::Config("path header lacks T".into()))?;
        let k = k.ok_or_else(|| MagflowError::Config("path header lacks k".into()))?;
        let boundary = boundary.expect("parsed above");
        let mut rdr = csv::Reader::from_reader(reader);
        let mut nodes = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| MagflowError::Config(format!("bad path row {rec:?}")))
            };
            let chart = field(3)? as u8;
            nodes.push(ChartPoint::in_chart(chart, field(1)?, field(2)?));
        }
        if matches!(boundary, BoundarySpec::Periodic) {
            nodes.pop();
        }
        check_period(period)?;
        Ok((DiscretePath { nodes, period, boundary }, k))
    }
}

fn check_period(period: f64) -> Result<()> {
    if period > 0.0 && period.is_finite() {
        Ok(())
    } else {
        Err(MagflowError::Precondition(format!("period must be positive, got {period}")))
    }
}

/// Per-segment data shared by the action and its differential.
struct SegmentEval {
    value: f64,
    da: Vec2,
    db: Vec2,
    dt: f64,
}

fn segment_eval(model: &LagrangianModel, a: ChartPoint, b: ChartPoint, h: f64, period: f64, k: f64) -> SegmentEval {
    let s = &model.surface;
    let delta = s.displacement(a, b);
    let qb = ChartPoint { chart: a.chart, q: a.q + delta };
    let ht = h * period;
    let v = delta / ht;
    let la = model.lagrangian_unchecked(a, v);
    let lb = model.lagrangian_unchecked(qb, v);
    let ea = model.energy_unchecked(a, v);
    let eb = model.energy_unchecked(qb, v);
    let pv = 0.5 * (model.fiber_unchecked(a, v) + model.fiber_unchecked(qb, v));
    let da = 0.5 * ht * model.base_unchecked(a, v) - pv;
    let db_a = 0.5 * ht * model.base_unchecked(qb, v) + pv;
    let j = s.transition_jacobian(b, a.chart);
    SegmentEval {
        value: ht * (0.5 * (la + lb) + k),
        da,
        db: j.transpose() * db_a,
        dt: h * (k - 0.5 * (ea + eb)),
    }
}

/// Discrete free-time action `A_k = T int_0^1 [L(x, x'/T) + k] ds` of `L` (including its one-form).
pub fn action(model: &LagrangianModel, path: &DiscretePath, k: f64) -> Result<f64> {
    path.validate(&model.surface)?;
    let h = path.h();
    Ok(path.segments().map(|(a, b)| segment_eval(model, a, b, h, path.period, k).value).sum())
}

/// Differential of the plain action.
pub fn action_differential(model: &LagrangianModel, path: &DiscretePath, k: f64) -> Result<CovectorField> {
    path.validate(&model.surface)?;
    Ok(action_differential_unchecked(model, path, k))
}

fn action_differential_unchecked(model: &LagrangianModel, path: &DiscretePath, k: f64) -> CovectorField {
    let h = path.h();
    let mut out = CovectorField { nodes: vec![Vec2::zeros(); path.nodes.len()], dt: 0.0 };
    for (i, j) in path.segment_indices() {
        let e = segment_eval(model, path.nodes[i], path.nodes[j], h, path.period, k);
        out.nodes[i] += e.da;
        out.nodes[j] += e.db;
        out.dt += e.dt;
    }
    out
}

/// Magnetic term `xi -> int sigma(xi, x') ds` of the extra two-form.
pub fn sigma_term(model: &LagrangianModel, path: &DiscretePath) -> CovectorField {
    let mut out = CovectorField { nodes: vec![Vec2::zeros(); path.nodes.len()], dt: 0.0 };
    if !model.has_extra_sigma() {
        return out;
    }
    let s = &model.surface;
    for (i, j) in path.segment_indices() {
        let (a, b) = (path.nodes[i], path.nodes[j]);
        let d = s.displacement(a, b);
        let mid = ChartPoint { chart: a.chart, q: a.q + 0.5 * d };
        let comp = model.sigma_density(mid) * s.conformal_factor(mid.q);
        let c = comp * Vec2::new(d.y, -d.x);
        out.nodes[i] += 0.5 * c;
        out.nodes[j] += 0.5 * s.transition_jacobian(b, a.chart).transpose() * c;
    }
    out
}

/// Action one-form `eta_k = dA_k + tau^sigma`.
pub fn eta_k(model: &LagrangianModel, path: &DiscretePath, k: f64) -> Result<CovectorField> {
    path.validate(&model.surface)?;
    Ok(eta_unchecked(model, path, k))
}

pub(crate) fn eta_unchecked(model: &LagrangianModel, path: &DiscretePath, k: f64) -> CovectorField {
    let mut eta = action_differential_unchecked(model, path, k);
    if model.has_extra_sigma() {
        eta.add_assign(&sigma_term(model, path));
    }
    eta
}

/// `oint theta_sigma` along the lift with the radial primitive of the extra two-form
/// (equals the flux through the capping disc of the lift / chart).
pub fn capping_integral(model: &LagrangianModel, path: &DiscretePath) -> Result<f64> {
    if !model.has_extra_sigma() {
        return Ok(0.0);
    }
    if !path.is_closed() {
        return Err(MagflowError::Precondition("capping integral needs a loop".into()));
    }
    let s = &model.surface;
    let chart = path.nodes[0].chart;
    let lift = path.lifted(s);
    if let Some((lx, ly)) = s.lattice() {
        let gap = lift[lift.len() - 1] - lift[0];
        if gap.x.abs() > 1e-9 * lx || gap.y.abs() > 1e-9 * ly {
            return Err(MagflowError::Precondition("capping integral needs a contractible loop".into()));
        }
    }
    let gauss = [(0.5 - 0.5 * (0.6f64).sqrt(), 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + 0.5 * (0.6f64).sqrt(), 5.0 / 18.0)];
    let mut total = 0.0;
    for w in lift.windows(2) {
        let d = w[1] - w[0];
        for &(t, wt) in &gauss {
            let p = ChartPoint { chart, q: w[0] + t * d };
            s.check(p)?;
            total += wt * model.sigma_primitive(p).dot(&d);
        }
    }
    Ok(total)
}

/// Local primitive `S_k = A_k + int_D sigma` for loops inside `V_delta` (`e(x) < delta`).
pub fn s_k_local(model: &LagrangianModel, path: &DiscretePath, k: f64, delta: f64) -> Result<f64> {
    if !path.is_closed() {
        return Err(MagflowError::Precondition("S_k is defined on loops".into()));
    }
    let e = path.kinetic(&model.surface);
    if e >= delta {
        return Err(MagflowError::Precondition(format!("loop not in V_delta: e = {e} >= {delta}")));
    }
    Ok(action(model, path, k)? + capping_integral(model, path)?)
}

/// Action of a loop including the capping term of the extra two-form on the lift, when defined.
pub fn loop_value(model: &LagrangianModel, path: &DiscretePath, k: f64) -> Result<f64> {
    let a = action(model, path, k)?;
    if !model.has_extra_sigma() {
        return Ok(a);
    }
    Ok(a + capping_integral(model, path)?)
}

/// The value of a fixed loop shape as a function of its period: `a / T + b T + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodProfile {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PeriodProfile {
    /// Exact profile of `loop_value` (loops) or `action` (open paths): the discrete action is affine in `1/T` and `T`.
    pub fn of(model: &LagrangianModel, path: &DiscretePath, k: f64) -> Result<Self> {
        let eval = |t: f64| -> Result<f64> {
            let p = DiscretePath { nodes: path.nodes.clone(), period: t, boundary: path.boundary.clone() };
            if p.is_closed() {
                loop_value(model, &p, k)
            } else {
                action(model, &p, k)
            }
        };
        let (v1, v2, v4) = (eval(1.0)?, eval(2.0)?, eval(4.0)?);
        let (d1, d2) = (v1 - v2, v2 - v4);
        let a = (8.0 * d1 - 4.0 * d2) / 3.0;
        let b = 0.5 * a - d1;
        Ok(PeriodProfile { a, b, c: v1 - a - b })
    }

    pub fn value(&self, period: f64) -> f64 {
        self.a / period + self.b * period + self.c
    }

    /// Infimum over `T > 0` and a period attaining it (or a witness period when it is `-inf`).
    pub fn infimum(&self) -> (f64, f64) {
        let a = self.a.max(0.0);
        if self.b > 0.0 {
            if a == 0.0 {
                return (0.0, self.c);
            }
            let t = (a / self.b).sqrt();
            (t, 2.0 * (a * self.b).sqrt() + self.c)
        } else if self.b < 0.0 {
            let t = 2.0 * (a + self.c.abs() + 1.0) / -self.b + (a / -self.b).sqrt();
            (t, f64::NEG_INFINITY)
        } else {
            (f64::INFINITY, self.c)
        }
    }
}

/// Node and edge weights of the discrete Sobolev metric.
struct MetricWeights {
    node: Vec<f64>,
    edge: Vec<f64>,
}

fn metric_weights(surface: &SurfaceModel, path: &DiscretePath, metric: PathMetric) -> MetricWeights {
    let h = path.h();
    let n = path.nodes.len();
    let mut node: Vec<f64> = path.nodes.iter().map(|p| h * surface.conformal_factor(p.q)).collect();
    if !path.is_closed() {
        node[0] *= 0.5;
        node[n - 1] *= 0.5;
    }
    let edge = match metric {
        PathMetric::L2 => vec![0.0; path.segment_count()],
        PathMetric::H1 => path
            .segments()
            .map(|(a, b)| {
                let mid = a.q + 0.5 * surface.displacement(a, b);
                surface.conformal_factor(mid) / h
            })
            .collect(),
    };
    MetricWeights { node, edge }
}

/// Inner product of two tangents in the product metric (Sobolev on nodes plus `dT^2`).
pub fn inner(surface: &SurfaceModel, path: &DiscretePath, a: &PathTangent, b: &PathTangent, metric: PathMetric) -> f64 {
    let w = metric_weights(surface, path, metric);
    let mut s = a.dt * b.dt;
    for (i, wi) in w.node.iter().enumerate() {
        s += wi * a.nodes[i].dot(&b.nodes[i]);
    }
    for ((i, j), we) in path.segment_indices().zip(&w.edge) {
        s += we * (a.nodes[j] - a.nodes[i]).dot(&(b.nodes[j] - b.nodes[i]));
    }
    s
}

/// Riesz representative of a covector in the product metric, restricted to admissible directions.
pub fn sharp(surface: &SurfaceModel, path: &DiscretePath, eta: &CovectorField, metric: PathMetric) -> Result<PathTangent> {
    let w = metric_weights(surface, path, metric);
    let n = path.nodes.len();
    if path.is_closed() {
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut diag = w.node.clone();
        for (s, we) in w.edge.iter().enumerate() {
            let (i, j) = (s, (s + 1) % n);
            diag[i] += we;
            diag[j] += we;
            sup[i] -= we;
            sub[j] -= we;
        }
        let rx: Vec<f64> = eta.nodes.iter().map(|v| v.x).collect();
        let ry: Vec<f64> = eta.nodes.iter().map(|v| v.y).collect();
        let (x, y) = if metric == PathMetric::L2 {
            (
                rx.iter().zip(&diag).map(|(r, d)| r / d).collect::<Vec<_>>(),
                ry.iter().zip(&diag).map(|(r, d)| r / d).collect::<Vec<_>>(),
            )
        } else {
            (
                solve_cyclic_tridiagonal(&sub, &diag, &sup, &rx)?,
                solve_cyclic_tridiagonal(&sub, &diag, &sup, &ry)?,
            )
        };
        return Ok(PathTangent { nodes: x.into_iter().zip(y).map(|(a, b)| Vec2::new(a, b)).collect(), dt: eta.dt });
    }
    // open path: reduced coordinates per node
    let bases: Vec<Vec<Vec2>> = (0..n).map(|i| path.node_basis(surface, i)).collect();
    let mut offset = vec![0usize; n + 1];
    for i in 0..n {
        offset[i + 1] = offset[i] + bases[i].len();
    }
    let dim = offset[n];
    let mut m = BandMatrix::zeros(dim, 3);
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        for (a, ba) in bases[i].iter().enumerate() {
            rhs[offset[i] + a] = eta.nodes[i].dot(ba);
            for (b, bb) in bases[i].iter().enumerate() {
                if b <= a {
                    let mut v = w.node[i] * ba.dot(bb);
                    if i > 0 {
                        v += w.edge[i - 1] * ba.dot(bb);
                    }
                    if i + 1 < n {
                        v += w.edge[i] * ba.dot(bb);
                    }
                    m.add(offset[i] + a, offset[i] + b, v);
                }
            }
        }
        if i + 1 < n {
            for (a, ba) in bases[i].iter().enumerate() {
                for (b, bb) in bases[i + 1].iter().enumerate() {
                    m.add(offset[i + 1] + b, offset[i] + a, -w.edge[i] * ba.dot(bb));
                }
            }
        }
    }
    let coeffs = if dim > 0 { m.solve(&rhs)? } else { vec![] };
    let nodes = (0..n)
        .map(|i| bases[i].iter().enumerate().fold(Vec2::zeros(), |acc, (a, b)| acc + coeffs[offset[i] + a] * b))
        .collect();
    Ok(PathTangent { nodes, dt: eta.dt })
}

/// Gradient of `eta` (its Riesz representative) and the dual norm.
pub fn grad(
    model: &LagrangianModel,
    path: &DiscretePath,
    eta: &CovectorField,
    metric: PathMetric,
) -> Result<(PathTangent, f64)> {
    let g = sharp(&model.surface, path, eta, metric)?;
    let norm2 = eta.pair(&g).max(0.0);
    Ok((g, norm2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::QuadraticBounds;
    use crate::fields::{OneForm, ScalarField};

    fn flat() -> LagrangianModel {
        LagrangianModel::new(
            SurfaceModel::flat_torus(1.0, 1.0).unwrap(),
            OneForm::Zero,
            ScalarField::zero(),
            ScalarField::zero(),
            QuadraticBounds { a: 0.5, b: 0.0 },
        )
        .unwrap()
    }

    fn horizontal_loop(n: usize, period: f64) -> DiscretePath {
        let nodes = (0..n).map(|i| ChartPoint::new(i as f64 / n as f64, 0.3)).collect();
        DiscretePath::closed(nodes, period).unwrap()
    }

    #[test]
    fn straight_loop_action_closed_form() {
        let m = flat();
        let p = horizontal_loop(16, 2.0);
        // e = 1, A = e / (2T) + kT
        let a = action(&m, &p, 0.5).unwrap();
        assert!((a - (0.25 + 1.0)).abs() < 1e-13);
        assert_eq!(p.homotopy_class(&m.surface).unwrap(), HomotopyClass::Winding(1, 0));
    }

    #[test]
    fn period_component_is_k_minus_mean_energy() {
        let m = flat();
        let p = horizontal_loop(16, 2.0);
        let eta = eta_k(&m, &p, 0.3).unwrap();
        // speed 1/2, energy 1/8
        assert!((eta.dt - (0.3 - 0.125)).abs() < 1e-13);
    }

    #[test]
    fn sharp_is_riesz_map() {
        let m = flat();
        let mut p = horizontal_loop(12, 1.5);
        p.nodes[3].q.y += 0.05;
        let eta = eta_k(&m, &p, 0.5).unwrap();
        let g = sharp(&m.surface, &p, &eta, PathMetric::H1).unwrap();
        let xi = PathTangent { nodes: (0..12).map(|i| Vec2::new((i as f64).cos(), 0.2 * i as f64)).collect(), dt: 0.7 };
        let lhs = inner(&m.surface, &p, &g, &xi, PathMetric::H1);
        assert!((lhs - eta.pair(&xi)).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let m = flat();
        let p = horizontal_loop(8, 1.25);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.csv");
        p.write_csv(&f, 0.4).unwrap();
        let (q, k) = DiscretePath::read_csv(&f).unwrap();
        assert_eq!(k, 0.4);
        assert_eq!(q.nodes.len(), 8);
        assert!((action(&m, &q, 0.4).unwrap() - action(&m, &p, 0.4).unwrap()).abs() < 1e-14);
    }
}
