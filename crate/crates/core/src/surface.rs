//! Surfaces with conformal chart metrics: flat torus, hyperbolic half-plane box, round sphere.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{MagflowError, Result};
use crate::paths::{BoundarySpec, DiscretePath};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Christoffel symbols `gamma[i][j][k]` of the chart metric.
pub type Christoffel = [[[f64; 2]; 2]; 2];

/// Sphere chart switch threshold on the chart radius.
pub const SPHERE_SWITCH_RADIUS: f64 = 1.5;
/// Largest admissible chart radius before a sphere point counts as overflow.
pub const SPHERE_CHART_LIMIT: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: u8,
    pub q: Vec2,
}

impl ChartPoint {
    pub fn new(x: f64, y: f64) -> Self {
        ChartPoint { chart: 0, q: Vec2::new(x, y) }
    }

    pub fn in_chart(chart: u8, x: f64, y: f64) -> Self {
        ChartPoint { chart, q: Vec2::new(x, y) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, q: Vec2) -> bool {
        q.x >= self.x_min && q.x <= self.x_max && q.y >= self.y_min && q.y <= self.y_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HomotopyClass {
    Trivial,
    Winding(i64, i64),
}

impl HomotopyClass {
    pub fn is_trivial(&self) -> bool {
        matches!(self, HomotopyClass::Trivial | HomotopyClass::Winding(0, 0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurfaceModel {
    FlatTorus { lx: f64, ly: f64 },
    HyperbolicHalfPlane { bbox: Rect },
    RoundSphere { radius: f64 },
}

impl SurfaceModel {
    pub fn flat_torus(lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(MagflowError::Config(format!("torus periods must be positive, got ({lx}, {ly})")));
        }
        Ok(SurfaceModel::FlatTorus { lx, ly })
    }

    pub fn hyperbolic(bbox: Rect) -> Result<Self> {
        if !(bbox.y_min > 0.0 && bbox.y_max > bbox.y_min && bbox.x_max > bbox.x_min) {
            return Err(MagflowError::Config(format!("hyperbolic box must lie in y > 0 and be non-empty: {bbox:?}")));
        }
        Ok(SurfaceModel::HyperbolicHalfPlane { bbox })
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(MagflowError::Config(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(SurfaceModel::RoundSphere { radius })
    }

    pub fn chart_count(&self) -> u8 {
        match self {
            SurfaceModel::RoundSphere { .. } => 2,
            _ => 1,
        }
    }

    pub fn lattice(&self) -> Option<(f64, f64)> {
        match self {
            SurfaceModel::FlatTorus { lx, ly } => Some((*lx, *ly)),
            _ => None,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, SurfaceModel::RoundSphere { .. })
    }

    /// Rough scale below which loops are short enough to be capped by a chart disc.
    pub fn injectivity_scale(&self) -> f64 {
        match self {
            SurfaceModel::FlatTorus { lx, ly } => 0.5 * lx.min(*ly),
            SurfaceModel::HyperbolicHalfPlane { bbox } => {
                let h = (bbox.y_max / bbox.y_min).ln();
                (0.5 * h).clamp(0.1, 1.0)
            }
            SurfaceModel::RoundSphere { radius } => std::f64::consts::PI * radius,
        }
    }

    /// Total area of the surface (the box for the half-plane model).
    pub fn total_area(&self) -> f64 {
        match self {
            SurfaceModel::FlatTorus { lx, ly } => lx * ly,
            SurfaceModel::HyperbolicHalfPlane { bbox } => {
                (bbox.x_max - bbox.x_min) * (1.0 / bbox.y_min - 1.0 / bbox.y_max)
            }
            SurfaceModel::RoundSphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    pub fn check(&self, p: ChartPoint) -> Result<()> {
        if !(p.q.x.is_finite() && p.q.y.is_finite()) {
            return Err(MagflowError::Domain(format!("non-finite chart point {:?}", p.q)));
        }
        if p.chart >= self.chart_count() {
            return Err(MagflowError::Domain(format!("chart {} does not exist", p.chart)));
        }
        match self {
            SurfaceModel::FlatTorus { .. } => Ok(()),
            SurfaceModel::HyperbolicHalfPlane { .. } => {
                if p.q.y > 0.0 {
                    Ok(())
                } else {
                    Err(MagflowError::Domain(format!("half-plane point with y = {} <= 0", p.q.y)))
                }
            }
            SurfaceModel::RoundSphere { .. } => {
                if p.q.norm() <= SPHERE_CHART_LIMIT {
                    Ok(())
                } else {
                    Err(MagflowError::Domain(format!(
                        "sphere chart overflow: |q| = {} in chart {}",
                        p.q.norm(),
                        p.chart
                    )))
                }
            }
        }
    }

    /// Whether the point lies in the working region (the declared box for the half-plane).
    pub fn in_working_region(&self, p: ChartPoint) -> bool {
        match self {
            SurfaceModel::HyperbolicHalfPlane { bbox } => bbox.contains(p.q),
            _ => self.check(p).is_ok(),
        }
    }

    /// Conformal factor `lambda` with `g = lambda * I` in the chart.
    pub fn conformal_factor(&self, q: Vec2) -> f64 {
        match self {
            SurfaceModel::FlatTorus { .. } => 1.0,
            SurfaceModel::HyperbolicHalfPlane { .. } => 1.0 / (q.y * q.y),
            SurfaceModel::RoundSphere { radius } => {
                let s = 1.0 + q.norm_squared();
                4.0 * radius * radius / (s * s)
            }
        }
    }

    /// Gradient of `phi = ln(lambda) / 2`.
    pub fn log_factor_gradient(&self, q: Vec2) -> Vec2 {
        match self {
            SurfaceModel::FlatTorus { .. } => Vec2::zeros(),
            SurfaceModel::HyperbolicHalfPlane { .. } => Vec2::new(0.0, -1.0 / q.y),
            SurfaceModel::RoundSphere { .. } => -2.0 * q / (1.0 + q.norm_squared()),
        }
    }

    pub fn metric_at(&self, p: ChartPoint) -> Result<Mat2> {
        self.check(p)?;
        Ok(Mat2::identity() * self.conformal_factor(p.q))
    }

    pub fn christoffel_at(&self, p: ChartPoint) -> Result<Christoffel> {
        self.check(p)?;
        let d = self.log_factor_gradient(p.q);
        let mut gamma = [[[0.0; 2]; 2]; 2];
        for (i, gi) in gamma.iter_mut().enumerate() {
            for (j, gij) in gi.iter_mut().enumerate() {
                for (k, g) in gij.iter_mut().enumerate() {
                    let dij = if i == j { 1.0 } else { 0.0 };
                    let dik = if i == k { 1.0 } else { 0.0 };
                    let djk = if j == k { 1.0 } else { 0.0 };
                    *g = dij * d[k] + dik * d[j] - djk * d[i];
                }
            }
        }
        Ok(gamma)
    }

    /// `-Gamma(v, v)` in chart components.
    pub fn geodesic_acceleration(&self, q: Vec2, v: Vec2) -> Vec2 {
        let d = self.log_factor_gradient(q);
        -(2.0 * d.dot(&v) * v - v.norm_squared() * d)
    }

    pub fn wrap(&self, q: Vec2) -> Result<Vec2> {
        match self {
            SurfaceModel::FlatTorus { lx, ly } => Ok(Vec2::new(q.x.rem_euclid(*lx), q.y.rem_euclid(*ly))),
            _ => {
                self.check(ChartPoint { chart: 0, q })?;
                Ok(q)
            }
        }
    }

    /// Move a sphere point into the chart where it sits comfortably; identity elsewhere.
    pub fn normalize(&self, p: ChartPoint) -> ChartPoint {
        match self {
            SurfaceModel::RoundSphere { .. } if p.q.norm() > SPHERE_SWITCH_RADIUS => {
                let other = 1 - p.chart;
                ChartPoint { chart: other, q: invert(p.q) }
            }
            _ => p,
        }
    }

    /// Chart coordinates of `p` in chart `chart`.
    pub fn express_in(&self, p: ChartPoint, chart: u8) -> Vec2 {
        if p.chart == chart {
            p.q
        } else {
            invert(p.q)
        }
    }

    /// Jacobian of the transition from `p.chart` to `chart` at `p`.
    pub fn transition_jacobian(&self, p: ChartPoint, chart: u8) -> Mat2 {
        if p.chart == chart {
            Mat2::identity()
        } else {
            // d(1/z) = -dz / z^2
            let (x, y) = (p.q.x, p.q.y);
            let r2 = x * x + y * y;
            let re = -(x * x - y * y) / (r2 * r2);
            let im = 2.0 * x * y / (r2 * r2);
            Mat2::new(re, -im, im, re)
        }
    }

    /// Displacement from `a` to `b` expressed in `a`'s chart (nearest representative on the torus).
    pub fn displacement(&self, a: ChartPoint, b: ChartPoint) -> Vec2 {
        match self {
            SurfaceModel::FlatTorus { lx, ly } => {
                let d = b.q - a.q;
                Vec2::new(d.x - lx * (d.x / lx).round(), d.y - ly * (d.y / ly).round())
            }
            SurfaceModel::HyperbolicHalfPlane { .. } => b.q - a.q,
            SurfaceModel::RoundSphere { .. } => self.express_in(b, a.chart) - a.q,
        }
    }

    /// Chart-length of the displacement between two points, weighted by the metric at the midpoint.
    pub fn chart_distance(&self, a: ChartPoint, b: ChartPoint) -> f64 {
        let d = self.displacement(a, b);
        let mid = a.q + 0.5 * d;
        self.conformal_factor(mid).sqrt() * d.norm()
    }

    /// Embedding of a sphere point into R^3; `None` for the other surfaces.
    pub fn embed(&self, p: ChartPoint) -> Option<[f64; 3]> {
        let SurfaceModel::RoundSphere { radius } = self else {
            return None;
        };
        let z = if p.chart == 0 { p.q } else { invert(p.q) };
        let r2 = z.norm_squared();
        let s = 1.0 + r2;
        Some([radius * 2.0 * z.x / s, radius * 2.0 * z.y / s, radius * (r2 - 1.0) / s])
    }

    /// Derivative of the embedding with respect to the chart coordinates (3x2, row-major).
    pub fn embed_jacobian(&self, p: ChartPoint) -> Option<[[f64; 2]; 3]> {
        let SurfaceModel::RoundSphere { radius } = self else {
            return None;
        };
        let z = if p.chart == 0 { p.q } else { invert(p.q) };
        let (x, y) = (z.x, z.y);
        let s = 1.0 + x * x + y * y;
        let s2 = s * s;
        let j0 = [
            [2.0 * (s - 2.0 * x * x) / s2, -4.0 * x * y / s2],
            [-4.0 * x * y / s2, 2.0 * (s - 2.0 * y * y) / s2],
            [4.0 * x / s2, 4.0 * y / s2],
        ];
        let t = if p.chart == 0 {
            Mat2::identity()
        } else {
            self.transition_jacobian(p, 0)
        };
        let mut out = [[0.0; 2]; 3];
        for r in 0..3 {
            for c in 0..2 {
                out[r][c] = radius * (j0[r][0] * t[(0, c)] + j0[r][1] * t[(1, c)]);
            }
        }
        Some(out)
    }

    /// Chart point of a point on the sphere of the model's radius.
    pub fn from_embedding(&self, x: [f64; 3]) -> Option<ChartPoint> {
        if !self.is_sphere() {
            return None;
        }
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let (a, b, c) = (x[0] / n, x[1] / n, x[2] / n);
        if c <= 0.0 {
            Some(ChartPoint::in_chart(0, a / (1.0 - c), b / (1.0 - c)))
        } else {
            Some(ChartPoint::in_chart(1, a / (1.0 + c), -b / (1.0 + c)))
        }
    }

    /// Quadrature nodes covering the surface: `(point, area weight)`.
    pub fn area_quadrature(&self, n: usize) -> Vec<(ChartPoint, f64)> {
        let mut out = Vec::with_capacity(n * n);
        match self {
            SurfaceModel::FlatTorus { lx, ly } => {
                let (hx, hy) = (lx / n as f64, ly / n as f64);
                for i in 0..n {
                    for j in 0..n {
                        out.push((ChartPoint::new((i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy), hx * hy));
                    }
                }
            }
            SurfaceModel::HyperbolicHalfPlane { bbox } => {
                // uniform in x and ln y
                let hx = (bbox.x_max - bbox.x_min) / n as f64;
                let (l0, l1) = (bbox.y_min.ln(), bbox.y_max.ln());
                let hl = (l1 - l0) / n as f64;
                for i in 0..n {
                    for j in 0..n {
                        let x = bbox.x_min + (i as f64 + 0.5) * hx;
                        let y = (l0 + (j as f64 + 0.5) * hl).exp();
                        // dA = dx dy / y^2 = dx dl / y
                        out.push((ChartPoint::new(x, y), hx * hl / y));
                    }
                }
            }
            SurfaceModel::RoundSphere { .. } => {
                // each chart covers its unit disc (one hemisphere); polar grid
                for chart in 0..2u8 {
                    let hr = 1.0 / n as f64;
                    let ha = 2.0 * std::f64::consts::PI / n as f64;
                    for i in 0..n {
                        let r = (i as f64 + 0.5) * hr;
                        let lam = self.conformal_factor(Vec2::new(r, 0.0));
                        for j in 0..n {
                            let a = (j as f64 + 0.5) * ha;
                            out.push((ChartPoint::in_chart(chart, r * a.cos(), r * a.sin()), lam * r * hr * ha));
                        }
                    }
                }
            }
        }
        out
    }

    /// Homotopy class of a path: winding of the lift for loops on the torus,
    /// reduced modulo the boundary subgroup for conormal paths.
    pub fn homotopy_class(&self, path: &DiscretePath) -> Result<HomotopyClass> {
        let Some((lx, ly)) = self.lattice() else {
            return Ok(HomotopyClass::Trivial);
        };
        let mut total = Vec2::zeros();
        for (a, b) in path.segments() {
            let raw = b.q - a.q;
            let d = self.displacement(a, b);
            if d.x.abs() > 0.4 * lx || d.y.abs() > 0.4 * ly {
                return Err(MagflowError::Resolution(format!(
                    "node gap {:?} too large to lift unambiguously",
                    raw
                )));
            }
            total += d;
        }
        match &path.boundary {
            BoundarySpec::Periodic => Ok(HomotopyClass::Winding(
                (total.x / lx).round() as i64,
                (total.y / ly).round() as i64,
            )),
            BoundarySpec::Conormal { q0, q1, subgroup } => {
                let r0 = q0.reference_point();
                let r1 = q1.reference_point();
                let start = path.nodes[0];
                let end = *path.nodes.last().expect("non-empty path");
                // close up: slide r0 -> start, follow the path, slide end -> r1, fixed connector r1 -> r0
                let off0 = self.displacement(r0, start);
                let off1 = self.displacement(r1, end);
                let d = off0 + total - off1 - self.displacement(r0, r1);
                let m = (d.x / lx).round() as i64;
                let n = (d.y / ly).round() as i64;
                let (m, n) = reduce_mod_subgroup(m, n, subgroup);
                Ok(HomotopyClass::Winding(m, n))
            }
        }
    }
}

fn invert(q: Vec2) -> Vec2 {
    let r2 = q.norm_squared();
    Vec2::new(q.x / r2, -q.y / r2)
}

/// Reduce an integer vector modulo the lattice spanned by `gens` (at most two generators).
pub fn reduce_mod_subgroup(m: i64, n: i64, gens: &[[i64; 2]]) -> (i64, i64) {
    let gens: Vec<[i64; 2]> = gens.iter().copied().filter(|g| g[0] != 0 || g[1] != 0).collect();
    match gens.len() {
        0 => (m, n),
        1 => {
            let g = gens[0];
            // canonical representative: smallest non-negative coefficient along a complement
            let gcd = gcd(g[0].abs(), g[1].abs());
            let (a, b) = (g[0] / gcd, g[1] / gcd);
            // component along the primitive direction, modulo gcd
            let (u, v) = bezout(a, b);
            let along = m * u + n * v;
            let reduced = along.rem_euclid(gcd);
            let shift = (along - reduced) / gcd;
            let (mm, nn) = (m - shift * g[0], n - shift * g[1]);
            // remaining orthogonal coordinate is already canonical
            (mm, nn)
        }
        _ => {
            let (a, b) = (gens[0], gens[1]);
            let det = a[0] * b[1] - a[1] * b[0];
            if det == 0 {
                return reduce_mod_subgroup(m, n, &[a]);
            }
            let det = det.abs();
            // quotient is finite of order |det|; canonical representative via coefficients
            let mut best = (m, n);
            let mut best_key = (i64::MAX, i64::MAX);
            for i in -det..=det {
                for j in -det..=det {
                    let mm = m - i * a[0] - j * b[0];
                    let nn = n - i * a[1] - j * b[1];
                    let key = (mm.abs() + nn.abs(), mm * 1000 + nn);
                    if key < best_key {
                        best_key = key;
                        best = (mm, nn);
                    }
                }
            }
            best
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

fn bezout(a: i64, b: i64) -> (i64, i64) {
    // extended Euclid for coprime a, b: u a + v b = 1
    let (mut old_r, mut r) = (a, b);
    let (mut old_s, mut s) = (1i64, 0i64);
    let (mut old_t, mut t) = (0i64, 1i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
        (old_t, t) = (t, old_t - q * t);
    }
    if old_r < 0 {
        (-old_s, -old_t)
    } else {
        (old_s, old_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_origin_metric_is_four() {
        let s = SurfaceModel::sphere(1.0).unwrap();
        let g = s.metric_at(ChartPoint::new(0.0, 0.0)).unwrap();
        assert_eq!(g, Mat2::new(4.0, 0.0, 0.0, 4.0));
    }

    #[test]
    fn hyperbolic_christoffel_xy() {
        let s = SurfaceModel::hyperbolic(Rect { x_min: -1.0, x_max: 1.0, y_min: 0.1, y_max: 4.0 }).unwrap();
        let g = s.christoffel_at(ChartPoint::new(0.3, 2.0)).unwrap();
        assert!((g[0][0][1] + 0.5).abs() < 1e-15);
        assert!((g[0][1][0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn half_plane_rejects_lower_points() {
        let s = SurfaceModel::hyperbolic(Rect { x_min: -1.0, x_max: 1.0, y_min: 0.1, y_max: 4.0 }).unwrap();
        assert!(matches!(s.metric_at(ChartPoint::new(0.0, -0.5)), Err(MagflowError::Domain(_))));
    }

    #[test]
    fn sphere_charts_agree_on_embedding() {
        let s = SurfaceModel::sphere(2.0).unwrap();
        let p = ChartPoint::in_chart(0, 0.7, -0.4);
        let q = ChartPoint { chart: 1, q: s.express_in(p, 1) };
        let (a, b) = (s.embed(p).unwrap(), s.embed(q).unwrap());
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
        let back = s.from_embedding(a).unwrap();
        let e = s.embed(back).unwrap();
        for i in 0..3 {
            assert!((a[i] - e[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_is_isometric() {
        let s = SurfaceModel::sphere(1.0).unwrap();
        let p = ChartPoint::in_chart(0, 1.2, 0.9);
        let j = s.transition_jacobian(p, 1);
        let w = s.express_in(p, 1);
        let pulled = j.transpose() * j * s.conformal_factor(w);
        let direct = Mat2::identity() * s.conformal_factor(p.q);
        assert!((pulled - direct).norm() < 1e-12);
        assert!(j.determinant() > 0.0);
    }

    #[test]
    fn subgroup_reduction() {
        assert_eq!(reduce_mod_subgroup(3, 2, &[[1, 0]]), (0, 2));
        assert_eq!(reduce_mod_subgroup(3, -2, &[[0, 1]]), (3, 0));
        assert_eq!(reduce_mod_subgroup(3, 2, &[]), (3, 2));
    }
}
