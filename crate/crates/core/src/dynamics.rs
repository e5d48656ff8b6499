//! Electromagnetic Lagrangians `L = g(v,v)/2 + theta(v) - V`, the magnetic Euler-Lagrange field and RK4 shooting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MagflowError, Result};
use crate::fields::{OneForm, ScalarField};
use crate::paths::{BoundarySpec, DiscretePath, Submanifold};
use crate::surface::{ChartPoint, SurfaceModel, Vec2};

/// Gauss-Legendre nodes and weights on [0, 1].
const GL_NODES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBounds {
    /// `L >= a |v|^2 - b`; also the convexity constant, so `a <= 1/2`.
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug)]
pub struct LagrangianModel {
    pub surface: SurfaceModel,
    pub theta: OneForm,
    pub potential: ScalarField,
    /// Density of the extra closed two-form with respect to the Riemannian area form.
    pub sigma: ScalarField,
    pub bounds: QuadraticBounds,
    sigma_flux: f64,
    primitive_base: [Vec2; 2],
    gauss: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitCertificate {
    pub closure_residual: f64,
    pub energy: f64,
    pub energy_drift: f64,
    pub conormal_residual: Option<f64>,
}

impl OrbitCertificate {
    pub fn passes(&self, closure_tol: f64, drift_tol: f64, conormal_tol: f64) -> bool {
        self.closure_residual < closure_tol
            && self.energy_drift < drift_tol
            && self.conormal_residual.map_or(true, |r| r < conormal_tol)
    }
}

/// RK4 trajectory of the magnetic flow, one node per step.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub nodes: Vec<ChartPoint>,
    pub velocities: Vec<Vec2>,
    pub period: f64,
    pub energy_drift: f64,
}

impl Trajectory {
    /// Closed discrete loop through the trajectory nodes (last node dropped).
    pub fn to_loop(&self, stride: usize) -> Result<DiscretePath> {
        let n = self.nodes.len() - 1;
        if n % stride != 0 {
            return Err(MagflowError::Precondition(format!("stride {stride} does not divide {n} steps")));
        }
        let nodes: Vec<ChartPoint> = self.nodes[..n].iter().step_by(stride).copied().collect();
        DiscretePath::closed(nodes, self.period)
    }
}

impl LagrangianModel {
    pub fn new(
        surface: SurfaceModel,
        theta: OneForm,
        potential: ScalarField,
        sigma: ScalarField,
        bounds: QuadraticBounds,
    ) -> Result<Self> {
        if surface.is_sphere() && !theta.is_zero() {
            return Err(MagflowError::Config(
                "a one-form on the sphere must be supplied as a two-form density (sigma)".into(),
            ));
        }
        if !(bounds.a > 0.0 && bounds.a <= 0.5 && bounds.b.is_finite()) {
            return Err(MagflowError::Config(format!(
                "quadratic bounds need 0 < a <= 1/2 and finite b, got {bounds:?}"
            )));
        }
        let base = match &surface {
            SurfaceModel::HyperbolicHalfPlane { bbox } => {
                Vec2::new(0.5 * (bbox.x_min + bbox.x_max), (bbox.y_min * bbox.y_max).sqrt())
            }
            _ => Vec2::zeros(),
        };
        let mut model = LagrangianModel {
            surface,
            theta,
            potential,
            sigma,
            bounds,
            sigma_flux: 0.0,
            primitive_base: [base, base],
            gauss: gauss_legendre_unit(GL_NODES),
        };
        if !model.sigma.is_zero() {
            model.sigma_flux = model
                .surface
                .area_quadrature(256)
                .into_iter()
                .map(|(p, w)| w * model.sigma_density(p))
                .sum();
        }
        model.validate_bounds()?;
        Ok(model)
    }

    fn validate_bounds(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let samples = self.surface.area_quadrature(24);
        for (p, _) in samples.iter().step_by(7) {
            if !self.surface.in_working_region(*p) {
                continue;
            }
            let lam = self.surface.conformal_factor(p.q);
            for _ in 0..8 {
                let r: f64 = rng.gen_range(0.0..10.0);
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                // |v|_g = r
                let v = Vec2::new(a.cos(), a.sin()) * (r / lam.sqrt());
                let l = self.lagrangian_value(*p, v)?;
                if l < self.bounds.a * r * r - self.bounds.b - 1e-9 {
                    return Err(MagflowError::Config(format!(
                        "L >= a|v|^2 - b fails at {:?}, |v| = {r}: L = {l}",
                        p.q
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ambient coordinates fed to scalar fields: `(x, y, 0)` on planar charts, the embedding on the sphere.
    pub fn field_coords(&self, p: ChartPoint) -> [f64; 3] {
        match self.surface.embed(p) {
            Some(x) => x,
            None => [p.q.x, p.q.y, 0.0],
        }
    }

    fn pull_back(&self, p: ChartPoint, g: [f64; 3]) -> Vec2 {
        match self.surface.embed_jacobian(p) {
            Some(j) => Vec2::new(
                g[0] * j[0][0] + g[1] * j[1][0] + g[2] * j[2][0],
                g[0] * j[0][1] + g[1] * j[1][1] + g[2] * j[2][1],
            ),
            None => Vec2::new(g[0], g[1]),
        }
    }

    pub fn potential_value(&self, p: ChartPoint) -> f64 {
        self.potential.value(&self.field_coords(p))
    }

    pub fn potential_gradient(&self, p: ChartPoint) -> Vec2 {
        self.pull_back(p, self.potential.gradient(&self.field_coords(p)))
    }

    pub fn theta_at(&self, p: ChartPoint) -> Vec2 {
        self.theta.value(p.q)
    }

    /// Extra two-form density with respect to the area form.
    pub fn sigma_density(&self, p: ChartPoint) -> f64 {
        if self.sigma.is_zero() {
            0.0
        } else {
            self.sigma.value(&self.field_coords(p))
        }
    }

    /// Chart component `F_xy` of the total magnetic form `d theta + sigma`.
    pub fn magnetic_component(&self, p: ChartPoint) -> f64 {
        self.theta.curl(p.q) + self.sigma_density(p) * self.surface.conformal_factor(p.q)
    }

    /// Total magnetic density with respect to the area form.
    pub fn magnetic_density(&self, p: ChartPoint) -> f64 {
        self.magnetic_component(p) / self.surface.conformal_factor(p.q)
    }

    pub fn sigma_flux(&self) -> f64 {
        self.sigma_flux
    }

    pub fn has_extra_sigma(&self) -> bool {
        !self.sigma.is_zero()
    }

    /// Whether the extra two-form is exact on the surface (always on the plane model).
    pub fn sigma_is_exact(&self) -> bool {
        if self.sigma.is_zero() {
            return true;
        }
        match self.surface {
            SurfaceModel::HyperbolicHalfPlane { .. } => true,
            _ => self.sigma_flux.abs() < 1e-9 * (1.0 + self.surface.total_area()),
        }
    }

    pub fn lagrangian_value(&self, p: ChartPoint, v: Vec2) -> Result<f64> {
        self.surface.check(p)?;
        Ok(self.lagrangian_unchecked(p, v))
    }

    pub(crate) fn lagrangian_unchecked(&self, p: ChartPoint, v: Vec2) -> f64 {
        let lam = self.surface.conformal_factor(p.q);
        0.5 * lam * v.norm_squared() + self.theta.value(p.q).dot(&v) - self.potential_value(p)
    }

    pub fn energy(&self, p: ChartPoint, v: Vec2) -> Result<f64> {
        self.surface.check(p)?;
        Ok(self.energy_unchecked(p, v))
    }

    pub(crate) fn energy_unchecked(&self, p: ChartPoint, v: Vec2) -> f64 {
        0.5 * self.surface.conformal_factor(p.q) * v.norm_squared() + self.potential_value(p)
    }

    /// `d_v L = g v + theta`.
    pub fn fiber_derivative(&self, p: ChartPoint, v: Vec2) -> Result<Vec2> {
        self.surface.check(p)?;
        Ok(self.fiber_unchecked(p, v))
    }

    pub(crate) fn fiber_unchecked(&self, p: ChartPoint, v: Vec2) -> Vec2 {
        self.surface.conformal_factor(p.q) * v + self.theta.value(p.q)
    }

    /// `d_q L` in chart components.
    pub fn base_derivative(&self, p: ChartPoint, v: Vec2) -> Result<Vec2> {
        self.surface.check(p)?;
        Ok(self.base_unchecked(p, v))
    }

    pub(crate) fn base_unchecked(&self, p: ChartPoint, v: Vec2) -> Vec2 {
        let lam = self.surface.conformal_factor(p.q);
        let dlam = 2.0 * lam * self.surface.log_factor_gradient(p.q);
        0.5 * dlam * v.norm_squared() + self.theta.jacobian(p.q) * v - self.potential_gradient(p)
    }

    /// Acceleration of the flow of `(L, sigma)`: geodesic spray, Lorentz force of `d theta + sigma`, potential force.
    pub fn el_field(&self, p: ChartPoint, v: Vec2) -> Result<Vec2> {
        self.surface.check(p)?;
        Ok(self.el_unchecked(p, v))
    }

    pub(crate) fn el_unchecked(&self, p: ChartPoint, v: Vec2) -> Vec2 {
        let lam = self.surface.conformal_factor(p.q);
        let f = self.magnetic_component(p);
        self.surface.geodesic_acceleration(p.q, v) + (f / lam) * Vec2::new(v.y, -v.x)
            - self.potential_gradient(p) / lam
    }

    /// Primitive of the extra two-form on the chart (sphere), the lift (torus) or the half-plane,
    /// from the radial homotopy operator based at the chart's base point.
    pub fn sigma_primitive(&self, p: ChartPoint) -> Vec2 {
        if self.sigma.is_zero() {
            return Vec2::zeros();
        }
        let base = self.primitive_base[p.chart as usize];
        let d = p.q - base;
        let mut acc = 0.0;
        for &(t, w) in &self.gauss {
            let q = ChartPoint { chart: p.chart, q: base + t * d };
            acc += w * t * self.sigma_density(q) * self.surface.conformal_factor(q.q);
        }
        acc * Vec2::new(-d.y, d.x)
    }

    /// Integrate the magnetic flow with RK4 for time `period` in `steps` steps.
    pub fn shoot(&self, start: ChartPoint, v0: Vec2, period: f64, steps: usize) -> Result<Trajectory> {
        if !(period > 0.0) || steps == 0 {
            return Err(MagflowError::Precondition(format!("shoot needs T > 0 and steps > 0, got {period}, {steps}")));
        }
        self.surface.check(start)?;
        let dt = period / steps as f64;
        let mut p = self.surface.normalize(start);
        let mut v = self.surface.transition_jacobian(start, p.chart) * v0;
        let e0 = self.energy_unchecked(p, v);
        let mut drift: f64 = 0.0;
        let mut nodes = Vec::with_capacity(steps + 1);
        let mut velocities = Vec::with_capacity(steps + 1);
        nodes.push(p);
        velocities.push(v);
        for _ in 0..steps {
            let (np, nv) = self.rk4_step(p, v, dt)?;
            let switched = self.surface.normalize(np);
            v = self.surface.transition_jacobian(np, switched.chart) * nv;
            p = switched;
            if !self.surface.in_working_region(p) {
                return Err(MagflowError::Domain(format!("trajectory left the working region at {:?}", p.q)));
            }
            drift = drift.max((self.energy_unchecked(p, v) - e0).abs());
            nodes.push(p);
            velocities.push(v);
        }
        Ok(Trajectory { nodes, velocities, period, energy_drift: drift })
    }

    fn rk4_step(&self, p: ChartPoint, v: Vec2, dt: f64) -> Result<(ChartPoint, Vec2)> {
        let at = |q: Vec2| ChartPoint { chart: p.chart, q };
        let check = |q: Vec2| self.surface.check(at(q));
        let k1q = v;
        let k1v = self.el_unchecked(p, v);
        let q2 = p.q + 0.5 * dt * k1q;
        check(q2)?;
        let k2q = v + 0.5 * dt * k1v;
        let k2v = self.el_unchecked(at(q2), k2q);
        let q3 = p.q + 0.5 * dt * k2q;
        check(q3)?;
        let k3q = v + 0.5 * dt * k2v;
        let k3v = self.el_unchecked(at(q3), k3q);
        let q4 = p.q + dt * k3q;
        check(q4)?;
        let k4q = v + dt * k3v;
        let k4v = self.el_unchecked(at(q4), k4q);
        let nq = p.q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        let nv = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        let np = at(nq);
        self.surface.check(np)?;
        Ok((np, nv))
    }

    /// Conormal defect `|d_v L (u)|` for a unit tangent `u` of `Q` at `p` (zero for points).
    pub fn conormal_defect(&self, q: &Submanifold, p: ChartPoint, v: Vec2) -> f64 {
        match q.tangent(&self.surface, p) {
            None => 0.0,
            Some(t) => {
                let lam = self.surface.conformal_factor(p.q);
                let unit = t / (lam.sqrt() * t.norm());
                self.fiber_unchecked(p, v).dot(&unit).abs()
            }
        }
    }

    /// Largest conormal defect at the two endpoints of a conormal path.
    pub fn conormal_residual(&self, path: &DiscretePath) -> Result<f64> {
        let BoundarySpec::Conormal { q0, q1, .. } = &path.boundary else {
            return Err(MagflowError::Precondition("conormal residual needs a conormal path".into()));
        };
        let (v0, v1) = path.endpoint_velocities(&self.surface)?;
        let n = path.nodes.len() - 1;
        Ok(self
            .conormal_defect(q0, path.nodes[0], v0)
            .max(self.conormal_defect(q1, path.nodes[n], v1)))
    }

    /// Conormal defect of the endpoint velocities rescaled to the energy shell `E = k`.
    /// A vanishing endpoint velocity is replaced by the best direction on the shell.
    pub fn conormal_shell_residual(&self, path: &DiscretePath, k: f64) -> Result<f64> {
        let BoundarySpec::Conormal { q0, q1, .. } = &path.boundary else {
            return Err(MagflowError::Precondition("conormal residual needs a conormal path".into()));
        };
        let (v0, v1) = path.endpoint_velocities(&self.surface)?;
        let n = path.nodes.len() - 1;
        let at = |q: &Submanifold, p: ChartPoint, v: Vec2| -> f64 {
            let lam = self.surface.conformal_factor(p.q);
            let speed = (2.0 * (k - self.potential_value(p))).max(0.0).sqrt();
            let norm = lam.sqrt() * v.norm();
            if norm > 1e-12 {
                return self.conormal_defect(q, p, v * (speed / norm));
            }
            match q.tangent(&self.surface, p) {
                None => 0.0,
                Some(t) => {
                    let unit = t / (lam.sqrt() * t.norm());
                    (self.theta_at(p).dot(&unit).abs() - speed).max(0.0)
                }
            }
        };
        Ok(at(q0, path.nodes[0], v0).max(at(q1, path.nodes[n], v1)))
    }

    /// `min_q (V(q) + |P_q w_q|^2 / 2)`, where `w` represents `theta` and `P` projects onto `TQ`:
    /// the least energy at which the conormal condition on `Q` can hold.
    pub fn min_conormal_energy(&self, q: &Submanifold) -> f64 {
        let samples = 2048;
        let f = |t: f64| -> f64 {
            let p = q.point_at(&self.surface, t);
            self.potential_value(p)
                + match q.tangent(&self.surface, p) {
                    None => 0.0,
                    Some(tan) => {
                        let lam = self.surface.conformal_factor(p.q);
                        let unit = tan / (lam.sqrt() * tan.norm());
                        0.5 * self.theta_at(p).dot(&unit).powi(2)
                    }
                }
        };
        let h = 1.0 / samples as f64;
        let (mut best_t, mut best) = (0.0, f64::INFINITY);
        for i in 0..samples {
            let t = i as f64 * h;
            let v = f(t);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        let (mut lo, mut hi) = (best_t - h, best_t + h);
        for _ in 0..80 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best.min(f(0.5 * (lo + hi)))
    }

    /// Shoot from the initial condition read off a discrete path and compare against the path.
    pub fn certify(&self, path: &DiscretePath, steps: usize) -> Result<(Trajectory, OrbitCertificate)> {
        let (start, v0) = path.initial_condition(&self.surface)?;
        let traj = self.shoot(start, v0, path.period, steps)?;
        let end = *traj.nodes.last().expect("trajectory has nodes");
        let vend = *traj.velocities.last().expect("trajectory has velocities");
        let target = if path.is_closed() { path.nodes[0] } else { *path.nodes.last().expect("nodes") };
        let closure = self.surface.chart_distance(target, end);
        let conormal = match &path.boundary {
            BoundarySpec::Periodic => None,
            BoundarySpec::Conormal { q0, q1, .. } => {
                Some(self.conormal_defect(q0, start, v0).max(self.conormal_defect(q1, end, vend)))
            }
        };
        let cert = OrbitCertificate {
            closure_residual: closure,
            energy: self.energy_unchecked(start, v0),
            energy_drift: traj.energy_drift,
            conormal_residual: conormal,
        };
        Ok((traj, cert))
    }

    /// Largest potential value (grid search with local refinement).
    pub fn max_potential(&self) -> (f64, ChartPoint) {
        let mut best = (f64::NEG_INFINITY, ChartPoint::new(0.0, 0.0));
        if self.potential.is_zero() {
            return (0.0, self.surface.area_quadrature(1)[0].0);
        }
        for (p, _) in self.surface.area_quadrature(96) {
            if !self.surface.in_working_region(p) {
                continue;
            }
            let v = self.potential_value(p);
            if v > best.0 {
                best = (v, p);
            }
        }
        // gradient ascent polish
        let (mut v, mut p) = best;
        let mut step = 1e-2 * self.surface.injectivity_scale();
        for _ in 0..200 {
            let g = self.potential_gradient(p);
            let lam = self.surface.conformal_factor(p.q);
            let np = self.surface.normalize(ChartPoint { chart: p.chart, q: p.q + step * g / lam });
            if !self.surface.in_working_region(np) {
                step *= 0.5;
                continue;
            }
            let nv = self.potential_value(np);
            if nv > v {
                v = nv;
                p = np;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
            if step < 1e-14 {
                break;
            }
        }
        (v, p)
    }
}

/// Gauss-Legendre rule on [0, 1] via Newton iteration on Legendre polynomials.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::Rect;

    fn flat_b(b: f64) -> LagrangianModel {
        LagrangianModel::new(
            SurfaceModel::flat_torus(1.0, 1.0).unwrap(),
            OneForm::Zero,
            ScalarField::zero(),
            ScalarField::Constant(b),
            QuadraticBounds { a: 0.5, b: 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let g = gauss_legendre_unit(8);
        let s: f64 = g.iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - 0.125).abs() < 1e-14);
    }

    #[test]
    fn lorentz_sign_on_flat_torus() {
        let m = flat_b(1.0);
        let a = m.el_field(ChartPoint::new(0.2, 0.2), Vec2::new(0.3, 0.7)).unwrap();
        assert!((a - Vec2::new(0.7, -0.3)).norm() < 1e-14);
    }

    #[test]
    fn constant_field_primitive_has_unit_curl() {
        let m = flat_b(2.0);
        let p = ChartPoint::new(0.37, -1.2);
        let h = 1e-5;
        let d = |dx: f64, dy: f64| m.sigma_primitive(ChartPoint::new(p.q.x + dx, p.q.y + dy));
        let curl = (d(h, 0.0).y - d(-h, 0.0).y) / (2.0 * h) - (d(0.0, h).x - d(0.0, -h).x) / (2.0 * h);
        assert!((curl - 2.0).abs() < 1e-8);
        assert!((m.sigma_flux() - 2.0).abs() < 1e-10);
        assert!(!m.sigma_is_exact());
    }

    #[test]
    fn bad_bounds_rejected() {
        let r = LagrangianModel::new(
            SurfaceModel::hyperbolic(Rect { x_min: -1.0, x_max: 1.0, y_min: 0.5, y_max: 2.0 }).unwrap(),
            OneForm::Horocycle { strength: 1.0 },
            ScalarField::zero(),
            ScalarField::zero(),
            QuadraticBounds { a: 0.5, b: 0.0 },
        );
        assert!(matches!(r, Err(MagflowError::Config(_))));
    }
}
