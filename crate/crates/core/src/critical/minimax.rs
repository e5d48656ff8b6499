//! Mountain-pass families, the string deformation on discrete paths, and `k`-sweeps.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::string::{climbing_string, Landscape, Move, StringConfig};
use super::{certify_candidate, CertifyConfig, CriticalPointReport};
use crate::descent::{flow_step, line_integral, tracked_value, FlowConfig, StepPolicy};
use crate::dynamics::LagrangianModel;
use crate::error::{MagflowError, Result};
use crate::paths::{action, eta_unchecked, grad, inner, loop_value, BoundarySpec, DiscretePath, PathMetric, PeriodProfile};
use crate::surface::{ChartPoint, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// From a constant path to a path of negative action.
    Gamma,
    /// Loops sweeping the sphere, constant at both ends.
    SphereSweep,
}

#[derive(Clone, Debug)]
pub struct MinimaxFamily {
    pub members: Vec<DiscretePath>,
    pub kind: FamilyKind,
}

impl MinimaxFamily {
    /// Check the endpoint conditions at energy `k`; returns the anchor value of member 0.
    pub fn validate(&self, model: &LagrangianModel, k: f64) -> Result<f64> {
        let m = self.members.len();
        if m < 3 {
            return Err(MagflowError::InvalidFamily("a family needs at least three members".into()));
        }
        let n = self.members[0].nodes.len();
        for p in &self.members {
            p.validate(&model.surface)?;
            if p.nodes.len() != n || p.is_closed() != self.members[0].is_closed() {
                return Err(MagflowError::InvalidFamily("members differ in node count or boundary type".into()));
            }
        }
        let first = &self.members[0];
        let last = &self.members[m - 1];
        if first.kinetic(&model.surface) > 1e-20 {
            return Err(MagflowError::InvalidFamily("the first member must be a constant path".into()));
        }
        match self.kind {
            FamilyKind::Gamma => {
                let end = tracked_value(model, last, k)
                    .ok_or_else(|| MagflowError::InvalidFamily("end member value undefined".into()))?;
                if !(end < 0.0) {
                    return Err(MagflowError::InvalidFamily(format!("end member action {end} is not negative")));
                }
                action(model, first, k)
            }
            FamilyKind::SphereSweep => {
                if !model.surface.is_sphere() || !first.is_closed() {
                    return Err(MagflowError::InvalidFamily("sphere sweeps need loops on the sphere".into()));
                }
                if last.kinetic(&model.surface) > 1e-20 || (last.period - first.period).abs() > 1e-12 {
                    return Err(MagflowError::InvalidFamily("sweep must end at a constant loop with the same period".into()));
                }
                action(model, first, k)
            }
        }
    }
}

/// Linear interpolation from a constant open path at `p` to `end`, with log-linear periods.
pub fn gamma_family(model: &LagrangianModel, p: ChartPoint, t0: f64, end: &DiscretePath, members: usize) -> Result<MinimaxFamily> {
    let BoundarySpec::Conormal { q0, q1, .. } = &end.boundary else {
        return Err(MagflowError::InvalidFamily("a conormal family needs an open end path".into()));
    };
    if q0.distance(&model.surface, p) > 1e-9 || q1.distance(&model.surface, p) > 1e-9 {
        return Err(MagflowError::InvalidFamily("the constant path must sit on both boundary submanifolds".into()));
    }
    let start = DiscretePath { nodes: vec![p; end.nodes.len()], period: t0, boundary: end.boundary.clone() };
    let mut out = Vec::with_capacity(members);
    for j in 0..members {
        let xi = j as f64 / (members - 1) as f64;
        let mut m = start.interpolate(&model.surface, end, xi)?;
        m.period = ((1.0 - xi) * t0.ln() + xi * end.period.ln()).exp();
        out.push(m);
    }
    Ok(MinimaxFamily { members: out, kind: FamilyKind::Gamma })
}

/// Latitude circles around the chart-0 origin, oriented so that the enclosed two-form is counted negatively,
/// from the constant loop at the origin to the constant loop at the antipode.
pub fn latitude_family(model: &LagrangianModel, k: f64, members: usize, nodes: usize, t0: f64) -> Result<MinimaxFamily> {
    if !model.surface.is_sphere() {
        return Err(MagflowError::InvalidFamily("latitude families live on the sphere".into()));
    }
    let s = &model.surface;
    let sign = if model.sigma.value(&[0.0, 0.0, -1.0]) >= 0.0 { -1.0 } else { 1.0 };
    let mut out = Vec::with_capacity(members);
    for j in 0..members {
        let phi = std::f64::consts::PI * j as f64 / (members - 1) as f64;
        let path = if j == 0 {
            DiscretePath::constant_loop(ChartPoint::in_chart(0, 0.0, 0.0), nodes, t0)?
        } else if j == members - 1 {
            DiscretePath::constant_loop(ChartPoint::in_chart(1, 0.0, 0.0), nodes, t0)?
        } else {
            let rho = (0.5 * phi).tan();
            let pts = (0..nodes)
                .map(|i| {
                    let t = std::f64::consts::TAU * i as f64 / nodes as f64;
                    s.normalize(ChartPoint::in_chart(0, rho * t.cos(), sign * rho * t.sin()))
                })
                .collect();
            let mut p = DiscretePath::closed(pts, 1.0)?;
            let prof = action_profile(model, &p, k)?;
            p.period = prof.infimum().0.clamp(t0, 1e3);
            p
        };
        out.push(path);
    }
    Ok(MinimaxFamily { members: out, kind: FamilyKind::SphereSweep })
}

fn action_profile(model: &LagrangianModel, p: &DiscretePath, k: f64) -> Result<PeriodProfile> {
    let eval = |t: f64| action(model, &DiscretePath { nodes: p.nodes.clone(), period: t, boundary: p.boundary.clone() }, k);
    let (v1, v2, v4) = (eval(1.0)?, eval(2.0)?, eval(4.0)?);
    let (d1, d2) = (v1 - v2, v2 - v4);
    let a = (8.0 * d1 - 4.0 * d2) / 3.0;
    let b = 0.5 * a - d1;
    Ok(PeriodProfile { a, b, c: v1 - a - b })
}

const LOG_PERIOD_WEIGHT: f64 = 0.01;

struct PathLandscape<'a> {
    model: &'a LagrangianModel,
    flow: FlowConfig,
    direct: bool,
}

impl Landscape for PathLandscape<'_> {
    type Point = DiscretePath;

    fn value(&self, p: &DiscretePath) -> Option<f64> {
        if self.direct {
            tracked_value(self.model, p, self.flow.k)
        } else {
            None
        }
    }

    fn increment(&self, a: &DiscretePath, b: &DiscretePath) -> f64 {
        line_integral(self.model, a, b, self.flow.k)
    }

    fn descend(&self, p: &DiscretePath, step: f64) -> Result<Move<DiscretePath>> {
        if p.period < self.flow.t_floor {
            return Ok(Move { point: p.clone(), step: 0.0, grad_norm: f64::NAN });
        }
        match flow_step(self.model, p, &self.flow, step) {
            Ok(out) => Ok(Move { point: out.path, step: if out.frozen { 0.0 } else { out.step }, grad_norm: out.grad_norm }),
            Err(MagflowError::Domain(_)) => Ok(Move { point: p.clone(), step: 0.0, grad_norm: f64::NAN }),
            Err(e) => Err(e),
        }
    }

    fn climb(&self, p: &DiscretePath, prev: &DiscretePath, next: &DiscretePath, step: f64) -> Result<Move<DiscretePath>> {
        let s = &self.model.surface;
        let metric = self.flow.metric;
        let eta = eta_unchecked(self.model, p, self.flow.k);
        let (g, norm) = grad(self.model, p, &eta, metric)?;
        let mut tau = prev.difference(s, next);
        // the endpoint directions must stay admissible
        if let BoundarySpec::Conormal { .. } = p.boundary {
            let last = p.nodes.len() - 1;
            for i in [0, last] {
                let basis = p.node_basis(s, i);
                let v = tau.nodes[i];
                tau.nodes[i] = basis.iter().fold(Vec2::zeros(), |acc, b| acc + v.dot(b) * b);
            }
        }
        let tn = inner(s, p, &tau, &tau, metric).sqrt();
        let mut dir = g.clone();
        if tn > 0.0 {
            let tau = tau.scaled(1.0 / tn);
            let proj = inner(s, p, &g, &tau, metric);
            dir.axpy(-2.0 * proj, &tau);
        }
        let x = dir.scaled(-1.0 / (1.0 + norm * norm).sqrt());
        let mut st = step;
        for _ in 0..30 {
            match p.apply(s, &x, st) {
                Ok(q) => return Ok(Move { point: q, step: st, grad_norm: norm }),
                Err(MagflowError::Domain(_)) => st *= 0.5,
                Err(e) => return Err(e),
            }
        }
        Ok(Move { point: p.clone(), step: 0.0, grad_norm: norm })
    }

    /// Shape distance plus the period measured on a log scale, so that long periods do not swamp the shape.
    fn distance(&self, a: &DiscretePath, b: &DiscretePath) -> f64 {
        let mut d = a.difference(&self.model.surface, b);
        d.dt = 0.0;
        let shape = inner(&self.model.surface, a, &d, &d, self.flow.metric).max(0.0);
        let lt = (b.period / a.period).ln();
        (shape + LOG_PERIOD_WEIGHT * lt * lt).sqrt()
    }

    fn interpolate(&self, a: &DiscretePath, b: &DiscretePath, t: f64) -> Result<DiscretePath> {
        let mut out = a.interpolate(&self.model.surface, b, t)?;
        out.period = ((1.0 - t) * a.period.ln() + t * b.period.ln()).exp();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MountainPassConfig {
    pub string: StringConfig,
    pub metric: PathMetric,
    pub t_floor: f64,
    pub certify: CertifyConfig,
}

impl Default for MountainPassConfig {
    fn default() -> Self {
        MountainPassConfig {
            string: StringConfig::default(),
            metric: PathMetric::H1,
            t_floor: 1e-4,
            certify: CertifyConfig::default(),
        }
    }
}

/// Deform the family by the string method and certify the arg-max member. Returns the value of the
/// certified candidate (the min-max over the deformation history when certification fails) and its report.
pub fn mountain_pass(
    model: &LagrangianModel,
    family: &MinimaxFamily,
    k: f64,
    cfg: &MountainPassConfig,
) -> Result<(f64, CriticalPointReport)> {
    let anchor = family.validate(model, k)?;
    let mut flow = FlowConfig::new(k);
    flow.metric = cfg.metric;
    flow.t_floor = cfg.t_floor;
    flow.policy = StepPolicy::Adaptive;
    let land = PathLandscape { model, flow, direct: !model.has_extra_sigma() };
    let values0: Vec<f64> = {
        let o = climbing_string(&land, family.members.clone(), anchor, &StringConfig { rounds: 0, ..cfg.string.clone() })?;
        o.values
    };
    let ends = values0[0].max(values0[values0.len() - 1]);
    let top = values0[1..values0.len() - 1].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(top > ends) || !(top > 0.0) {
        return Err(MagflowError::InvalidFamily(format!(
            "no mountain-pass geometry: interior max {top} does not exceed end values {ends}"
        )));
    }
    let out = climbing_string(&land, family.members.clone(), anchor, &cfg.string)?;
    let j = out.argmax;
    let candidate = &out.members[j];
    let mut report = certify_candidate(model, candidate, k, &cfg.certify)?;
    if let Some(p) = &report.path {
        if !land.direct {
            let shift = if p.nodes.len() == candidate.nodes.len() { line_integral(model, candidate, p, k) } else { 0.0 };
            let tracked = out.values[j] + shift;
            report.value = Some(snap_to_branch(model, p, k, tracked));
        }
    }
    report.notes.push(format!(
        "string: {} rounds, climbing-image |eta| = {:.3e}, min-max value {:.9}",
        out.rounds, out.climb_grad_norm, out.minimax_value
    ));
    let value = match report.value {
        Some(v) if report.is_orbit => v,
        _ => out.minimax_value,
    };
    Ok((value, report))
}

/// On the sphere the capping value of a loop is defined up to multiples of the total flux;
/// pick the branch nearest to the value tracked along the deformation.
fn snap_to_branch(model: &LagrangianModel, path: &DiscretePath, k: f64, tracked: f64) -> f64 {
    let Ok(v) = loop_value(model, path, k) else {
        return tracked;
    };
    let flux = model.sigma_flux();
    let snapped = if model.surface.is_sphere() && flux.abs() > 1e-12 {
        v + flux * ((tracked - v) / flux).round()
    } else {
        v
    };
    if (snapped - tracked).abs() <= 0.1 * (1.0 + tracked.abs()) {
        snapped
    } else {
        tracked
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepStatus {
    Certified,
    Uncertified,
    InvalidFamily,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    /// Critical value at the polished candidate.
    pub c: Option<f64>,
    pub minimax_value: Option<f64>,
    pub period: Option<f64>,
    pub hessian_index: Option<usize>,
    pub status: SweepStatus,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Largest decrease `c(k_i) - c(k_{i+1})` between consecutive valid rows (zero when monotone).
    pub monotonicity_violation: f64,
    /// `(k_mid, slope, mean period, relative deviation)` between consecutive valid rows.
    pub slopes: Vec<(f64, f64, f64, f64)>,
}

impl SweepReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(["k", "c", "T", "status"])?;
        let f = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.12e}"));
        for r in &self.rows {
            let status = serde_json::to_value(r.status)?;
            w.write_record(&[format!("{:.12e}", r.k), f(r.c), f(r.period), status.as_str().unwrap_or("").to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mountain-pass values over an increasing `k` grid, one independent run per grid point.
pub fn minimax_sweep<F>(model: &LagrangianModel, builder: F, ks: &[f64], cfg: &MountainPassConfig) -> Result<SweepReport>
where
    F: Fn(f64) -> Result<MinimaxFamily> + Sync,
{
    if ks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MagflowError::Precondition("k grid must be increasing".into()));
    }
    let rows: Vec<SweepRow> = ks
        .par_iter()
        .map(|&k| {
            let blank = |status, message: String| SweepRow {
                k,
                c: None,
                minimax_value: None,
                period: None,
                hessian_index: None,
                status,
                message,
            };
            let run = builder(k).and_then(|fam| mountain_pass(model, &fam, k, cfg));
            match run {
                Ok((mm, rep)) => SweepRow {
                    k,
                    c: rep.value,
                    minimax_value: Some(mm),
                    period: Some(rep.period),
                    hessian_index: rep.hessian_index,
                    status: if rep.is_orbit { SweepStatus::Certified } else { SweepStatus::Uncertified },
                    message: rep.notes.join("; "),
                },
                Err(MagflowError::InvalidFamily(m)) => blank(SweepStatus::InvalidFamily, m),
                Err(e) => blank(SweepStatus::Failed, e.to_string()),
            }
        })
        .collect();
    let valid: Vec<&SweepRow> = rows.iter().filter(|r| r.c.is_some() && r.period.is_some()).collect();
    let mut violation: f64 = 0.0;
    let mut slopes = Vec::new();
    for w in valid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ca, cb) = (a.c.unwrap_or(f64::NAN), b.c.unwrap_or(f64::NAN));
        violation = violation.max(ca - cb);
        let slope = (cb - ca) / (b.k - a.k);
        let t = 0.5 * (a.period.unwrap_or(f64::NAN) + b.period.unwrap_or(f64::NAN));
        slopes.push((0.5 * (a.k + b.k), slope, t, (slope - t).abs() / t.abs()));
    }
    Ok(SweepReport { rows, monotonicity_violation: violation.max(0.0), slopes })
}
