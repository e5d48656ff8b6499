//! Truncated negative-gradient flow of `eta_k`: explicit Euler with Armijo backtracking on the
//! line integral of `eta_k`, a cutoff near the constant loops, and Palais-Smale monitoring.

use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::LagrangianModel;
use crate::error::{MagflowError, Result};
use crate::paths::{
    capping_integral, eta_unchecked, grad, loop_value, s_k_local, action, CovectorField, DiscretePath, PathMetric,
    PathTangent,
};
use crate::surface::{ChartPoint, SurfaceModel, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    Fixed,
    Adaptive,
}

/// Cutoff near the constant loops: frozen when `S_k < epsilon / 4` inside `V_delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub k: f64,
    pub step: f64,
    pub max_step: f64,
    pub policy: StepPolicy,
    pub metric: PathMetric,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub t_floor: f64,
    pub armijo: f64,
    pub cutoff: Option<Cutoff>,
}

impl FlowConfig {
    pub fn new(k: f64) -> Self {
        FlowConfig {
            k,
            step: 0.05,
            max_step: 0.5,
            policy: StepPolicy::Adaptive,
            metric: PathMetric::H1,
            max_iters: 2000,
            grad_tol: 1e-8,
            t_floor: 1e-4,
            armijo: 1e-4,
            cutoff: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Converged,
    TCollapse,
    MaxIters,
    LeftDomain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub iter: usize,
    /// Tracked value: the action (or `S_k`) when defined, otherwise the start value plus accumulated line integrals.
    pub value: f64,
    pub grad_norm: f64,
    pub period: f64,
    pub kinetic: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
    pub reason: TerminationReason,
    /// Total flow time `sum step * |X|` bound (sum of accepted step lengths times cutoff).
    pub flow_time: f64,
    pub initial_period: f64,
}

impl FlowTrace {
    pub fn last(&self) -> &FlowRecord {
        self.records.last().expect("trace has records")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(["iter", "action", "gradnorm", "T", "e"])?;
        for r in &self.records {
            w.write_record(&[
                r.iter.to_string(),
                format!("{:.17e}", r.value),
                format!("{:.17e}", r.grad_norm),
                format!("{:.17e}", r.period),
                format!("{:.17e}", r.kinetic),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub path: DiscretePath,
    /// Line integral of `eta_k` along the step (change of the local primitive).
    pub delta_s: f64,
    pub step: f64,
    pub grad_norm: f64,
    /// Product-metric length of the step bound: `step * kappa * |X|`.
    pub displacement: f64,
    pub frozen: bool,
}

/// Re-express the covector `eta` (given in `to`'s node charts) in `from`'s node charts.
fn pull_covector(surface: &SurfaceModel, from: &DiscretePath, to: &DiscretePath, eta: &CovectorField) -> CovectorField {
    let nodes = from
        .nodes
        .iter()
        .zip(&to.nodes)
        .zip(&eta.nodes)
        .map(|((a, b), e)| {
            if a.chart == b.chart {
                *e
            } else {
                let b_in_a = ChartPoint { chart: a.chart, q: surface.express_in(*b, a.chart) };
                surface.transition_jacobian(b_in_a, b.chart).transpose() * e
            }
        })
        .collect();
    CovectorField { nodes, dt: eta.dt }
}

/// Simpson line integral of `eta_k` along the straight segment from `a` to `b`
/// (trapezoid if the midpoint leaves the domain).
pub fn line_integral(model: &LagrangianModel, a: &DiscretePath, b: &DiscretePath, k: f64) -> f64 {
    let ea = eta_unchecked(model, a, k);
    let eb = pull_covector(&model.surface, a, b, &eta_unchecked(model, b, k));
    let d = a.difference(&model.surface, b);
    match a.interpolate(&model.surface, b, 0.5) {
        Ok(m) if m.validate(&model.surface).is_ok() => {
            let em = pull_covector(&model.surface, a, &m, &eta_unchecked(model, &m, k));
            (ea.pair(&d) + 4.0 * em.pair(&d) + eb.pair(&d)) / 6.0
        }
        _ => 0.5 * (ea.pair(&d) + eb.pair(&d)),
    }
}

fn cutoff_factor(model: &LagrangianModel, path: &DiscretePath, cfg: &FlowConfig) -> f64 {
    let Some(c) = cfg.cutoff else {
        return 1.0;
    };
    if !path.is_closed() || c.epsilon <= 0.0 {
        return 1.0;
    }
    match s_k_local(model, path, cfg.k, c.delta) {
        Err(_) => 1.0,
        Ok(s) => {
            let (lo, hi) = (0.25 * c.epsilon, 0.5 * c.epsilon);
            if s <= lo {
                0.0
            } else if s >= hi {
                1.0
            } else {
                let t = (s - lo) / (hi - lo);
                t * t * (3.0 - 2.0 * t)
            }
        }
    }
}

/// One explicit Euler step of the truncated field `X = -kappa grad / sqrt(1 + |eta|^2)`.
pub fn flow_step(model: &LagrangianModel, path: &DiscretePath, cfg: &FlowConfig, step: f64) -> Result<StepOutcome> {
    let eta = eta_unchecked(model, path, cfg.k);
    let (g, norm) = grad(model, path, &eta, cfg.metric)?;
    let kappa = cutoff_factor(model, path, cfg);
    if kappa == 0.0 {
        return Ok(StepOutcome {
            path: path.clone(),
            delta_s: 0.0,
            step,
            grad_norm: norm,
            displacement: 0.0,
            frozen: true,
        });
    }
    let scale = kappa / (1.0 + norm * norm).sqrt();
    let x: PathTangent = g.scaled(-scale);
    let predicted = kappa * norm * norm / (1.0 + norm * norm).sqrt();
    let mut s = step;
    let mut domain_failures = 0;
    loop {
        let cand = match path.apply(&model.surface, &x, s) {
            Ok(c) => c,
            Err(MagflowError::Domain(msg)) => {
                domain_failures += 1;
                if domain_failures > 30 {
                    return Err(MagflowError::Domain(msg));
                }
                s *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        let eb = pull_covector(&model.surface, path, &cand, &eta_unchecked(model, &cand, cfg.k));
        let d = path.difference(&model.surface, &cand);
        let delta_s = 0.5 * (eta.pair(&d) + eb.pair(&d));
        let accept = match cfg.policy {
            StepPolicy::Fixed => true,
            StepPolicy::Adaptive => delta_s <= -cfg.armijo * s * predicted,
        };
        if accept {
            return Ok(StepOutcome {
                path: cand,
                delta_s,
                step: s,
                grad_norm: norm,
                displacement: s * kappa * norm / (1.0 + norm * norm).sqrt(),
                frozen: false,
            });
        }
        s *= 0.5;
        if s < 1e-14 {
            return Ok(StepOutcome {
                path: path.clone(),
                delta_s: 0.0,
                step: 0.0,
                grad_norm: norm,
                displacement: 0.0,
                frozen: false,
            });
        }
    }
}

/// Value tracked along a flow: action for open paths, action plus capping term for loops where defined.
pub fn tracked_value(model: &LagrangianModel, path: &DiscretePath, k: f64) -> Option<f64> {
    if !path.is_closed() || !model.has_extra_sigma() {
        return action(model, path, k).ok();
    }
    loop_value(model, path, k).ok()
}

/// Run the flow until convergence, collapse, leaving the domain, or the iteration cap.
pub fn flow_until(model: &LagrangianModel, path0: &DiscretePath, cfg: &FlowConfig) -> Result<(DiscretePath, FlowTrace)> {
    path0.validate(&model.surface)?;
    let mut path = path0.clone();
    let mut value = tracked_value(model, &path, cfg.k).unwrap_or(0.0);
    let mut records = Vec::new();
    let mut step = cfg.step;
    let mut flow_time = 0.0;
    let kinetic = |p: &DiscretePath| p.kinetic(&model.surface);
    let mut reason = TerminationReason::MaxIters;
    let mut stalls = 0;
    for iter in 0..=cfg.max_iters {
        if path.period < cfg.t_floor {
            reason = TerminationReason::TCollapse;
            records.push(FlowRecord { iter, value, grad_norm: f64::NAN, period: path.period, kinetic: kinetic(&path), step });
            break;
        }
        let out = match flow_step(model, &path, cfg, step) {
            Ok(o) => o,
            Err(MagflowError::Domain(_)) => {
                reason = TerminationReason::LeftDomain;
                records.push(FlowRecord { iter, value, grad_norm: f64::NAN, period: path.period, kinetic: kinetic(&path), step });
                break;
            }
            Err(e) => return Err(e),
        };
        records.push(FlowRecord { iter, value, grad_norm: out.grad_norm, period: path.period, kinetic: kinetic(&path), step: out.step });
        if out.grad_norm <= cfg.grad_tol {
            reason = TerminationReason::Converged;
            break;
        }
        if out.frozen {
            reason = TerminationReason::TCollapse;
            break;
        }
        if iter == cfg.max_iters {
            break;
        }
        if out.step == 0.0 {
            stalls += 1;
            if stalls > 3 {
                break;
            }
            step = cfg.step;
            continue;
        }
        stalls = 0;
        value += out.delta_s;
        flow_time += out.step * if out.displacement > 0.0 { 1.0 } else { 0.0 };
        path = out.path;
        if let Some(v) = tracked_value(model, &path, cfg.k) {
            value = v;
        }
        step = match cfg.policy {
            StepPolicy::Fixed => cfg.step,
            StepPolicy::Adaptive => (out.step * 1.5).min(cfg.max_step),
        };
    }
    Ok((path, FlowTrace { records, reason, flow_time, initial_period: path0.period }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsKind {
    Convergent,
    CollapseAtZeroLevel,
    PeriodBlowup,
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsClassification {
    pub t_bounded: bool,
    pub t_away_from_zero: bool,
    pub grad_to_zero: bool,
    pub kind: PsKind,
}

/// Classify a flow trace in the Palais-Smale sense.
pub fn ps_monitor(trace: &FlowTrace) -> PsClassification {
    let t0 = trace.initial_period;
    let periods: Vec<f64> = trace.records.iter().map(|r| r.period).collect();
    let t_min = periods.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = trace.last();
    let n = trace.records.len();
    let tail = &trace.records[(2 * n) / 3..];
    let growing = tail.windows(2).filter(|w| w[1].period >= w[0].period).count() as f64
        >= 0.9 * tail.len().saturating_sub(1) as f64;
    let t_bounded = !(last.period > 4.0 * t0 && growing);
    let t_away_from_zero = t_min > 0.05 * t0 && trace.reason != TerminationReason::TCollapse;
    let grad_to_zero = trace.reason == TerminationReason::Converged;
    let kind = if trace.reason == TerminationReason::TCollapse {
        let scale = trace.records[0].value.abs().max(1e-12);
        if last.value.abs() <= 0.5 * scale.max(1e-3) || last.value.abs() < 1e-2 {
            PsKind::CollapseAtZeroLevel
        } else {
            PsKind::Undetermined
        }
    } else if !t_bounded {
        PsKind::PeriodBlowup
    } else if grad_to_zero && t_away_from_zero {
        PsKind::Convergent
    } else {
        PsKind::Undetermined
    };
    PsClassification { t_bounded, t_away_from_zero, grad_to_zero, kind }
}

/// Default neighbourhood size `delta` of the constant loops.
pub fn default_delta(surface: &SurfaceModel) -> f64 {
    let s = surface.injectivity_scale();
    1e-2 * s * s
}

/// Minimise over `T` by golden section on `ln T`.
pub fn optimal_period<F: Fn(f64) -> Option<f64>>(f: F, lo: f64, hi: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let eval = |x: f64| f(x.exp()).unwrap_or(f64::INFINITY);
    // coarse scan first: the function may be non-unimodal on huge ranges
    let samples = 48;
    let mut best = (a, eval(a));
    for i in 0..=samples {
        let x = a + (b - a) * i as f64 / samples as f64;
        let v = eval(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let width = (b - a) / samples as f64;
    a = (best.0 - width).max(lo.ln());
    b = (best.0 + width).min(hi.ln());
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d);
        }
    }
    let x = 0.5 * (a + b);
    let v = eval(x);
    if v <= best.1 {
        (x.exp(), v)
    } else {
        (best.0.exp(), best.1)
    }
}

/// Conservative estimate of `epsilon_{k,delta}`: half the least `S_k` found on sampled loops with `e = delta`.
pub fn estimate_epsilon(model: &LagrangianModel, k: f64, delta: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = &model.surface;
    let n = 48;
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let base = match s {
            SurfaceModel::FlatTorus { lx, ly } => ChartPoint::new(rng.gen_range(0.0..*lx), rng.gen_range(0.0..*ly)),
            SurfaceModel::HyperbolicHalfPlane { bbox } => {
                let y = (rng.gen_range(bbox.y_min.ln()..bbox.y_max.ln())).exp();
                let x = rng.gen_range(bbox.x_min..bbox.x_max);
                ChartPoint::new(x, y)
            }
            SurfaceModel::RoundSphere { .. } => {
                ChartPoint::in_chart(rng.gen_range(0..2), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8))
            }
        };
        let coeffs: Vec<(Vec2, Vec2)> = (0..3)
            .map(|m| {
                let damp = 1.0 / (1.0 + m as f64);
                (
                    Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * damp,
                    Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * damp,
                )
            })
            .collect();
        let shape = |scale: f64| -> DiscretePath {
            let nodes = (0..n)
                .map(|i| {
                    let t = std::f64::consts::TAU * i as f64 / n as f64;
                    let mut d = Vec2::zeros();
                    for (m, (a, b)) in coeffs.iter().enumerate() {
                        let f = (m + 1) as f64;
                        d += a * (f * t).cos() + b * (f * t).sin();
                    }
                    ChartPoint { chart: base.chart, q: base.q + scale * d }
                })
                .collect();
            DiscretePath { nodes, period: 1.0, boundary: crate::paths::BoundarySpec::Periodic }
        };
        let unit = shape(1.0);
        let e1 = unit.kinetic(s);
        if e1 <= 0.0 {
            continue;
        }
        // kinetic scales quadratically for small loops; refine once for the metric variation
        let mut scale = (0.999 * delta / e1).sqrt();
        let e_try = shape(scale).kinetic(s);
        scale *= (0.999 * delta / e_try).sqrt();
        let loop0 = shape(scale);
        if loop0.nodes.iter().any(|p| !s.in_working_region(*p)) {
            continue;
        }
        let cap = match capping_integral(model, &loop0) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let (_, v) = optimal_period(
            |t| {
                let mut p = loop0.clone();
                p.period = t;
                action(model, &p, k).ok().map(|a| a + cap)
            },
            1e-6,
            1e3,
        );
        best = best.min(v);
    }
    (0.5 * best).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_minimum() {
        let (t, v) = optimal_period(|t| Some(1.0 / (2.0 * t) + 0.5 * t), 1e-4, 1e4);
        assert!((t - 1.0).abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-10);
    }
}
