//! Critical-point search and critical-value estimation for the free-time action.

mod mane;
mod minimax;
mod newton;
mod string;
mod taimanov;

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descent::{flow_until, ps_monitor, tracked_value, FlowConfig, FlowTrace, PsClassification, PsKind, TerminationReason};
use crate::dynamics::{LagrangianModel, OrbitCertificate};
use crate::error::Result;
use crate::paths::{eta_unchecked, grad, BoundarySpec, DiscretePath, PathMetric};
use crate::surface::HomotopyClass;

pub use mane::{
    alpha_lower_bound, chain_consistent, critical_value_report, e0, intersection_points, k_q, mane_bracket,
    hyperbolic_circle_point, k0_bracket, mane_lower, mane_upper, theta_sup_norm, upper_cap, CriticalValueReport, LoopClass, ManeSearch, PotentialBasis,
    UpperBound, Witness,
};
pub use minimax::{
    gamma_family, latitude_family, minimax_sweep, mountain_pass, FamilyKind, MinimaxFamily, MountainPassConfig,
    SweepReport, SweepRow, SweepStatus,
};
pub use newton::{hessian_index, newton_polish, PolishOutcome};
pub use string::{climbing_string, Landscape, Move, StringConfig, StringOutcome};
pub use taimanov::{film_search, tau_plus_bracket, taimanov_value, TaimanovFilm, TaimanovSearch};

/// Closed interval estimate of a critical value; `hi` may be `+inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub method: String,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64, method: impl Into<String>) -> Self {
        Bracket { lo, hi, method: method.into() }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Tolerances for declaring a discrete critical point an orbit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub eta_tol: f64,
    pub closure_tol: f64,
    pub drift_tol: f64,
    pub conormal_tol: f64,
    /// Upsampling stops at this node count.
    pub max_nodes: usize,
    /// Newton polishing is only attempted once `|eta|` is below this.
    pub newton_switch: f64,
    pub index: bool,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            eta_tol: 1e-6,
            closure_tol: 1e-4,
            drift_tol: 1e-6,
            conormal_tol: 1e-4,
            max_nodes: 1024,
            newton_switch: 1e-2,
            index: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPointReport {
    #[serde(skip)]
    pub path: Option<DiscretePath>,
    pub k: f64,
    /// Action, loop value, or tracked value of the candidate.
    pub value: Option<f64>,
    pub period: f64,
    pub nodes: usize,
    pub eta_norm: f64,
    pub certificate: Option<OrbitCertificate>,
    pub hessian_index: Option<usize>,
    pub homotopy_class: Option<HomotopyClass>,
    pub is_orbit: bool,
    pub termination: Option<TerminationReason>,
    pub palais_smale: Option<PsClassification>,
    /// Endpoint conormal defect at energy `k` (conormal paths only).
    pub conormal_residual: Option<f64>,
    /// Set when no conormal orbit can exist at this energy.
    pub infeasible: bool,
    pub notes: Vec<String>,
    /// Descent history (minimisation only).
    #[serde(skip)]
    pub trace: Option<FlowTrace>,
}

impl CriticalPointReport {
    fn failed(path: &DiscretePath, k: f64, eta_norm: f64, note: String) -> Self {
        CriticalPointReport {
            path: Some(path.clone()),
            k,
            value: None,
            period: path.period,
            nodes: path.nodes.len(),
            eta_norm,
            certificate: None,
            hessian_index: None,
            homotopy_class: None,
            is_orbit: false,
            termination: None,
            palais_smale: None,
            conormal_residual: None,
            infeasible: false,
            notes: vec![note],
            trace: None,
        }
    }
}

/// Polish, upsample and shoot until the candidate is certified or the node budget runs out.
pub fn certify_candidate(
    model: &LagrangianModel,
    path: &DiscretePath,
    k: f64,
    cfg: &CertifyConfig,
) -> Result<CriticalPointReport> {
    let norm_of = |p: &DiscretePath| -> Result<f64> { Ok(grad(model, p, &eta_unchecked(model, p, k), PathMetric::H1)?.1) };
    let mut cur = path.clone();
    let mut eta_norm = norm_of(&cur)?;
    let mut notes = Vec::new();
    let mut certificate = None;
    loop {
        if eta_norm > cfg.eta_tol && eta_norm < cfg.newton_switch && newton_dim(&cur) <= 2200 {
            let out = newton_polish(model, &cur, k, 0.01 * cfg.eta_tol, 25)?;
            cur = out.path;
            eta_norm = out.eta_norm;
        }
        let steps = (64 * cur.segment_count()).max(8192);
        match model.certify(&cur, steps) {
            Ok((_, cert)) => certificate = Some(cert),
            Err(e) => notes.push(format!("shooting failed: {e}")),
        }
        let ok = eta_norm < cfg.eta_tol
            && certificate.map_or(false, |c| c.passes(cfg.closure_tol, cfg.drift_tol, cfg.conormal_tol));
        if ok || 2 * cur.segment_count() > cfg.max_nodes || eta_norm >= cfg.newton_switch {
            break;
        }
        cur = cur.resample(&model.surface, 2 * cur.segment_count())?;
        eta_norm = norm_of(&cur)?;
        notes.push(format!("upsampled to {} segments", cur.segment_count()));
    }
    let is_orbit = eta_norm < cfg.eta_tol
        && certificate.map_or(false, |c| c.passes(cfg.closure_tol, cfg.drift_tol, cfg.conormal_tol));
    let hessian = if cfg.index && eta_norm < 1e-4 && newton_dim(&cur) <= 2200 {
        hessian_index(model, &cur, k).ok()
    } else {
        None
    };
    let class = cur.homotopy_class(&model.surface).ok();
    Ok(CriticalPointReport {
        value: tracked_value(model, &cur, k),
        period: cur.period,
        nodes: cur.nodes.len(),
        path: Some(cur),
        k,
        eta_norm,
        certificate,
        hessian_index: hessian,
        homotopy_class: class,
        is_orbit,
        termination: None,
        palais_smale: None,
        conormal_residual: None,
        infeasible: false,
        notes,
        trace: None,
    })
}

fn newton_dim(path: &DiscretePath) -> usize {
    2 * path.nodes.len() + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeConfig {
    pub flow: FlowConfig,
    pub certify: CertifyConfig,
}

impl MinimizeConfig {
    pub fn new(k: f64) -> Self {
        MinimizeConfig { flow: FlowConfig::new(k), certify: CertifyConfig::default() }
    }
}

/// Gradient-flow minimisation followed by Newton polishing and shooting certification.
pub fn minimize(model: &LagrangianModel, path0: &DiscretePath, k: f64, cfg: &MinimizeConfig) -> Result<CriticalPointReport> {
    path0.validate(&model.surface)?;
    let class0 = path0.homotopy_class(&model.surface).ok();
    let mut flow = cfg.flow.clone();
    flow.k = k;
    flow.grad_tol = flow.grad_tol.max(0.1 * cfg.certify.newton_switch);
    let (path, trace) = flow_until(model, path0, &flow)?;
    let ps = ps_monitor(&trace);
    let last = *trace.last();
    let blocked = matches!(trace.reason, TerminationReason::TCollapse | TerminationReason::LeftDomain)
        || ps.kind == PsKind::PeriodBlowup
        || !(last.grad_norm < cfg.certify.newton_switch);
    let mut report = if blocked {
        let mut r = CriticalPointReport::failed(&path, k, last.grad_norm, format!("flow stopped: {:?} ({:?})", trace.reason, ps.kind));
        r.value = tracked_value(model, &path, k);
        r.homotopy_class = path.homotopy_class(&model.surface).ok();
        r
    } else {
        certify_candidate(model, &path, k, &cfg.certify)?
    };
    if let BoundarySpec::Conormal { q0, q1, .. } = &path0.boundary {
        let final_path = report.path.as_ref().unwrap_or(&path);
        report.conormal_residual = model.conormal_shell_residual(final_path, k).ok();
        let need = model.min_conormal_energy(q0).max(model.min_conormal_energy(q1));
        if k < need {
            report.infeasible = true;
            report.is_orbit = false;
            report.notes.push(format!("no conormal orbit below energy {need:.6}: the endpoint conditions force |v| >= sqrt(2 * {need:.6})"));
        }
    }
    report.termination = Some(trace.reason);
    report.palais_smale = Some(ps);
    if let (Some(a), Some(b)) = (&class0, &report.homotopy_class) {
        if a != b && report.nodes > 0 && !matches!(trace.reason, TerminationReason::TCollapse) {
            report.is_orbit = false;
            report.notes.push(format!("homotopy class changed from {a:?} to {b:?}"));
        }
    }
    report.trace = Some(trace);
    Ok(report)
}

/// Write `(quantity, lo, hi, method)` rows.
pub fn write_brackets_csv(path: &Path, rows: &[(String, Bracket)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["quantity", "lo", "hi", "method"])?;
    for (name, b) in rows {
        w.write_record(&[name.clone(), format!("{:.12e}", b.lo), format!("{:.12e}", b.hi), b.method.clone()])?;
    }
    w.flush()?;
    Ok(())
}
