//! Config-driven experiment runner behind the `magflow` binary.
//!
//! A run resolves a [`RunConfig`] (TOML) and an optional preset into a validated model, then
//! executes one subcommand and writes CSV tables plus a `summary.json` into the output directory.
//! Config problems are reported before anything is written.

use std::f64::consts::TAU;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::critical::{
    chain_consistent, critical_value_report, e0, film_search, minimax_sweep, minimize, mountain_pass, tau_plus_bracket,
    theta_sup_norm, write_brackets_csv, Bracket, CertifyConfig, CriticalPointReport, ManeSearch, MinimizeConfig,
    MountainPassConfig, PotentialBasis, StringConfig, SweepStatus, TaimanovSearch,
};
use crate::descent::FlowConfig;
use crate::dynamics::{LagrangianModel, QuadraticBounds};
use crate::error::{MagflowError, Result};
use crate::fields::{Expression, OneForm, ScalarField, SmoothCutoff};
use crate::paths::{action, loop_value, BoundarySpec, DiscretePath, PathMetric, Submanifold};
use crate::presets::{preset, presets, EnergyGrid, FamilySpec, Preset};
use crate::surface::{ChartPoint, Rect, SurfaceModel, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Op {
    /// Discrete free-time action of the configured path.
    ActionEval,
    /// Integrate the flow from an initial condition.
    Shoot,
    /// Descend from the configured path and certify the limit.
    Minimize,
    /// Deform the configured minimax family and certify its top.
    MountainPass,
    /// Mountain-pass values over the energy grid.
    Sweep,
    /// Brackets for the critical values.
    Mane,
    /// Film functional search and the tau_+ bracket (torus only).
    Taimanov,
    /// Critical-value report plus the ordering checks.
    ChainCheck,
    /// List the built-in presets.
    Presets,
}

#[derive(Debug, Parser)]
#[command(name = "magflow", version, about = "Periodic and conormal orbits of magnetic flows on surfaces")]
pub struct Cli {
    #[arg(value_enum)]
    pub op: Op,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in model (see `magflow presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<f64>,
    /// Energy grid `lo:hi:n`.
    #[arg(long, value_parser = parse_grid)]
    pub k_grid: Option<EnergyGrid>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parse `lo:hi:n`.
pub fn parse_grid(s: &str) -> std::result::Result<EnergyGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(format!("expected lo:hi:n, got {s:?}"));
    };
    let lo = f64::from_str(lo.trim()).map_err(|e| format!("bad lower end {lo:?}: {e}"))?;
    let hi = f64::from_str(hi.trim()).map_err(|e| format!("bad upper end {hi:?}: {e}"))?;
    let n = usize::from_str(n.trim()).map_err(|e| format!("bad point count {n:?}: {e}"))?;
    if !(lo.is_finite() && hi.is_finite()) || n == 0 || (n > 1 && !(hi > lo)) {
        return Err(format!("grid {s:?} must have finite lo < hi and n >= 1"));
    }
    Ok(EnergyGrid { lo, hi, n })
}

/// Outcome of a run that got past config validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    NumericalFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::NumericalFailure => 2,
        }
    }

    fn from_ok(ok: bool) -> Self {
        if ok {
            Status::Success
        } else {
            Status::NumericalFailure
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub k: Option<f64>,
    pub k_grid: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub surface: Option<SurfaceConfig>,
    pub lagrangian: Option<LagrangianConfig>,
    pub boundary: Option<BoundaryConfig>,
    pub path: Option<PathConfig>,
    pub family: Option<FamilyConfig>,
    pub shoot: Option<ShootConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SurfaceConfig {
    FlatTorus {
        #[serde(default = "one")]
        lx: f64,
        #[serde(default = "one")]
        ly: f64,
    },
    Hyperbolic { x_min: f64, x_max: f64, y_min: f64, y_max: f64 },
    Sphere {
        #[serde(default = "one")]
        radius: f64,
    },
}

/// A number or an expression string in `x`, `y` (and `z` on the sphere).
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum FieldConfig {
    Number(f64),
    Expr(String),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ThetaConfig {
    Horocycle {
        #[serde(default = "one")]
        strength: f64,
    },
    CutoffStrip {
        #[serde(default = "one")]
        amplitude: f64,
        lower: f64,
        upper: f64,
        ramp: f64,
        #[serde(default = "one")]
        period: f64,
    },
    Expr { x: String, y: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianConfig {
    pub theta: Option<ThetaConfig>,
    pub potential: Option<FieldConfig>,
    pub sigma: Option<FieldConfig>,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubmanifoldConfig {
    Point { x: f64, y: f64 },
    HorizontalLine { y: f64 },
    VerticalLine { x: f64 },
    Circle { x: f64, y: f64, radius: f64 },
}

impl SubmanifoldConfig {
    fn build(&self) -> Submanifold {
        match *self {
            SubmanifoldConfig::Point { x, y } => Submanifold::Point { at: ChartPoint::new(x, y) },
            SubmanifoldConfig::HorizontalLine { y } => Submanifold::HorizontalLine { y },
            SubmanifoldConfig::VerticalLine { x } => Submanifold::VerticalLine { x },
            SubmanifoldConfig::Circle { x, y, radius } => Submanifold::Circle { center: ChartPoint::new(x, y), radius },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub q0: SubmanifoldConfig,
    pub q1: SubmanifoldConfig,
}

fn default_nodes() -> usize {
    128
}

/// Starting path. Without `period` the path is traversed at speed `sqrt(2k)`.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathConfig {
    /// A path CSV as written by earlier runs.
    File { file: PathBuf },
    /// Euclidean chart circle, counterclockwise unless `clockwise`.
    Circle {
        x: f64,
        y: f64,
        radius: f64,
        #[serde(default = "default_nodes")]
        nodes: usize,
        #[serde(default)]
        clockwise: bool,
        period: Option<f64>,
    },
    /// Straight loop of winding `(m, n)` on the torus through `(x0, y0)`.
    Winding {
        m: i64,
        n: i64,
        #[serde(default)]
        x0: f64,
        #[serde(default)]
        y0: f64,
        #[serde(default = "default_nodes")]
        nodes: usize,
        period: Option<f64>,
    },
    /// Open chart segment; its endpoints are tied to the `[boundary]` submanifolds.
    Segment {
        from: [f64; 2],
        to: [f64; 2],
        #[serde(default = "default_nodes")]
        nodes: usize,
        period: Option<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// From the constant path at `(x, y)` with period `t0` to the configured path.
    Gamma {
        x: f64,
        y: f64,
        #[serde(default = "default_t0")]
        t0: f64,
        #[serde(default = "default_members")]
        members: usize,
    },
    Latitude {
        #[serde(default = "default_members")]
        members: usize,
        #[serde(default = "default_latitude_nodes")]
        nodes: usize,
        #[serde(default = "one")]
        t0: f64,
    },
}

fn default_t0() -> f64 {
    0.05
}

fn default_members() -> usize {
    24
}

fn default_latitude_nodes() -> usize {
    256
}

fn default_steps() -> usize {
    10_000
}

/// Initial condition for `shoot`; missing pieces come from the configured path.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootConfig {
    pub start: Option<[f64; 2]>,
    #[serde(default)]
    pub chart: u8,
    /// Initial velocity; without it the path's initial direction is rescaled to energy `k`.
    pub velocity: Option<[f64; 2]>,
    pub period: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub metric: PathMetric,
    pub t_floor: f64,
    pub eta_tol: f64,
    pub closure_tol: f64,
    pub drift_tol: f64,
    pub conormal_tol: f64,
    pub max_nodes: usize,
    pub string_rounds: usize,
    /// Amplitude of the seeded random perturbation applied to the starting path nodes.
    pub perturb: f64,
    pub mane_tol: f64,
    pub fourier: usize,
    pub film_grid: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let flow = FlowConfig::new(0.0);
        let cert = CertifyConfig::default();
        SolverConfig {
            step: flow.step,
            max_iters: flow.max_iters,
            grad_tol: flow.grad_tol,
            metric: flow.metric,
            t_floor: flow.t_floor,
            eta_tol: cert.eta_tol,
            closure_tol: cert.closure_tol,
            drift_tol: cert.drift_tol,
            conormal_tol: cert.conormal_tol,
            max_nodes: cert.max_nodes,
            string_rounds: StringConfig::default().rounds,
            perturb: 0.0,
            mane_tol: ManeSearch::default().tol,
            fourier: PotentialBasis::default().fourier,
            film_grid: TaimanovSearch::default().grid,
        }
    }
}

impl SolverConfig {
    fn certify(&self) -> CertifyConfig {
        CertifyConfig {
            eta_tol: self.eta_tol,
            closure_tol: self.closure_tol,
            drift_tol: self.drift_tol,
            conormal_tol: self.conormal_tol,
            max_nodes: self.max_nodes,
            ..CertifyConfig::default()
        }
    }

    fn minimize(&self, k: f64) -> MinimizeConfig {
        let mut flow = FlowConfig::new(k);
        flow.step = self.step;
        flow.max_iters = self.max_iters;
        flow.grad_tol = self.grad_tol;
        flow.metric = self.metric;
        flow.t_floor = self.t_floor;
        MinimizeConfig { flow, certify: self.certify() }
    }

    fn mountain_pass(&self) -> MountainPassConfig {
        MountainPassConfig {
            string: StringConfig { rounds: self.string_rounds, ..StringConfig::default() },
            metric: self.metric,
            t_floor: self.t_floor,
            certify: self.certify(),
        }
    }

    fn mane(&self) -> ManeSearch {
        ManeSearch { tol: self.mane_tol, ..ManeSearch::default() }
    }

    fn taimanov(&self) -> TaimanovSearch {
        TaimanovSearch { grid: self.film_grid, ..TaimanovSearch::default() }
    }
}

/// Where a config key lives, for line-anchored messages.
struct Source<'a> {
    name: String,
    text: &'a str,
}

impl Source<'_> {
    /// 1-based line of `key` inside `[section]` (top level when `section` is empty).
    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.trim();
            if let Some(h) = line.strip_prefix('[') {
                current = h.trim_end_matches(']').trim().to_string();
                if key.is_empty() && current == section {
                    return Some(i + 1);
                }
                continue;
            }
            if current == section && !key.is_empty() {
                if let Some(rest) = line.strip_prefix(key) {
                    if rest.trim_start().starts_with('=') {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn error(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> MagflowError {
        let at = match self.line_of(section, key) {
            Some(l) => format!("{}:{l}", self.name),
            None => self.name.clone(),
        };
        let what = match (section.is_empty(), key.is_empty()) {
            (true, _) => key.to_string(),
            (false, true) => format!("[{section}]"),
            (false, false) => format!("[{section}] {key}"),
        };
        MagflowError::Config(format!("{at}: {what}: {msg}"))
    }
}

/// A fully resolved run: everything needed to execute any subcommand.
pub struct Run {
    pub label: String,
    pub model: LagrangianModel,
    pub k: Option<f64>,
    pub grid: Option<EnergyGrid>,
    pub boundary: Option<(Submanifold, Submanifold)>,
    pub seed: u64,
    pub out: PathBuf,
    pub solver: SolverConfig,
    path: PathChoice,
    family: Option<FamilySpec>,
    shoot: Option<ShootConfig>,
}

enum PathChoice {
    None,
    Preset(Box<Preset>),
    Config(PathConfig),
}

fn field(cfg: &FieldConfig, src: &Source, key: &str) -> Result<ScalarField> {
    match cfg {
        FieldConfig::Number(v) => Ok(ScalarField::Constant(*v)),
        FieldConfig::Expr(s) => {
            Expression::parse(s).map(ScalarField::Expr).map_err(|e| src.error("lagrangian", key, e))
        }
    }
}

fn build_model(surface: &SurfaceConfig, lag: &LagrangianConfig, src: &Source) -> Result<LagrangianModel> {
    let surf = match *surface {
        SurfaceConfig::FlatTorus { lx, ly } => SurfaceModel::flat_torus(lx, ly),
        SurfaceConfig::Hyperbolic { x_min, x_max, y_min, y_max } => {
            SurfaceModel::hyperbolic(Rect { x_min, x_max, y_min, y_max })
        }
        SurfaceConfig::Sphere { radius } => SurfaceModel::sphere(radius),
    }
    .map_err(|e| src.error("surface", "", e))?;
    let theta = match &lag.theta {
        None => OneForm::Zero,
        Some(ThetaConfig::Horocycle { strength }) => OneForm::Horocycle { strength: *strength },
        Some(ThetaConfig::CutoffStrip { amplitude, lower, upper, ramp, period }) => {
            if !(lower < upper && *ramp > 0.0 && 2.0 * ramp <= upper - lower && *period > 0.0) {
                return Err(src.error("lagrangian", "theta", "cutoff needs lower < upper, 0 < 2 ramp <= upper - lower"));
            }
            OneForm::CutoffStrip {
                amplitude: *amplitude,
                profile: SmoothCutoff { lower: *lower, upper: *upper, ramp: *ramp },
                period: *period,
            }
        }
        Some(ThetaConfig::Expr { x, y }) => {
            let px = Expression::parse(x).map_err(|e| src.error("lagrangian", "theta", e))?;
            let py = Expression::parse(y).map_err(|e| src.error("lagrangian", "theta", e))?;
            OneForm::Expr { x: px, y: py }
        }
    };
    let potential = lag.potential.as_ref().map(|f| field(f, src, "potential")).transpose()?.unwrap_or_else(ScalarField::zero);
    let sigma = lag.sigma.as_ref().map(|f| field(f, src, "sigma")).transpose()?.unwrap_or_else(ScalarField::zero);
    let a = lag.a.unwrap_or(0.5);
    let err = |e: MagflowError| src.error("lagrangian", "", e);
    let b = match lag.b {
        Some(b) => b,
        None => {
            // L >= a|v|^2 - b on |v| <= 10 holds with b = 10 |theta| + max V when a = 1/2
            let probe = LagrangianModel::new(surf.clone(), theta.clone(), potential.clone(), sigma.clone(), QuadraticBounds { a, b: 1e12 })
                .map_err(err)?;
            10.0 * theta_sup_norm(&probe) + e0(&probe).max(0.0) + 1e-9
        }
    };
    LagrangianModel::new(surf, theta, potential, sigma, QuadraticBounds { a, b }).map_err(err)
}

/// Merge command-line flags, the config file and the preset into a validated run.
pub fn resolve(cli: &Cli) -> Result<Run> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| MagflowError::Config(format!("{}: cannot read: {e}", p.display())))?,
        None => String::new(),
    };
    let src = Source { name: cli.config.as_ref().map_or("<flags>".into(), |p| p.display().to_string()), text: &text };
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| MagflowError::Config(format!("{}: {e}", src.name)))?;

    let preset_name = cli.preset.clone().or_else(|| cfg.preset.clone());
    let base = match &preset_name {
        Some(n) => Some(preset(n).map_err(|e| match cli.preset {
            Some(_) => e,
            None => src.error("", "preset", e),
        })?),
        None => None,
    };
    if cfg.lagrangian.is_some() && cfg.surface.is_none() {
        return Err(src.error("lagrangian", "", "a [lagrangian] table needs a [surface] table"));
    }
    let model = match (&cfg.surface, &base) {
        (Some(s), _) => build_model(s, cfg.lagrangian.as_ref().unwrap_or(&LagrangianConfig::default()), &src)?,
        (None, Some(p)) => p.model.clone(),
        (None, None) => return Err(MagflowError::Config("no model: give --preset or a [surface] table".into())),
    };
    let custom_model = cfg.surface.is_some();

    let k = cli.k.or(cfg.k).or_else(|| base.as_ref().map(|p| p.k));
    if let Some(k) = k {
        if !k.is_finite() {
            return Err(src.error("", "k", format!("energy must be finite, got {k}")));
        }
    }
    let grid = match (&cli.k_grid, &cfg.k_grid) {
        (Some(g), _) => Some(*g),
        (None, Some(s)) => Some(parse_grid(s).map_err(|e| src.error("", "k_grid", e))?),
        (None, None) => base.as_ref().map(|p| p.k_grid),
    };
    let boundary = match &cfg.boundary {
        Some(b) => Some((b.q0.build(), b.q1.build())),
        None if !custom_model => base.as_ref().and_then(|p| p.boundary.clone()),
        None => None,
    };
    let path = match (cfg.path, &base) {
        (Some(p), _) => PathChoice::Config(p),
        (None, Some(b)) if !custom_model => PathChoice::Preset(Box::new(b.clone())),
        _ => PathChoice::None,
    };
    let family = match &cfg.family {
        Some(FamilyConfig::Latitude { members, nodes, t0 }) => {
            Some(FamilySpec::Latitude { members: *members, nodes: *nodes, t0: *t0 })
        }
        Some(FamilyConfig::Gamma { .. }) => None,
        None if !custom_model => base.as_ref().and_then(|p| p.family.clone()),
        None => None,
    };
    let solver = cfg.solver;
    if !(solver.perturb >= 0.0) || solver.max_nodes < 4 || solver.film_grid < 8 {
        return Err(src.error("solver", "", "perturb must be >= 0, max_nodes >= 4, film_grid >= 8"));
    }
    let label = match (&preset_name, custom_model) {
        (Some(n), false) => n.clone(),
        _ => "custom".to_string(),
    };
    let mut run = Run {
        label,
        model,
        k,
        grid,
        boundary,
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        out: cli.out.clone().or(cfg.out).unwrap_or_else(|| PathBuf::from("magflow-out")),
        solver,
        path,
        family,
        shoot: cfg.shoot,
    };
    if let Some(FamilyConfig::Gamma { x, y, t0, members }) = cfg.family {
        // the end of the family is the configured path, built at the run energy
        let kk = run.k.ok_or_else(|| src.error("family", "", "a gamma family needs an energy"))?;
        let end = run.start_path(kk).map_err(|e| src.error("family", "", e))?;
        run.family = Some(FamilySpec::Gamma { p: ChartPoint::new(x, y), t0, end, members });
    }
    Ok(run)
}

impl Run {
    fn need_k(&self) -> Result<f64> {
        self.k.ok_or_else(|| MagflowError::Config("no energy: give --k, `k = ...` or a preset".into()))
    }

    fn need_grid(&self) -> Result<EnergyGrid> {
        self.grid.ok_or_else(|| MagflowError::Config("no energy grid: give --k-grid, `k_grid = ...` or a preset".into()))
    }

    fn at_speed(&self, mut p: DiscretePath, period: Option<f64>, k: f64) -> Result<DiscretePath> {
        p.period = match period {
            Some(t) => t,
            None if k > 0.0 => p.length(&self.model.surface) / (2.0 * k).sqrt(),
            None => return Err(MagflowError::Config("a path without `period` needs k > 0".into())),
        };
        if !(p.period > 0.0 && p.period.is_finite()) {
            return Err(MagflowError::Config(format!("path period must be positive, got {}", p.period)));
        }
        Ok(p)
    }

    /// The starting path at energy `k`, before any perturbation.
    pub fn start_path(&self, k: f64) -> Result<DiscretePath> {
        let s = &self.model.surface;
        let path = match &self.path {
            PathChoice::None => return Err(MagflowError::Config("no path: add a [path] table or use a preset".into())),
            PathChoice::Preset(p) => p.default_path(k).map_err(|e| MagflowError::Config(e.to_string()))?,
            PathChoice::Config(PathConfig::File { file }) => DiscretePath::read_csv(file)
                .map_err(|e| MagflowError::Config(format!("{}: {e}", file.display())))?
                .0,
            PathChoice::Config(PathConfig::Circle { x, y, radius, nodes, clockwise, period }) => {
                let sign = if *clockwise { -1.0 } else { 1.0 };
                let pts = (0..*nodes)
                    .map(|i| {
                        let t = TAU * i as f64 / *nodes as f64;
                        s.normalize(ChartPoint::new(x + radius * t.cos(), y + sign * radius * t.sin()))
                    })
                    .collect();
                self.at_speed(DiscretePath::closed(pts, 1.0)?, *period, k)?
            }
            PathChoice::Config(PathConfig::Winding { m, n, x0, y0, nodes, period }) => {
                let Some((lx, ly)) = s.lattice() else {
                    return Err(MagflowError::Config("winding paths need a torus".into()));
                };
                let pts = (0..*nodes)
                    .map(|i| {
                        let t = i as f64 / *nodes as f64;
                        s.normalize(ChartPoint::new(x0 + *m as f64 * lx * t, y0 + *n as f64 * ly * t))
                    })
                    .collect();
                self.at_speed(DiscretePath::closed(pts, 1.0)?, *period, k)?
            }
            PathChoice::Config(PathConfig::Segment { from, to, nodes, period }) => {
                let Some((q0, q1)) = &self.boundary else {
                    return Err(MagflowError::Config("a segment path needs a [boundary] table".into()));
                };
                let (a, b) = (Vec2::new(from[0], from[1]), Vec2::new(to[0], to[1]));
                let pts = (0..=*nodes)
                    .map(|i| {
                        let q = a + (b - a) * (i as f64 / *nodes as f64);
                        ChartPoint::new(q.x, q.y)
                    })
                    .collect();
                let open = DiscretePath::open(pts, 1.0, q0.clone(), q1.clone())?;
                self.at_speed(open, *period, k)?
            }
        };
        path.validate(s).map_err(|e| MagflowError::Config(format!("starting path: {e}")))?;
        Ok(path)
    }

    /// Starting path with the seeded perturbation applied to interior-free node positions.
    fn perturbed_path(&self, k: f64) -> Result<DiscretePath> {
        let mut p = self.start_path(k)?;
        if self.solver.perturb > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let amp = self.solver.perturb;
            let open = !p.is_closed();
            let last = p.nodes.len() - 1;
            for (i, node) in p.nodes.iter_mut().enumerate() {
                if open && (i == 0 || i == last) {
                    continue;
                }
                let d = Vec2::new(rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp));
                *node = self.model.surface.normalize(ChartPoint { chart: node.chart, q: node.q + d });
            }
            p.validate(&self.model.surface)?;
        }
        Ok(p)
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let f = File::create(path)?;
    serde_json::to_writer_pretty(f, v)?;
    Ok(())
}

/// Shortest decimal form at 12 significant digits.
pub fn format_value(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{:.*e}", 11, v);
    let parsed: f64 = s.parse().unwrap_or(v);
    if parsed == 0.0 {
        "0".into()
    } else if parsed.abs() < 1e-4 || parsed.abs() >= 1e15 {
        format!("{parsed:e}")
    } else {
        parsed.to_string()
    }
}

fn header(run: &Run, op: Op) -> Value {
    json!({
        "op": op.to_possible_value().map(|v| v.get_name().to_string()),
        "label": run.label,
        "seed": run.seed,
        "model": {
            "surface": run.model.surface,
            "theta": run.model.theta.describe(),
            "potential": run.model.potential.describe(),
            "sigma": run.model.sigma.describe(),
            "bounds": run.model.bounds,
        },
    })
}

fn report_json(r: &CriticalPointReport) -> Result<Value> {
    Ok(serde_json::to_value(r)?)
}

/// Execute a resolved run; artifacts go to `run.out`.
pub fn execute(run: &Run, op: Op) -> Result<Status> {
    if op == Op::Presets {
        execute_presets()?;
        return Ok(Status::Success);
    }
    // everything that can be checked without numerics is checked before the output directory exists
    let k = match op {
        Op::Sweep | Op::Mane | Op::ChainCheck | Op::Taimanov => run.k,
        _ => Some(run.need_k()?),
    };
    match op {
        Op::ActionEval | Op::Minimize | Op::Shoot => {
            run.start_path(run.need_k()?)?;
        }
        Op::MountainPass => {
            if run.family.is_none() {
                return Err(MagflowError::Config("mountain-pass needs a [family] table or a preset with a family".into()));
            }
        }
        Op::Sweep => {
            run.need_grid()?;
            if run.family.is_none() {
                return Err(MagflowError::Config("sweep needs a [family] table or a preset with a family".into()));
            }
        }
        Op::Taimanov => {
            if run.model.surface.lattice().is_none() {
                return Err(MagflowError::Config("the film functional is implemented on the torus only".into()));
            }
        }
        _ => {}
    }
    fs::create_dir_all(&run.out)?;
    let mut summary = header(run, op);
    let status = match op {
        Op::ActionEval => action_eval(run, k.unwrap_or_default(), &mut summary)?,
        Op::Shoot => shoot(run, k.unwrap_or_default(), &mut summary)?,
        Op::Minimize => run_minimize(run, k.unwrap_or_default(), &mut summary)?,
        Op::MountainPass => run_mountain_pass(run, k.unwrap_or_default(), &mut summary)?,
        Op::Sweep => sweep(run, &mut summary)?,
        Op::Mane => mane(run, false, &mut summary)?,
        Op::ChainCheck => mane(run, true, &mut summary)?,
        Op::Taimanov => taimanov(run, k, &mut summary)?,
        Op::Presets => Status::Success,
    };
    summary["status"] = json!(match status {
        Status::Success => "success",
        Status::NumericalFailure => "numerical-failure",
    });
    write_json(&run.out.join("summary.json"), &summary)?;
    Ok(status)
}

fn action_eval(run: &Run, k: f64, summary: &mut Value) -> Result<Status> {
    let path = run.perturbed_path(k)?;
    path.write_csv(&run.out.join("path.csv"), k)?;
    let m = &run.model;
    let value = if m.has_extra_sigma() { loop_value(m, &path, k)? } else { action(m, &path, k)? };
    println!("{}", format_value(value));
    summary["k"] = json!(k);
    summary["action"] = json!(value);
    summary["period"] = json!(path.period);
    summary["nodes"] = json!(path.nodes.len());
    summary["length"] = json!(path.length(&m.surface));
    if let BoundarySpec::Conormal { .. } = path.boundary {
        summary["conormal_residual"] = json!(m.conormal_shell_residual(&path, k).ok());
    }
    Ok(Status::Success)
}

fn shoot(run: &Run, k: f64, summary: &mut Value) -> Result<Status> {
    let m = &run.model;
    let s = &m.surface;
    let cfg = run.shoot.as_ref();
    let path = run.start_path(k).ok();
    let (start, dir, period) = match (cfg.and_then(|c| c.start), &path) {
        (Some(q), _) => {
            let chart = cfg.map_or(0, |c| c.chart);
            (ChartPoint::in_chart(chart, q[0], q[1]), None, None)
        }
        (None, Some(p)) => {
            let (q, v) = p.initial_condition(s)?;
            (q, Some(v), Some(p.period))
        }
        (None, None) => return Err(MagflowError::Config("shoot needs [shoot] start = [x, y] or a path".into())),
    };
    let v0 = match (cfg.and_then(|c| c.velocity), dir) {
        (Some(v), _) => Vec2::new(v[0], v[1]),
        (None, Some(d)) => {
            // same direction, speed fixed by the energy
            let kin = k - m.potential_value(start);
            if !(kin > 0.0) {
                return Err(MagflowError::Precondition(format!("energy {k} is below the potential at the start")));
            }
            let lam = s.conformal_factor(start.q);
            let norm = (lam * d.norm_squared()).sqrt();
            if !(norm > 0.0) {
                return Err(MagflowError::Precondition("the path has zero initial velocity".into()));
            }
            d * ((2.0 * kin).sqrt() / norm)
        }
        (None, None) => return Err(MagflowError::Config("shoot needs [shoot] velocity = [vx, vy]".into())),
    };
    let period = cfg.and_then(|c| c.period).or(period).ok_or_else(|| MagflowError::Config("shoot needs [shoot] period".into()))?;
    let steps = cfg.map_or(default_steps(), |c| c.steps);
    let traj = m.shoot(start, v0, period, steps)?;
    let dt = period / steps as f64;
    let mut w = csv::Writer::from_writer(File::create(run.out.join("trajectory.csv"))?);
    w.write_record(["t", "x", "y", "chart", "vx", "vy"])?;
    for (i, (p, v)) in traj.nodes.iter().zip(&traj.velocities).enumerate() {
        w.write_record(&[
            format!("{:.17e}", i as f64 * dt),
            format!("{:.17e}", p.q.x),
            format!("{:.17e}", p.q.y),
            p.chart.to_string(),
            format!("{:.17e}", v.x),
            format!("{:.17e}", v.y),
        ])?;
    }
    w.flush()?;
    let end = *traj.nodes.last().expect("trajectory has nodes");
    summary["k"] = json!(k);
    summary["period"] = json!(period);
    summary["steps"] = json!(steps);
    summary["energy"] = json!(m.energy(start, v0)?);
    summary["energy_drift"] = json!(traj.energy_drift);
    summary["return_distance"] = json!(s.chart_distance(start, end));
    summary["end"] = json!([end.q.x, end.q.y, end.chart]);
    Ok(Status::Success)
}

fn run_minimize(run: &Run, k: f64, summary: &mut Value) -> Result<Status> {
    let path0 = run.perturbed_path(k)?;
    let report = minimize(&run.model, &path0, k, &run.solver.minimize(k))?;
    if let Some(p) = &report.path {
        p.write_csv(&run.out.join("path.csv"), k)?;
    }
    if let Some(t) = &report.trace {
        t.write_csv(&run.out.join("trace.csv"))?;
    }
    summary["report"] = report_json(&report)?;
    Ok(Status::from_ok(report.is_orbit || report.infeasible))
}

fn run_mountain_pass(run: &Run, k: f64, summary: &mut Value) -> Result<Status> {
    let family = run.family.as_ref().expect("checked before the run");
    let built = family.build(&run.model, k)?;
    match mountain_pass(&run.model, &built, k, &run.solver.mountain_pass()) {
        Ok((value, report)) => {
            if let Some(p) = &report.path {
                p.write_csv(&run.out.join("path.csv"), k)?;
            }
            summary["minimax_value"] = json!(value);
            summary["report"] = report_json(&report)?;
            Ok(Status::from_ok(report.is_orbit))
        }
        Err(MagflowError::InvalidFamily(m)) => {
            summary["error"] = json!(format!("invalid family: {m}"));
            Ok(Status::NumericalFailure)
        }
        Err(e) => Err(e),
    }
}

fn sweep(run: &Run, summary: &mut Value) -> Result<Status> {
    let family = run.family.as_ref().expect("checked before the run");
    let ks = run.need_grid()?.values();
    let report = minimax_sweep(&run.model, |k| family.build(&run.model, k), &ks, &run.solver.mountain_pass())?;
    report.write_csv(&run.out.join("sweep.csv"))?;
    let ok = report.rows.iter().all(|r| r.status == SweepStatus::Certified);
    summary["sweep"] = serde_json::to_value(&report)?;
    Ok(Status::from_ok(ok))
}

fn mane(run: &Run, check: bool, summary: &mut Value) -> Result<Status> {
    let m = &run.model;
    let basis = m.surface.lattice().map(|_| PotentialBasis { fourier: run.solver.fourier, ..PotentialBasis::default() });
    let boundary = run.boundary.as_ref().map(|(a, b)| (a, b));
    let report = critical_value_report(m, boundary, &run.solver.mane(), basis.as_ref(), None)?;
    let rows = report.rows();
    write_brackets_csv(&run.out.join("brackets.csv"), &rows)?;
    for (name, b) in &rows {
        println!("{name:<10} [{}, {}]", format_value(b.lo), format_value(b.hi));
    }
    summary["critical_values"] = serde_json::to_value(&report)?;
    if !check {
        return Ok(Status::Success);
    }
    let tol = 1e-6;
    let checks = report.chain_checks(tol);
    let mut w = csv::Writer::from_writer(File::create(run.out.join("chain.csv"))?);
    w.write_record(["check", "holds"])?;
    for (name, ok) in &checks {
        w.write_record([name.as_str(), if *ok { "true" } else { "false" }])?;
    }
    w.flush()?;
    let ok = chain_consistent(&report, tol);
    println!("chain {}", if ok { "consistent" } else { "violated" });
    summary["chain"] = json!(checks.iter().map(|(n, ok)| json!({"check": n, "holds": ok})).collect::<Vec<_>>());
    Ok(Status::from_ok(ok))
}

fn taimanov(run: &Run, k: Option<f64>, summary: &mut Value) -> Result<Status> {
    let m = &run.model;
    let search = run.solver.taimanov();
    let tau: Bracket = tau_plus_bracket(m, &search)?;
    write_brackets_csv(&run.out.join("brackets.csv"), &[("tau_plus".to_string(), tau.clone())])?;
    println!("tau_plus [{}, {}]", format_value(tau.lo), format_value(tau.hi));
    summary["tau_plus"] = serde_json::to_value(&tau)?;
    if let Some(k) = k {
        let (value, film) = film_search(m, k, &search)?;
        let (lx, ly) = (film.lx, film.ly);
        let n = film.m;
        let mut w = csv::Writer::from_writer(File::create(run.out.join("film.csv"))?);
        w.write_record(["x", "y", "phi"])?;
        for j in 0..n {
            for i in 0..n {
                w.write_record(&[
                    format!("{:.17e}", lx * i as f64 / n as f64),
                    format!("{:.17e}", ly * j as f64 / n as f64),
                    format!("{:.17e}", film.phi[j * n + i]),
                ])?;
            }
        }
        w.flush()?;
        println!("inf T_k at k = {}: {}", format_value(k), format_value(value));
        summary["k"] = json!(k);
        summary["film_infimum"] = json!(value);
    }
    Ok(Status::Success)
}

/// Parse flags, run, and map the outcome to the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    if cli.op == Op::Presets {
        return match execute_presets() {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        };
    }
    let outcome = resolve(&cli).and_then(|run| execute(&run, cli.op));
    match outcome {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute_presets() -> Result<()> {
    for p in presets()? {
        println!("{:<26} {}", p.name, p.description);
    }
    Ok(())
}
