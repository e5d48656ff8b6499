//! Named model systems with default paths, boundary pairs and minimax families.

use std::f64::consts::{PI, TAU};

use crate::critical::{gamma_family, hyperbolic_circle_point, latitude_family, MinimaxFamily};
use crate::dynamics::{LagrangianModel, QuadraticBounds};
use crate::error::{MagflowError, Result};
use crate::fields::{OneForm, ScalarField, SmoothCutoff};
use crate::paths::{DiscretePath, Submanifold};
use crate::surface::{ChartPoint, Rect, SurfaceModel};

pub const PRESET_NAMES: [&str; 6] = [
    "hyperbolic-horocycle",
    "torus-psi-cutoff",
    "torus-constant-B",
    "torus-oscillating",
    "sphere-standard-magnetic",
    "mechanical-torus",
];

/// Inclusive grid `lo, ..., hi` of `n` energies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl EnergyGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.n <= 1 {
            return vec![self.lo];
        }
        (0..self.n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64).collect()
    }
}

/// How to build a minimax family at a given energy.
#[derive(Clone, Debug)]
pub enum FamilySpec {
    /// From the constant path at `p` (period `t0`) to `end`.
    Gamma { p: ChartPoint, t0: f64, end: DiscretePath, members: usize },
    Latitude { members: usize, nodes: usize, t0: f64 },
}

impl FamilySpec {
    pub fn build(&self, model: &LagrangianModel, k: f64) -> Result<MinimaxFamily> {
        match self {
            FamilySpec::Gamma { p, t0, end, members } => gamma_family(model, *p, *t0, end, *members),
            FamilySpec::Latitude { members, nodes, t0 } => latitude_family(model, k, *members, *nodes, *t0),
        }
    }
}

/// Shape of the default starting path; the period follows from the energy.
#[derive(Clone, Debug)]
enum DefaultPath {
    Fixed(DiscretePath),
    /// Closed loop traversed at speed `sqrt(2k)`.
    AtSpeed(DiscretePath),
}

#[derive(Clone, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub model: LagrangianModel,
    pub k: f64,
    pub k_grid: EnergyGrid,
    pub boundary: Option<(Submanifold, Submanifold)>,
    pub family: Option<FamilySpec>,
    path: DefaultPath,
}

impl Preset {
    pub fn default_path(&self, k: f64) -> Result<DiscretePath> {
        match &self.path {
            DefaultPath::Fixed(p) => Ok(p.clone()),
            DefaultPath::AtSpeed(p) => {
                if !(k > 0.0) {
                    return Err(MagflowError::Domain(format!("default loop needs k > 0, got {k}")));
                }
                let mut out = p.clone();
                out.period = p.length(&self.model.surface) / (2.0 * k).sqrt();
                Ok(out)
            }
        }
    }
}

pub fn presets() -> Result<Vec<Preset>> {
    PRESET_NAMES.iter().map(|n| preset(n)).collect()
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "hyperbolic-horocycle" => hyperbolic_horocycle(),
        "torus-psi-cutoff" => torus_psi_cutoff(),
        "torus-constant-B" => torus_constant_b(),
        "torus-oscillating" => torus_oscillating(),
        "sphere-standard-magnetic" => sphere_standard(),
        "mechanical-torus" => mechanical_torus(),
        other => Err(MagflowError::Config(format!("unknown preset {other:?}; known: {}", PRESET_NAMES.join(", ")))),
    }
}

/// Cutoff used by the strip one-form: supported in `(0.1, 0.9)`, equal to 1 on `[0.3, 0.7]`.
pub fn psi_cutoff() -> SmoothCutoff {
    SmoothCutoff { lower: 0.1, upper: 0.9, ramp: 0.2 }
}

fn closed_curve(surface: &SurfaceModel, n: usize, f: impl Fn(f64) -> ChartPoint) -> Result<DiscretePath> {
    let nodes = (0..n).map(|i| surface.normalize(f(i as f64 / n as f64))).collect();
    DiscretePath::closed(nodes, 1.0)
}

fn hyperbolic_horocycle() -> Result<Preset> {
    let surface = SurfaceModel::hyperbolic(Rect { x_min: -300.0, x_max: 300.0, y_min: 0.002, y_max: 500.0 })?;
    let model = LagrangianModel::new(
        surface,
        OneForm::Horocycle { strength: 1.0 },
        ScalarField::zero(),
        ScalarField::zero(),
        QuadraticBounds { a: 0.5, b: 10.0 },
    )?;
    let c = (0.002f64 * 500.0).sqrt();
    let path = closed_curve(&model.surface, 256, |t| {
        let q = hyperbolic_circle_point(0.0, c, 1.0, t);
        ChartPoint::new(q.x, q.y)
    })?;
    Ok(Preset {
        name: "hyperbolic-horocycle",
        description: "hyperbolic half-plane, theta = dx/y, no potential",
        model,
        k: 0.25,
        k_grid: EnergyGrid { lo: 0.05, hi: 0.45, n: 8 },
        boundary: Some((
            Submanifold::Circle { center: ChartPoint::new(0.0, c), radius: 0.5 },
            Submanifold::Circle { center: ChartPoint::new(0.6, c), radius: 0.5 },
        )),
        family: None,
        path: DefaultPath::AtSpeed(path),
    })
}

/// Loop `t -> (1 - t, 1/2)` on the unit torus with period 1.
pub fn path_a(nodes: usize) -> Result<DiscretePath> {
    let pts = (0..nodes).map(|i| ChartPoint::new((1.0 - i as f64 / nodes as f64).rem_euclid(1.0), 0.5)).collect();
    DiscretePath::closed(pts, 1.0)
}

fn torus_psi_cutoff() -> Result<Preset> {
    let model = LagrangianModel::new(
        SurfaceModel::flat_torus(1.0, 1.0)?,
        OneForm::CutoffStrip { amplitude: 1.0, profile: psi_cutoff(), period: 1.0 },
        ScalarField::zero(),
        ScalarField::zero(),
        QuadraticBounds { a: 0.5, b: 10.0 },
    )?;
    Ok(Preset {
        name: "torus-psi-cutoff",
        description: "unit torus, theta = psi(y) dx with a smooth cutoff psi equal to 1 near y = 1/2",
        model,
        k: 0.3,
        k_grid: EnergyGrid { lo: 0.05, hi: 0.45, n: 8 },
        boundary: Some((Submanifold::Point { at: ChartPoint::new(0.5, 0.5) }, Submanifold::HorizontalLine { y: 0.5 })),
        family: None,
        path: DefaultPath::Fixed(path_a(64)?),
    })
}

fn torus_constant_b() -> Result<Preset> {
    let model = LagrangianModel::new(
        SurfaceModel::flat_torus(4.0, 4.0)?,
        OneForm::Zero,
        ScalarField::zero(),
        ScalarField::Constant(1.0),
        QuadraticBounds { a: 0.5, b: 0.0 },
    )?;
    let path = closed_curve(&model.surface, 128, |t| ChartPoint::new(2.0 + (TAU * t).cos(), 2.0 - (TAU * t).sin()))?;
    Ok(Preset {
        name: "torus-constant-B",
        description: "4 x 4 flat torus with constant magnetic density 1",
        model,
        k: 0.5,
        k_grid: EnergyGrid { lo: 0.1, hi: 0.8, n: 8 },
        boundary: None,
        family: None,
        path: DefaultPath::AtSpeed(path),
    })
}

fn torus_oscillating() -> Result<Preset> {
    let model = LagrangianModel::new(
        SurfaceModel::flat_torus(1.0, 1.0)?,
        OneForm::Zero,
        ScalarField::zero(),
        ScalarField::CosProduct { offset: 0.5, amplitude: 5.0, kx: 1.0, ky: 1.0, lx: 1.0, ly: 1.0 },
        QuadraticBounds { a: 0.5, b: 0.0 },
    )?;
    let path = closed_curve(&model.surface, 128, |t| ChartPoint::new(0.5 + 0.15 * (TAU * t).cos(), 0.15 * (TAU * t).sin()))?;
    Ok(Preset {
        name: "torus-oscillating",
        description: "unit torus with magnetic density 0.5 + 5 cos(2 pi x) cos(2 pi y)",
        model,
        k: 0.01,
        k_grid: EnergyGrid { lo: 0.005, hi: 0.1, n: 8 },
        boundary: None,
        family: None,
        path: DefaultPath::AtSpeed(path),
    })
}

fn sphere_standard() -> Result<Preset> {
    let model = LagrangianModel::new(
        SurfaceModel::sphere(1.0)?,
        OneForm::Zero,
        ScalarField::zero(),
        ScalarField::Constant(1.0),
        QuadraticBounds { a: 0.5, b: 0.0 },
    )?;
    let rho = (PI / 8.0).tan();
    let path = closed_curve(&model.surface, 256, |t| ChartPoint::in_chart(0, rho * (TAU * t).cos(), -rho * (TAU * t).sin()))?;
    Ok(Preset {
        name: "sphere-standard-magnetic",
        description: "unit round sphere with the area form as magnetic field",
        model,
        k: 0.5,
        k_grid: EnergyGrid { lo: 0.1, hi: 0.8, n: 8 },
        boundary: None,
        family: Some(FamilySpec::Latitude { members: 24, nodes: 256, t0: 1.0 }),
        path: DefaultPath::AtSpeed(path),
    })
}

/// Open path from `(0, 1/4)` down to `(0, 0)`, resting there for most of the time, then out to `(1/4, 0)`.
pub fn mechanical_end_path(segments: usize, period: f64) -> Result<DiscretePath> {
    let leg = (segments / 10).max(2);
    let rest = segments - 2 * leg;
    let mut nodes = Vec::with_capacity(segments + 1);
    for i in 0..leg {
        nodes.push(ChartPoint::new(0.0, 0.25 * (1.0 - i as f64 / leg as f64)));
    }
    nodes.extend(std::iter::repeat(ChartPoint::new(0.0, 0.0)).take(rest));
    for i in 0..=leg {
        nodes.push(ChartPoint::new(0.25 * i as f64 / leg as f64, 0.0));
    }
    DiscretePath::open(nodes, period, Submanifold::HorizontalLine { y: 0.25 }, Submanifold::VerticalLine { x: 0.25 })
}

fn mechanical_torus() -> Result<Preset> {
    let model = LagrangianModel::new(
        SurfaceModel::flat_torus(1.0, 1.0)?,
        OneForm::Zero,
        ScalarField::CosProduct { offset: 0.0, amplitude: 1.0, kx: 1.0, ky: 1.0, lx: 1.0, ly: 1.0 },
        ScalarField::zero(),
        QuadraticBounds { a: 0.5, b: 1.0 },
    )?;
    let end = mechanical_end_path(128, 40.0)?;
    Ok(Preset {
        name: "mechanical-torus",
        description: "unit torus, V = cos(2 pi x) cos(2 pi y), conormal boundary {y = 1/4}, {x = 1/4}",
        model,
        k: 0.5,
        k_grid: EnergyGrid { lo: 0.1, hi: 0.8, n: 8 },
        boundary: Some((Submanifold::HorizontalLine { y: 0.25 }, Submanifold::VerticalLine { x: 0.25 })),
        family: Some(FamilySpec::Gamma { p: ChartPoint::new(0.25, 0.25), t0: 0.05, end: end.clone(), members: 24 }),
        path: DefaultPath::Fixed(end),
    })
}
