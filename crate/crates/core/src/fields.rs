//! Scalar fields, one-forms and the small expression layer used by configs.

use std::f64::consts::PI;
use std::fmt;

use exmex::prelude::*;
use exmex::Differentiate;
use serde::{Deserialize, Serialize};

use crate::error::{MagflowError, Result};
use crate::surface::{Mat2, Vec2};

const VAR_NAMES: [&str; 3] = ["x", "y", "z"];

/// Parsed arithmetic expression in the variables `x`, `y` (and `z` on the sphere) with exact partials.
#[derive(Clone)]
pub struct Expression {
    source: String,
    // boxed: compiled expressions keep their nodes inline and are large
    expr: Box<FlatEx<f64>>,
    slots: Vec<usize>,
    partials: [Option<Box<FlatEx<f64>>>; 3],
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({:?})", self.source)
    }
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self> {
        let cleaned = source.replace("pi", "PI");
        let expr = exmex::parse::<f64>(&cleaned)
            .map_err(|e| MagflowError::Expression(format!("cannot parse {source:?}: {e}")))?;
        let mut slots = Vec::new();
        for name in expr.var_names() {
            let slot = VAR_NAMES
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| MagflowError::Expression(format!("unknown variable {name:?} in {source:?}")))?;
            slots.push(slot);
        }
        let mut partials: [Option<Box<FlatEx<f64>>>; 3] = [None, None, None];
        for (idx, &slot) in slots.iter().enumerate() {
            let d = expr
                .clone()
                .partial(idx)
                .map_err(|e| MagflowError::Expression(format!("cannot differentiate {source:?}: {e}")))?;
            partials[slot] = Some(Box::new(d));
        }
        Ok(Expression { source: source.to_string(), expr: Box::new(expr), slots, partials })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses(&self, slot: usize) -> bool {
        self.slots.contains(&slot)
    }

    fn args(&self, p: &[f64; 3]) -> Vec<f64> {
        self.slots.iter().map(|&s| p[s]).collect()
    }

    pub fn eval(&self, p: &[f64; 3]) -> f64 {
        self.expr.eval(&self.args(p)).unwrap_or(f64::NAN)
    }

    pub fn gradient(&self, p: &[f64; 3]) -> [f64; 3] {
        let args = self.args(p);
        let mut g = [0.0; 3];
        for (slot, d) in self.partials.iter().enumerate() {
            if let Some(d) = d {
                // derivatives of expressions without remaining variables still take the full arg list
                g[slot] = d.eval(&args).unwrap_or(f64::NAN);
            }
        }
        g
    }
}

/// Scalar field on chart (or ambient, for the sphere) coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarField {
    Constant(f64),
    /// `offset + amplitude * cos(2 pi kx x / lx) * cos(2 pi ky y / ly)`
    CosProduct { offset: f64, amplitude: f64, kx: f64, ky: f64, lx: f64, ly: f64 },
    Expr(Expression),
}

impl ScalarField {
    pub fn zero() -> Self {
        ScalarField::Constant(0.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Constant(c) if *c == 0.0)
            || matches!(self, ScalarField::CosProduct { offset, amplitude, .. } if *offset == 0.0 && *amplitude == 0.0)
    }

    pub fn value(&self, p: &[f64; 3]) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::CosProduct { offset, amplitude, kx, ky, lx, ly } => {
                let (ax, ay) = (2.0 * PI * kx / lx, 2.0 * PI * ky / ly);
                offset + amplitude * (ax * p[0]).cos() * (ay * p[1]).cos()
            }
            ScalarField::Expr(e) => e.eval(p),
        }
    }

    pub fn gradient(&self, p: &[f64; 3]) -> [f64; 3] {
        match self {
            ScalarField::Constant(_) => [0.0; 3],
            ScalarField::CosProduct { amplitude, kx, ky, lx, ly, .. } => {
                let (ax, ay) = (2.0 * PI * kx / lx, 2.0 * PI * ky / ly);
                let (cx, sx) = ((ax * p[0]).cos(), (ax * p[0]).sin());
                let (cy, sy) = ((ay * p[1]).cos(), (ay * p[1]).sin());
                [-amplitude * ax * sx * cy, -amplitude * ay * cx * sy, 0.0]
            }
            ScalarField::Expr(e) => e.gradient(p),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ScalarField::Constant(c) => format!("{c}"),
            ScalarField::CosProduct { offset, amplitude, kx, ky, lx, ly } => {
                format!("{offset} + {amplitude}*cos(2pi*{kx}x/{lx})*cos(2pi*{ky}y/{ly})")
            }
            ScalarField::Expr(e) => e.source().to_string(),
        }
    }
}

/// Smooth bump profile: 0 outside `(lower, upper)`, 1 on `[lower + ramp, upper - ramp]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothCutoff {
    pub lower: f64,
    pub upper: f64,
    pub ramp: f64,
}

impl SmoothCutoff {
    pub fn value(&self, t: f64) -> f64 {
        smooth_step((t - self.lower) / self.ramp) * smooth_step((self.upper - t) / self.ramp)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let a = (t - self.lower) / self.ramp;
        let b = (self.upper - t) / self.ramp;
        (smooth_step_derivative(a) * smooth_step(b) - smooth_step(a) * smooth_step_derivative(b)) / self.ramp
    }
}

fn flat_exp(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn flat_exp_derivative(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        flat_exp(t) / (t * t)
    }
}

pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let (a, b) = (flat_exp(t), flat_exp(1.0 - t));
        a / (a + b)
    }
}

pub fn smooth_step_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let (a, b) = (flat_exp(t), flat_exp(1.0 - t));
        let (da, db) = (flat_exp_derivative(t), flat_exp_derivative(1.0 - t));
        (da * b + a * db) / ((a + b) * (a + b))
    }
}

/// One-form `theta = theta_x dx + theta_y dy` on the chart.
#[derive(Clone, Debug, PartialEq)]
pub enum OneForm {
    Zero,
    /// `strength * dx / y`
    Horocycle { strength: f64 },
    /// `amplitude * psi(y mod period) dx`
    CutoffStrip { amplitude: f64, profile: SmoothCutoff, period: f64 },
    Expr { x: Expression, y: Expression },
}

impl OneForm {
    pub fn is_zero(&self) -> bool {
        matches!(self, OneForm::Zero)
    }

    pub fn value(&self, q: Vec2) -> Vec2 {
        match self {
            OneForm::Zero => Vec2::zeros(),
            OneForm::Horocycle { strength } => Vec2::new(strength / q.y, 0.0),
            OneForm::CutoffStrip { amplitude, profile, period } => {
                Vec2::new(amplitude * profile.value(q.y.rem_euclid(*period)), 0.0)
            }
            OneForm::Expr { x, y } => {
                let p = [q.x, q.y, 0.0];
                Vec2::new(x.eval(&p), y.eval(&p))
            }
        }
    }

    /// `J[(i, j)] = d_i theta_j`.
    pub fn jacobian(&self, q: Vec2) -> Mat2 {
        match self {
            OneForm::Zero => Mat2::zeros(),
            OneForm::Horocycle { strength } => Mat2::new(0.0, 0.0, -strength / (q.y * q.y), 0.0),
            OneForm::CutoffStrip { amplitude, profile, period } => {
                Mat2::new(0.0, 0.0, amplitude * profile.derivative(q.y.rem_euclid(*period)), 0.0)
            }
            OneForm::Expr { x, y } => {
                let p = [q.x, q.y, 0.0];
                let gx = x.gradient(&p);
                let gy = y.gradient(&p);
                Mat2::new(gx[0], gy[0], gx[1], gy[1])
            }
        }
    }

    /// Density of `d theta` with respect to `dx ^ dy`.
    pub fn curl(&self, q: Vec2) -> f64 {
        let j = self.jacobian(q);
        j[(0, 1)] - j[(1, 0)]
    }

    pub fn describe(&self) -> String {
        match self {
            OneForm::Zero => "0".into(),
            OneForm::Horocycle { strength } => format!("{strength} dx/y"),
            OneForm::CutoffStrip { amplitude, profile, .. } => format!(
                "{amplitude} psi(y) dx, psi cutoff on ({}, {}) ramp {}",
                profile.lower, profile.upper, profile.ramp
            ),
            OneForm::Expr { x, y } => format!("({}) dx + ({}) dy", x.source(), y.source()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_partials_match_hand_derivative() {
        let e = Expression::parse("cos(2*pi*x)*y^2").unwrap();
        let p = [0.1, 2.0, 0.0];
        let g = e.gradient(&p);
        let want = -2.0 * PI * (2.0 * PI * 0.1f64).sin() * 4.0;
        assert!((g[0] - want).abs() < 1e-12);
        assert!((g[1] - (2.0 * PI * 0.1f64).cos() * 4.0).abs() < 1e-12);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn single_variable_expression() {
        let e = Expression::parse("sin(y)").unwrap();
        let p = [5.0, 0.3, 0.0];
        assert!((e.eval(&p) - 0.3f64.sin()).abs() < 1e-15);
        assert!((e.gradient(&p)[1] - 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn unknown_variable_is_rejected() {
        assert!(matches!(Expression::parse("x + w"), Err(MagflowError::Expression(_))));
    }

    #[test]
    fn cutoff_profile_shape() {
        let c = SmoothCutoff { lower: 0.1, upper: 0.9, ramp: 0.2 };
        assert_eq!(c.value(0.05), 0.0);
        assert_eq!(c.value(0.5), 1.0);
        assert_eq!(c.value(0.3), 1.0);
        for i in 0..100 {
            let t = i as f64 / 100.0;
            let v = c.value(t);
            assert!((0.0..=1.0).contains(&v));
            let fd = (c.value(t + 1e-6) - c.value(t - 1e-6)) / 2e-6;
            assert!((fd - c.derivative(t)).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn horocycle_curl_is_area_density() {
        let th = OneForm::Horocycle { strength: 1.0 };
        let q = Vec2::new(0.2, 1.7);
        assert!((th.curl(q) - 1.0 / (1.7 * 1.7)).abs() < 1e-14);
    }
}
