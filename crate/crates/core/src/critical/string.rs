//! String method with a climbing image on an abstract landscape.

use rayon::prelude::*;

use crate::error::{MagflowError, Result};

/// Outcome of one update of a string member.
#[derive(Clone, Debug)]
pub struct Move<P> {
    pub point: P,
    /// Accepted step; zero when the member did not move.
    pub step: f64,
    pub grad_norm: f64,
}

pub trait Landscape: Sync {
    type Point: Clone + Send + Sync;

    /// Value when globally defined.
    fn value(&self, p: &Self::Point) -> Option<f64>;
    /// Value change from `a` to `b` along the straight segment.
    fn increment(&self, a: &Self::Point, b: &Self::Point) -> f64;
    /// Decreasing step (with its own step control) of size at most `step`.
    fn descend(&self, p: &Self::Point, step: f64) -> Result<Move<Self::Point>>;
    /// Step of the gradient reflected along the direction from `prev` to `next`.
    fn climb(&self, p: &Self::Point, prev: &Self::Point, next: &Self::Point, step: f64) -> Result<Move<Self::Point>>;
    fn distance(&self, a: &Self::Point, b: &Self::Point) -> f64;
    fn interpolate(&self, a: &Self::Point, b: &Self::Point, t: f64) -> Result<Self::Point>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct StringConfig {
    pub rounds: usize,
    pub step: f64,
    pub max_step: f64,
    pub reparam_every: usize,
    /// Rounds of the plain string before the climbing image switches on.
    pub climb_after: usize,
    /// Stop once the climbing image has gradient norm below this.
    pub climb_tol: f64,
    /// Largest move per round as a fraction of the mean member spacing (0 disables the cap).
    pub trust: f64,
}

impl Default for StringConfig {
    fn default() -> Self {
        StringConfig { rounds: 4000, step: 0.02, max_step: 0.5, reparam_every: 5, climb_after: 30, climb_tol: 1e-3, trust: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct StringOutcome<P> {
    pub members: Vec<P>,
    pub values: Vec<f64>,
    pub argmax: usize,
    /// `min` over rounds of `max` over members.
    pub minimax_value: f64,
    pub max_history: Vec<f64>,
    pub climb_grad_norm: f64,
    pub rounds: usize,
}

fn family_values<L: Landscape>(land: &L, members: &[L::Point], anchor: f64) -> Vec<f64> {
    let direct: Vec<Option<f64>> = members.par_iter().map(|m| land.value(m)).collect();
    if direct.iter().all(Option::is_some) {
        return direct.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    }
    let incs: Vec<f64> = members.par_windows(2).map(|w| land.increment(&w[0], &w[1])).collect();
    let mut out = Vec::with_capacity(members.len());
    out.push(direct[0].unwrap_or(anchor));
    for (j, inc) in incs.iter().enumerate() {
        let v = direct[j + 1].unwrap_or(out[j] + inc);
        out.push(v);
    }
    out
}

fn argmax_interior(values: &[f64]) -> usize {
    let n = values.len();
    (1..n - 1).fold(1, |best, j| if values[j] > values[best] { j } else { best })
}

/// Redistribute the members strictly between `lo` and `hi` at equal spacing.
fn reparametrize<L: Landscape>(land: &L, members: &mut [L::Point], lo: usize, hi: usize) -> Result<()> {
    if hi <= lo + 1 {
        return Ok(());
    }
    let seg: Vec<f64> = (lo..hi).map(|j| land.distance(&members[j], &members[j + 1])).collect();
    let total: f64 = seg.iter().sum();
    if !(total > 0.0) {
        return Ok(());
    }
    let old: Vec<L::Point> = members[lo..=hi].to_vec();
    let mut cum = vec![0.0];
    for d in &seg {
        cum.push(cum.last().copied().unwrap_or(0.0) + d);
    }
    let count = hi - lo;
    let targets: Vec<f64> = (1..count).map(|i| total * i as f64 / count as f64).collect();
    let placed: Vec<Result<L::Point>> = targets
        .par_iter()
        .map(|&t| {
            let j = cum.partition_point(|&c| c <= t).saturating_sub(1).min(count - 1);
            let frac = if seg[j] > 0.0 { ((t - cum[j]) / seg[j]).clamp(0.0, 1.0) } else { 0.0 };
            land.interpolate(&old[j], &old[j + 1], frac)
        })
        .collect();
    for (i, p) in placed.into_iter().enumerate() {
        members[lo + 1 + i] = p?;
    }
    Ok(())
}

/// Deform a family with fixed ends by descent steps, with the current arg-max member climbing.
pub fn climbing_string<L: Landscape>(
    land: &L,
    members0: Vec<L::Point>,
    anchor: f64,
    cfg: &StringConfig,
) -> Result<StringOutcome<L::Point>> {
    let m = members0.len();
    if m < 3 {
        return Err(MagflowError::InvalidFamily("a family needs at least three members".into()));
    }
    let mut members = members0;
    let mut steps = vec![cfg.step; m];
    let mut ci_step = cfg.step;
    let mut ci_prev_norm = f64::INFINITY;
    let mut history = Vec::new();
    let mut minimax = f64::INFINITY;
    let mut values = family_values(land, &members, anchor);
    let mut climb_norm = f64::INFINITY;
    let mut rounds = 0;
    for round in 0..cfg.rounds {
        rounds = round + 1;
        let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        history.push(top);
        minimax = minimax.min(top);
        let ci = argmax_interior(&values);
        let climbing = round >= cfg.climb_after;
        let moves: Vec<Result<Move<L::Point>>> = (1..m - 1)
            .into_par_iter()
            .map(|j| {
                if climbing && j == ci {
                    land.climb(&members[j], &members[j - 1], &members[j + 1], ci_step)
                } else {
                    land.descend(&members[j], steps[j])
                }
            })
            .collect();
        // trust region: no member moves further than half the mean spacing in one round
        let spacing: f64 = members.windows(2).map(|w| land.distance(&w[0], &w[1])).sum::<f64>() / (m - 1) as f64;
        let cap = cfg.trust * spacing;
        let moves: Vec<Result<Move<L::Point>>> = moves
            .into_par_iter()
            .enumerate()
            .map(|(idx, mv)| {
                let mut mv = mv?;
                let d = land.distance(&members[idx + 1], &mv.point);
                if cap > 0.0 && d > cap {
                    let t = cap / d;
                    mv.point = land.interpolate(&members[idx + 1], &mv.point, t)?;
                    mv.step *= t;
                }
                Ok(mv)
            })
            .collect();
        for (idx, mv) in moves.into_iter().enumerate() {
            let j = idx + 1;
            let mv = mv?;
            if climbing && j == ci {
                climb_norm = mv.grad_norm;
                ci_step = if mv.grad_norm > ci_prev_norm { (0.7 * ci_step).max(1e-6) } else { (1.1 * ci_step).min(cfg.max_step) };
                ci_prev_norm = mv.grad_norm;
            } else {
                steps[j] = if mv.step > 0.0 { (1.5 * mv.step).min(cfg.max_step) } else { cfg.step };
            }
            members[j] = mv.point;
        }
        if climbing && climb_norm < cfg.climb_tol {
            values = family_values(land, &members, anchor);
            break;
        }
        if cfg.reparam_every > 0 && (round + 1) % cfg.reparam_every == 0 {
            if climbing {
                reparametrize(land, &mut members, 0, ci)?;
                reparametrize(land, &mut members, ci, m - 1)?;
            } else {
                reparametrize(land, &mut members, 0, m - 1)?;
            }
        }
        values = family_values(land, &members, anchor);
    }
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    minimax = minimax.min(top);
    history.push(top);
    let argmax = argmax_interior(&values);
    Ok(StringOutcome { members, values, argmax, minimax_value: minimax, max_history: history, climb_grad_norm: climb_norm, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(x, y) = (x^2 - 1)^2 + 2 y^2`: minima at `(+-1, 0)`, saddle at the origin with value 1.
    struct DoubleWell;

    fn f(p: &[f64; 2]) -> f64 {
        (p[0] * p[0] - 1.0).powi(2) + 2.0 * p[1] * p[1]
    }

    fn g(p: &[f64; 2]) -> [f64; 2] {
        [4.0 * p[0] * (p[0] * p[0] - 1.0), 4.0 * p[1]]
    }

    impl Landscape for DoubleWell {
        type Point = [f64; 2];
        fn value(&self, p: &[f64; 2]) -> Option<f64> {
            Some(f(p))
        }
        fn increment(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
            f(b) - f(a)
        }
        fn descend(&self, p: &[f64; 2], step: f64) -> Result<Move<[f64; 2]>> {
            let d = g(p);
            let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let s = step.min(0.1);
            Ok(Move { point: [p[0] - s * d[0], p[1] - s * d[1]], step: s, grad_norm: n })
        }
        fn climb(&self, p: &[f64; 2], a: &[f64; 2], b: &[f64; 2], step: f64) -> Result<Move<[f64; 2]>> {
            let d = g(p);
            let t = [b[0] - a[0], b[1] - a[1]];
            let tn = (t[0] * t[0] + t[1] * t[1]).sqrt();
            let t = [t[0] / tn, t[1] / tn];
            let dt = d[0] * t[0] + d[1] * t[1];
            let r = [d[0] - 2.0 * dt * t[0], d[1] - 2.0 * dt * t[1]];
            let s = step.min(0.1);
            Ok(Move { point: [p[0] - s * r[0], p[1] - s * r[1]], step: s, grad_norm: (d[0] * d[0] + d[1] * d[1]).sqrt() })
        }
        fn distance(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        }
        fn interpolate(&self, a: &[f64; 2], b: &[f64; 2], t: f64) -> Result<[f64; 2]> {
            Ok([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        }
    }

    #[test]
    fn double_well_saddle() {
        // an arc bulging through y = 0.8
        let members: Vec<[f64; 2]> = (0..11)
            .map(|i| {
                let s = i as f64 / 10.0;
                [-1.0 + 2.0 * s, 0.8 * (std::f64::consts::PI * s).sin()]
            })
            .collect();
        let cfg = StringConfig { climb_tol: 1e-8, ..StringConfig::default() };
        let out = climbing_string(&DoubleWell, members, 0.0, &cfg).unwrap();
        assert!((out.values[out.argmax] - 1.0).abs() < 1e-8, "{:?}", out.values);
        let p = out.members[out.argmax];
        assert!(p[0].abs() < 1e-4 && p[1].abs() < 1e-4);
        assert!(out.minimax_value >= 1.0 - 1e-8);
    }
}
