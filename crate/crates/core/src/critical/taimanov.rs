//! Films on the torus and the functional `T_k(Π) = sqrt(2k) l(∂Π) + ∫_Π σ`.

use serde::{Deserialize, Serialize};

use super::Bracket;
use crate::dynamics::LagrangianModel;
use crate::error::{MagflowError, Result};
use crate::surface::{ChartPoint, SurfaceModel, Vec2};

/// A film given by the sublevel set `{phi < 0}` of a level function on an `m x m` periodic node grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TaimanovFilm {
    pub m: usize,
    pub lx: f64,
    pub ly: f64,
    pub phi: Vec<f64>,
}

impl TaimanovFilm {
    pub fn from_fn(m: usize, lx: f64, ly: f64, f: impl Fn(Vec2) -> f64) -> Self {
        let mut phi = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                phi.push(f(Vec2::new(lx * i as f64 / m as f64, ly * j as f64 / m as f64)));
            }
        }
        TaimanovFilm { m, lx, ly, phi }
    }

    pub fn empty(m: usize, lx: f64, ly: f64) -> Self {
        TaimanovFilm { m, lx, ly, phi: vec![1.0; m * m] }
    }

    pub fn full(m: usize, lx: f64, ly: f64) -> Self {
        TaimanovFilm { m, lx, ly, phi: vec![-1.0; m * m] }
    }

    /// Binary film; the boundary is placed half-way between inside and outside nodes.
    pub fn from_indicator(m: usize, lx: f64, ly: f64, inside: &[bool]) -> Self {
        TaimanovFilm { m, lx, ly, phi: inside.iter().map(|&b| if b { -1.0 } else { 1.0 }).collect() }
    }

    /// Geodesic disc (periodic distance to `center` below `r`).
    pub fn disc(m: usize, lx: f64, ly: f64, center: Vec2, r: f64) -> Self {
        TaimanovFilm::from_fn(m, lx, ly, |q| {
            let mut d = q - center;
            d.x -= lx * (d.x / lx).round();
            d.y -= ly * (d.y / ly).round();
            d.norm() - r
        })
    }

    fn at(&self, i: isize, j: isize) -> f64 {
        let m = self.m as isize;
        self.phi[(i.rem_euclid(m) + j.rem_euclid(m) * m) as usize]
    }

    fn spacing(&self) -> (f64, f64) {
        (self.lx / self.m as f64, self.ly / self.m as f64)
    }

    /// Boundary length and `∫ density dA` over the film, by marching squares with linear interpolation.
    pub fn measure(&self, density: impl Fn(Vec2) -> f64) -> (f64, f64) {
        let (hx, hy) = self.spacing();
        let mut length = 0.0;
        let mut integral = 0.0;
        let m = self.m as isize;
        for j in 0..m {
            for i in 0..m {
                let base = Vec2::new(i as f64 * hx, j as f64 * hy);
                let corners = [
                    (base, self.at(i, j)),
                    (base + Vec2::new(hx, 0.0), self.at(i + 1, j)),
                    (base + Vec2::new(hx, hy), self.at(i + 1, j + 1)),
                    (base + Vec2::new(0.0, hy), self.at(i, j + 1)),
                ];
                let inside: Vec<bool> = corners.iter().map(|c| c.1 < 0.0).collect();
                let count = inside.iter().filter(|b| **b).count();
                if count == 0 {
                    continue;
                }
                if count == 4 {
                    integral += density(base + Vec2::new(0.5 * hx, 0.5 * hy)) * hx * hy;
                    continue;
                }
                let cross = |e: usize| -> Vec2 {
                    let (pa, va) = corners[e];
                    let (pb, vb) = corners[(e + 1) % 4];
                    pa + (pb - pa) * (va / (va - vb))
                };
                let saddle = count == 2 && inside[0] == inside[2];
                if saddle {
                    let center = 0.25 * corners.iter().map(|c| c.1).sum::<f64>();
                    let center_inside = center < 0.0;
                    if center_inside {
                        // one hexagon; the outside corners are cut off
                        let mut poly = Vec::new();
                        for e in 0..4 {
                            if inside[e] {
                                poly.push(corners[e].0);
                            }
                            poly.push(cross(e));
                        }
                        let out: Vec<usize> = (0..4).filter(|e| !inside[*e]).collect();
                        for e in out {
                            length += (cross(e) - cross((e + 3) % 4)).norm();
                        }
                        let (a, c) = polygon_area_centroid(&poly);
                        integral += density(c) * a;
                    } else {
                        for e in (0..4).filter(|e| inside[*e]) {
                            let prev = cross((e + 3) % 4);
                            let next = cross(e);
                            length += (next - prev).norm();
                            let (a, c) = polygon_area_centroid(&[prev, corners[e].0, next]);
                            integral += density(c) * a;
                        }
                    }
                    continue;
                }
                let mut poly = Vec::new();
                let mut pts = Vec::new();
                for e in 0..4 {
                    if inside[e] {
                        poly.push(corners[e].0);
                    }
                    if inside[e] != inside[(e + 1) % 4] {
                        let p = cross(e);
                        poly.push(p);
                        pts.push(p);
                    }
                }
                if pts.len() == 2 {
                    length += (pts[1] - pts[0]).norm();
                }
                let (a, c) = polygon_area_centroid(&poly);
                integral += density(c) * a;
            }
        }
        (length, integral)
    }
}

fn polygon_area_centroid(poly: &[Vec2]) -> (f64, Vec2) {
    let n = poly.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let cr = p.x * q.y - q.x * p.y;
        a += cr;
        cx += (p.x + q.x) * cr;
        cy += (p.y + q.y) * cr;
    }
    if a.abs() < 1e-300 {
        return (0.0, poly[0]);
    }
    (0.5 * a.abs(), Vec2::new(cx / (3.0 * a), cy / (3.0 * a)))
}

fn torus_of(model: &LagrangianModel) -> Result<(f64, f64)> {
    match model.surface {
        SurfaceModel::FlatTorus { lx, ly } => Ok((lx, ly)),
        _ => Err(MagflowError::Precondition("films are implemented on the flat torus only".into())),
    }
}

/// `T_k(Π)` for the film.
pub fn taimanov_value(model: &LagrangianModel, film: &TaimanovFilm, k: f64) -> Result<f64> {
    torus_of(model)?;
    if k < 0.0 {
        return Err(MagflowError::Domain(format!("T_k needs k >= 0, got {k}")));
    }
    let (len, flux) = film.measure(|q| model.sigma_density(ChartPoint { chart: 0, q }));
    Ok((2.0 * k).sqrt() * len + flux)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaimanovSearch {
    pub grid: usize,
    /// Number of density levels whose sub- and superlevel sets seed the search.
    pub levels: usize,
    /// Level-set descent steps applied to the best seeds.
    pub moves: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub k_points: usize,
    /// Relative bracket width at which bisection stops.
    pub rel_tol: f64,
}

impl Default for TaimanovSearch {
    fn default() -> Self {
        TaimanovSearch { grid: 128, levels: 31, moves: 300, k_min: 1e-3, k_max: 10.0, k_points: 16, rel_tol: 0.02 }
    }
}

/// Level-set descent of `T_k`: normal speed `-(sqrt(2k) kappa + sigma)` (outward).
fn descend_film(film: &TaimanovFilm, density: &[f64], k: f64, steps: usize, eval: &dyn Fn(&TaimanovFilm) -> f64) -> (f64, TaimanovFilm) {
    let m = film.m as isize;
    let (hx, hy) = film.spacing();
    let w = (2.0 * k).sqrt();
    let fmax = density.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let h = hx.min(hy);
    let dt = (0.2 * h * h / w.max(1e-12)).min(0.4 * h / fmax);
    let mut cur = film.clone();
    let mut best = (eval(&cur), cur.clone());
    for step in 0..steps {
        let mut next = cur.phi.clone();
        for j in 0..m {
            for i in 0..m {
                let c = cur.at(i, j);
                let (xp, xm, yp, ym) = (cur.at(i + 1, j), cur.at(i - 1, j), cur.at(i, j + 1), cur.at(i, j - 1));
                let px = (xp - xm) / (2.0 * hx);
                let py = (yp - ym) / (2.0 * hy);
                let pxx = (xp - 2.0 * c + xm) / (hx * hx);
                let pyy = (yp - 2.0 * c + ym) / (hy * hy);
                let pxy = (cur.at(i + 1, j + 1) - cur.at(i + 1, j - 1) - cur.at(i - 1, j + 1) + cur.at(i - 1, j - 1)) / (4.0 * hx * hy);
                let g2 = px * px + py * py;
                let curv = if g2 > 1e-24 { (pxx * py * py - 2.0 * px * py * pxy + pyy * px * px) / g2 } else { pxx + pyy };
                // phi_t + F |grad phi| = 0 with F = -sigma, upwinded
                let f = -density[(i + j * m) as usize];
                let (dxm, dxp) = ((c - xm) / hx, (xp - c) / hx);
                let (dym, dyp) = ((c - ym) / hy, (yp - c) / hy);
                let grad = if f > 0.0 {
                    (dxm.max(0.0).powi(2) + dxp.min(0.0).powi(2) + dym.max(0.0).powi(2) + dyp.min(0.0).powi(2)).sqrt()
                } else {
                    (dxm.min(0.0).powi(2) + dxp.max(0.0).powi(2) + dym.min(0.0).powi(2) + dyp.max(0.0).powi(2)).sqrt()
                };
                next[(i + j * m) as usize] = c + dt * (w * curv - f * grad);
            }
        }
        cur.phi = next;
        if (step + 1) % 10 == 0 || step + 1 == steps {
            let v = eval(&cur);
            if v < best.0 {
                best = (v, cur.clone());
            }
        }
    }
    best
}

/// Least `T_k` over the searched films (the empty film included) and a film attaining it.
pub fn film_search(model: &LagrangianModel, k: f64, search: &TaimanovSearch) -> Result<(f64, TaimanovFilm)> {
    let (lx, ly) = torus_of(model)?;
    let m = search.grid;
    let density_at = |q: Vec2| model.sigma_density(ChartPoint { chart: 0, q });
    let nodes = TaimanovFilm::from_fn(m, lx, ly, density_at);
    let eval = |f: &TaimanovFilm| -> f64 {
        let (len, flux) = f.measure(density_at);
        (2.0 * k).sqrt() * len + flux
    };
    let mut best = (0.0, TaimanovFilm::empty(m, lx, ly));
    let full = TaimanovFilm::full(m, lx, ly);
    let vf = eval(&full);
    if vf < best.0 {
        best = (vf, full);
    }
    let mut sorted = nodes.phi.clone();
    sorted.sort_by(f64::total_cmp);
    let mut seeds: Vec<(f64, TaimanovFilm)> = Vec::new();
    for l in 1..=search.levels {
        let c = sorted[(sorted.len() - 1) * l / (search.levels + 1)];
        for sign in [1.0, -1.0] {
            let film = TaimanovFilm { m, lx, ly, phi: nodes.phi.iter().map(|v| sign * (v - c)).collect() };
            seeds.push((eval(&film), film));
        }
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (v, f) in seeds.iter().take(3) {
        if *v < best.0 {
            best = (*v, f.clone());
        }
        if search.moves > 0 {
            let (dv, df) = descend_film(f, &nodes.phi, k, search.moves, &eval);
            if dv < best.0 {
                best = (dv, df);
            }
        }
    }
    Ok(best)
}

/// Bracket for `tau_+ = inf { k : T_k >= 0 on all films }`, from the sign of the searched infimum.
pub fn tau_plus_bracket(model: &LagrangianModel, search: &TaimanovSearch) -> Result<Bracket> {
    torus_of(model)?;
    let negative = |k: f64| -> Result<bool> { Ok(film_search(model, k, search)?.0 < -1e-12) };
    let n = search.k_points.max(2);
    let grid: Vec<f64> =
        (0..n).map(|i| search.k_min * (search.k_max / search.k_min).powf(i as f64 / (n - 1) as f64)).collect();
    let mut lo = None;
    let mut hi = None;
    for &k in &grid {
        if negative(k)? {
            lo = Some(k);
        } else {
            hi = Some(k);
            break;
        }
    }
    match (lo, hi) {
        (None, _) => Ok(Bracket::new(0.0, search.k_min, "tau_plus: no negative film at the lower search limit")),
        (Some(l), None) => Ok(Bracket::new(l, f64::INFINITY, "tau_plus: negative films up to the search limit")),
        (Some(mut l), Some(mut h)) => {
            while (h - l) > search.rel_tol * l {
                let mid = (l * h).sqrt();
                if negative(mid)? {
                    l = mid;
                } else {
                    h = mid;
                }
            }
            Ok(Bracket::new(l, h, "tau_plus: film search (sub/superlevel sets of the density plus level-set descent)"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_measure_second_order() {
        let r = 0.23;
        for m in [64usize, 128] {
            let film = TaimanovFilm::disc(m, 1.0, 1.0, Vec2::new(0.5, 0.5), r);
            let (len, area) = film.measure(|_| 1.0);
            let tol = if m == 64 { 2e-3 } else { 5e-4 };
            assert!((len - std::f64::consts::TAU * r).abs() < 10.0 * tol, "{m}: {len}");
            assert!((area - std::f64::consts::PI * r * r).abs() < tol, "{m}: {area}");
        }
    }

    #[test]
    fn empty_and_full() {
        let e = TaimanovFilm::empty(16, 1.0, 1.0).measure(|_| 3.0);
        assert_eq!(e, (0.0, 0.0));
        let f = TaimanovFilm::full(16, 1.0, 1.0).measure(|_| 3.0);
        assert_eq!(f.0, 0.0);
        assert!((f.1 - 3.0).abs() < 1e-12);
    }
}
