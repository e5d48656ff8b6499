//! Newton polishing of zeros of `eta_k` and the Morse index of the discrete action.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::LagrangianModel;
use crate::error::{MagflowError, Result};
use crate::paths::{eta_unchecked, grad, BoundarySpec, CovectorField, DiscretePath, PathMetric};
use crate::surface::{ChartPoint, Vec2};

/// Reduced coordinates: admissible node directions plus `ln T`.
struct Layout {
    bases: Vec<Vec<Vec2>>,
    offset: Vec<usize>,
    dim: usize,
}

impl Layout {
    fn new(model: &LagrangianModel, path: &DiscretePath) -> Self {
        let n = path.nodes.len();
        let bases: Vec<Vec<Vec2>> = (0..n).map(|i| path.node_basis(&model.surface, i)).collect();
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + bases[i].len();
        }
        let dim = offset[n] + 1;
        Layout { bases, offset, dim }
    }

    fn residual(&self, path: &DiscretePath, eta: &CovectorField) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim);
        for (i, b) in self.bases.iter().enumerate() {
            for (a, v) in b.iter().enumerate() {
                r[self.offset[i] + a] = eta.nodes[i].dot(v);
            }
        }
        r[self.dim - 1] = path.period * eta.dt;
        r
    }

    fn displace(&self, model: &LagrangianModel, path: &DiscretePath, z: &DVector<f64>) -> Result<DiscretePath> {
        let s = &model.surface;
        let mut nodes = Vec::with_capacity(path.nodes.len());
        for (i, p) in path.nodes.iter().enumerate() {
            let mut d = Vec2::zeros();
            for (a, v) in self.bases[i].iter().enumerate() {
                d += z[self.offset[i] + a] * v;
            }
            nodes.push(s.normalize(ChartPoint { chart: p.chart, q: p.q + d }));
        }
        if let BoundarySpec::Conormal { q0, q1, .. } = &path.boundary {
            let n = nodes.len() - 1;
            nodes[0] = q0.project(s, nodes[0]);
            nodes[n] = q1.project(s, nodes[n]);
        }
        for p in &nodes {
            s.check(*p)?;
        }
        Ok(DiscretePath { nodes, period: path.period * z[self.dim - 1].exp(), boundary: path.boundary.clone() })
    }
}

/// Colouring of node indices so that equally coloured nodes never share a segment.
fn colouring(path: &DiscretePath) -> usize {
    let n = path.nodes.len();
    if !path.is_closed() {
        return 3;
    }
    (3..=n).find(|c| n % c == 0 || (n % c != 1 && n % c != 2)).unwrap_or(n)
}

/// Jacobian of the reduced residual by coloured central differences.
fn jacobian(model: &LagrangianModel, path: &DiscretePath, k: f64, layout: &Layout) -> Result<DMatrix<f64>> {
    let n = path.nodes.len();
    let dim = layout.dim;
    let mut jac = DMatrix::zeros(dim, dim);
    let colours = colouring(path);
    let scale = path
        .nodes
        .iter()
        .map(|p| p.q.norm())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let eps = 1e-6 * scale.min(10.0);
    let eps = match model.surface {
        crate::surface::SurfaceModel::HyperbolicHalfPlane { .. } => {
            let ymin = path.nodes.iter().map(|p| p.q.y).fold(f64::INFINITY, f64::min);
            eps.min(1e-5 * ymin)
        }
        _ => eps,
    };
    for colour in 0..colours {
        for dir in 0..2 {
            let mut z = DVector::zeros(dim);
            let mut any = false;
            for i in (colour..n).step_by(colours) {
                if dir < layout.bases[i].len() {
                    z[layout.offset[i] + dir] = eps;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let plus = layout.displace(model, path, &z)?;
            let minus = layout.displace(model, path, &(-&z))?;
            let rp = layout.residual(&plus, &eta_unchecked(model, &plus, k));
            let rm = layout.residual(&minus, &eta_unchecked(model, &minus, k));
            let diff = (rp - rm) / (2.0 * eps);
            for i in (colour..n).step_by(colours) {
                if dir >= layout.bases[i].len() {
                    continue;
                }
                let col = layout.offset[i] + dir;
                let neighbours: Vec<usize> = if path.is_closed() {
                    vec![(i + n - 1) % n, i, (i + 1) % n]
                } else {
                    let mut v = vec![i];
                    if i > 0 {
                        v.push(i - 1);
                    }
                    if i + 1 < n {
                        v.push(i + 1);
                    }
                    v
                };
                for j in neighbours {
                    for a in 0..layout.bases[j].len() {
                        let row = layout.offset[j] + a;
                        jac[(row, col)] = diff[row];
                    }
                }
            }
        }
    }
    // ln T column; the ln T row follows by symmetry of the action part (the sigma term has no period row)
    let mut z = DVector::zeros(dim);
    z[dim - 1] = 1e-6;
    let plus = layout.displace(model, path, &z)?;
    let minus = layout.displace(model, path, &(-&z))?;
    let rp = layout.residual(&plus, &eta_unchecked(model, &plus, k));
    let rm = layout.residual(&minus, &eta_unchecked(model, &minus, k));
    let col = (rp - rm) / 2e-6;
    for r in 0..dim {
        jac[(r, dim - 1)] = col[r];
        jac[(dim - 1, r)] = col[r];
    }
    Ok(jac)
}

#[derive(Clone, Debug)]
pub struct PolishOutcome {
    pub path: DiscretePath,
    pub eta_norm: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt-damped Newton iteration on `eta_k = 0`.
pub fn newton_polish(
    model: &LagrangianModel,
    path: &DiscretePath,
    k: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PolishOutcome> {
    let metric = PathMetric::H1;
    let mut cur = path.clone();
    let mut eta = eta_unchecked(model, &cur, k);
    let mut norm = grad(model, &cur, &eta, metric)?.1;
    let mut iterations = 0;
    while norm > tol && iterations < max_iter {
        iterations += 1;
        let layout = Layout::new(model, &cur);
        let jac = jacobian(model, &cur, k, &layout)?;
        let r = layout.residual(&cur, &eta);
        let mut improved = false;
        if let Some(dz) = jac.clone().lu().solve(&(-&r)) {
            if let Some((cand, e2, n2)) = line_search(model, &cur, k, &layout, &dz, norm)? {
                cur = cand;
                eta = e2;
                norm = n2;
                continue;
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let trace = (0..jtj.nrows()).map(|i| jtj[(i, i)]).sum::<f64>() / jtj.nrows() as f64;
        let rhs = -(&jt * &r);
        let mut mu = 1e-12 * trace.max(1e-300);
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu;
            }
            let Some(ch) = a.cholesky() else {
                mu *= 100.0;
                continue;
            };
            let dz = ch.solve(&rhs);
            if let Some((cand, e2, n2)) = line_search(model, &cur, k, &layout, &dz, norm)? {
                cur = cand;
                eta = e2;
                norm = n2;
                improved = true;
                break;
            }
            mu *= 100.0;
        }
        if !improved {
            break;
        }
    }
    Ok(PolishOutcome { path: cur, eta_norm: norm, iterations })
}

fn line_search(
    model: &LagrangianModel,
    cur: &DiscretePath,
    k: f64,
    layout: &Layout,
    dz: &DVector<f64>,
    norm: f64,
) -> Result<Option<(DiscretePath, CovectorField, f64)>> {
    if dz.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let mut lambda = 1.0;
    for _ in 0..6 {
        let step = dz * lambda;
        if let Ok(cand) = layout.displace(model, cur, &step) {
            if cand.nodes.iter().all(|p| model.surface.in_working_region(*p)) {
                let e2 = eta_unchecked(model, &cand, k);
                let n2 = grad(model, &cand, &e2, PathMetric::H1)?.1;
                if n2 < norm {
                    return Ok(Some((cand, e2, n2)));
                }
            }
        }
        lambda *= 0.5;
    }
    Ok(None)
}

/// Number of negative eigenvalues of the symmetrised Hessian of the discrete action at a critical point.
pub fn hessian_index(model: &LagrangianModel, path: &DiscretePath, k: f64) -> Result<usize> {
    let eta = eta_unchecked(model, path, k);
    let norm = grad(model, path, &eta, PathMetric::H1)?.1;
    if norm > 1e-4 {
        return Err(MagflowError::Precondition(format!(
            "Hessian index needs a critical point, |eta| = {norm:e}"
        )));
    }
    let layout = Layout::new(model, path);
    let jac = jacobian(model, path, k, &layout)?;
    let sym = (&jac + jac.transpose()) * 0.5;
    // congruence to the Sobolev metric does not change the signature, but scaling rows
    // to comparable size makes the zero-mode threshold meaningful
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let thresh = 1e-7 * max;
    Ok(eig.eigenvalues.iter().filter(|&&v| v < -thresh).count())
}
