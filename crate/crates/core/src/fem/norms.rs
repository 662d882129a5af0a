//! Quadrature norms of Q1 fields given by vertex values.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::Result;
use crate::fem::assembly::{element_points, QuadPoint};
use crate::fem::mesh::QuadMesh;

/// `∫ f(p, u_h(p), ∇u_h(p))` over active elements of `mesh`.
pub fn integrate(
    mesh: &QuadMesh,
    u: &[f64],
    f: impl Fn(&QuadPoint, f64, Vector2<f64>) -> f64 + Sync,
) -> Result<f64> {
    let parts: Result<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .filter(|e| mesh.is_active(*e))
        .map(|e| {
            let vs = mesh.element_vertices(e);
            let mut acc = 0.0;
            for (p, w, n, grads) in element_points(mesh, e)? {
                let mut val = 0.0;
                let mut grad = Vector2::zeros();
                for a in 0..4 {
                    val += u[vs[a]] * n[a];
                    grad += grads[a] * u[vs[a]];
                }
                acc += w * f(&p, val, grad);
            }
            Ok(acc)
        })
        .collect();
    Ok(parts?.iter().sum())
}

/// Like [`integrate`] for several fields at once.
pub fn integrate_fields(
    mesh: &QuadMesh,
    fields: &[&[f64]],
    f: impl Fn(&QuadPoint, &[f64], &[Vector2<f64>]) -> f64 + Sync,
) -> Result<f64> {
    let parts: Result<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .filter(|e| mesh.is_active(*e))
        .map(|e| {
            let vs = mesh.element_vertices(e);
            let mut acc = 0.0;
            let mut vals = vec![0.0; fields.len()];
            let mut grads = vec![Vector2::zeros(); fields.len()];
            for (p, w, n, g) in element_points(mesh, e)? {
                for (k, u) in fields.iter().enumerate() {
                    vals[k] = (0..4).map(|a| u[vs[a]] * n[a]).sum();
                    grads[k] = (0..4).map(|a| g[a] * u[vs[a]]).sum();
                }
                acc += w * f(&p, &vals, &grads);
            }
            Ok(acc)
        })
        .collect();
    Ok(parts?.iter().sum())
}

pub fn l2_norm(mesh: &QuadMesh, u: &[f64]) -> Result<f64> {
    Ok(integrate(mesh, u, |_, v, _| v * v)?.sqrt())
}

pub fn h1_seminorm(mesh: &QuadMesh, u: &[f64]) -> Result<f64> {
    Ok(integrate(mesh, u, |_, _, g| g.norm_squared())?.sqrt())
}

/// Maximum nodal magnitude over vertices of active elements.
pub fn linf_norm(mesh: &QuadMesh, u: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for e in 0..mesh.n_elements() {
        if mesh.is_active(e) {
            for v in mesh.element_vertices(e) {
                best = best.max(u[v].abs());
            }
        }
    }
    best
}

/// `‖f‖_{L²}` of an analytic field by element quadrature.
pub fn function_l2_norm(mesh: &QuadMesh, f: impl Fn([f64; 2]) -> f64 + Sync) -> Result<f64> {
    let zero = vec![0.0; mesh.n_vertices()];
    Ok(integrate(mesh, &zero, |p, _, _| f(p.physical).powi(2))?.sqrt())
}

/// `‖u_h − u‖_{L²}` with `u` evaluated at mapped quadrature points.
pub fn l2_error(mesh: &QuadMesh, u: &[f64], exact: impl Fn([f64; 2]) -> f64 + Sync) -> Result<f64> {
    Ok(integrate(mesh, u, |p, v, _| (v - exact(p.physical)).powi(2))?.sqrt())
}

/// `‖∇u_h − ∇u‖_{L²}`.
pub fn h1_semi_error(
    mesh: &QuadMesh,
    u: &[f64],
    grad: impl Fn([f64; 2]) -> [f64; 2] + Sync,
) -> Result<f64> {
    Ok(integrate(mesh, u, |p, _, g| {
        let e = grad(p.physical);
        (g[0] - e[0]).powi(2) + (g[1] - e[1]).powi(2)
    })?
    .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn nodal(mesh: &QuadMesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        mesh.vertices().iter().map(|v| f(*v)).collect()
    }

    #[test]
    fn norm_examples() {
        let m = QuadMesh::unit_square(64);
        assert!((l2_norm(&m, &nodal(&m, |_| 1.0)).unwrap() - 1.0).abs() < 1e-14);
        let sine = |x: [f64; 2]| (2.0 * PI * x[0]).sin();
        assert!((function_l2_norm(&m, sine).unwrap() - 0.5f64.sqrt()).abs() < 1e-4);
        // the nodal interpolant is second-order accurate
        assert!((l2_norm(&m, &nodal(&m, sine)).unwrap() - 0.5f64.sqrt()).abs() < 2e-3);
        assert_eq!(l2_norm(&m, &nodal(&m, |_| 0.0)).unwrap(), 0.0);
        assert_eq!(linf_norm(&m, &nodal(&m, |_| 0.0)), 0.0);
        assert!(h1_seminorm(&m, &nodal(&m, |_| 3.0)).unwrap() < 1e-12);
    }
}
