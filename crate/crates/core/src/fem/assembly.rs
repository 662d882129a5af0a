//! Isoparametric Q1 assembly of `∫ D∇u·∇φ + c u φ = ∫ f φ + ∫ g·∇φ`.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::dofmap::DofMap;
use crate::fem::mesh::QuadMesh;
use crate::fem::quadrature::rule;
use crate::fem::sparse::CsrMatrix;

/// A quadrature point handed to coefficient callbacks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadPoint {
    pub elem: usize,
    pub elem_ij: [usize; 2],
    /// Local coordinates in `[0,1]²`.
    pub xi: [f64; 2],
    /// Position in the unmapped structured mesh.
    pub reference: [f64; 2],
    /// Position in mapped coordinates.
    pub physical: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointCoefficients {
    pub diffusion: Matrix2<f64>,
    pub reaction: f64,
    pub load: f64,
    /// Contributes `∫ flux·∇φ` to the right-hand side.
    pub flux: Vector2<f64>,
    /// Weight for the weighted-mean functional (`∫ weight φ`).
    pub weight: f64,
}

impl Default for PointCoefficients {
    fn default() -> Self {
        PointCoefficients {
            diffusion: Matrix2::identity(),
            reaction: 0.0,
            load: 0.0,
            flux: Vector2::zeros(),
            weight: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Assembled {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// `∫ weight φ_i` per DOF.
    pub mean_weights: Vec<f64>,
}

/// Shape values and reference gradients of the four bilinear basis functions.
#[inline]
pub fn shape(xi: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    let (s, t) = (xi[0], xi[1]);
    (
        [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t],
        [
            [-(1.0 - t), -(1.0 - s)],
            [1.0 - t, -s],
            [t, s],
            [-t, 1.0 - s],
        ],
    )
}

/// Geometry of element `e` at local point `ξ`: physical point, physical shape
/// gradients and `|det|` of the map from `[0,1]²`.
#[inline]
pub fn element_geometry(mesh: &QuadMesh, e: usize, xi: [f64; 2]) -> Result<([f64; 2], [f64; 4], [Vector2<f64>; 4], f64)> {
    let verts = mesh.element_vertices(e).map(|v| mesh.vertices()[v]);
    let (n, dn) = shape(xi);
    let mut x = [0.0; 2];
    let mut jac = Matrix2::zeros();
    for a in 0..4 {
        for d in 0..2 {
            x[d] += n[a] * verts[a][d];
            jac[(d, 0)] += verts[a][d] * dn[a][0];
            jac[(d, 1)] += verts[a][d] * dn[a][1];
        }
    }
    let det = jac.determinant();
    if det <= 0.0 {
        return Err(Error::InvertedElement { element: e, det });
    }
    let inv_t = jac.try_inverse().unwrap().transpose();
    let grads = dn.map(|g| inv_t * Vector2::new(g[0], g[1]));
    Ok((x, n, grads, det))
}

/// Quadrature points of element `e` with their weights `w |det|`, plus shape data.
pub fn element_points(
    mesh: &QuadMesh,
    e: usize,
) -> Result<Vec<(QuadPoint, f64, [f64; 4], [Vector2<f64>; 4])>> {
    let elem_ij = mesh.element_ij(e);
    rule(mesh.kink(e))
        .iter()
        .map(|(xi, w)| {
            let (physical, n, grads, det) = element_geometry(mesh, e, *xi)?;
            Ok((
                QuadPoint {
                    elem: e,
                    elem_ij,
                    xi: *xi,
                    reference: mesh.reference_point(e, *xi),
                    physical,
                },
                w * det,
                n,
                grads,
            ))
        })
        .collect()
}

fn check(c: &PointCoefficients, p: &QuadPoint) -> Result<()> {
    let finite = c.diffusion.iter().all(|v| v.is_finite())
        && c.reaction.is_finite()
        && c.load.is_finite()
        && c.flux.iter().all(|v| v.is_finite())
        && c.weight.is_finite();
    if !finite {
        return Err(Error::NonFiniteCoefficient(p.physical));
    }
    if c.reaction < 0.0 {
        return Err(Error::NegativeReaction {
            value: c.reaction,
            point: p.physical,
        });
    }
    Ok(())
}

struct Local {
    dofs: [Option<usize>; 4],
    k: [[f64; 4]; 4],
    f: [f64; 4],
    w: [f64; 4],
}

pub fn assemble(
    mesh: &QuadMesh,
    dofs: &DofMap,
    coefficients: impl Fn(&QuadPoint) -> Result<PointCoefficients> + Sync,
) -> Result<Assembled> {
    let locals: Result<Vec<Local>> = (0..mesh.n_elements())
        .into_par_iter()
        .filter(|e| mesh.is_active(*e))
        .map(|e| {
            let mut local = Local {
                dofs: mesh.element_vertices(e).map(|v| dofs.dof(v)),
                k: [[0.0; 4]; 4],
                f: [0.0; 4],
                w: [0.0; 4],
            };
            for (p, w, n, grads) in element_points(mesh, e)? {
                let c = coefficients(&p)?;
                check(&c, &p)?;
                for a in 0..4 {
                    let dg = c.diffusion * grads[a];
                    for b in 0..4 {
                        local.k[b][a] += w * (dg.dot(&grads[b]) + c.reaction * n[a] * n[b]);
                    }
                    local.f[a] += w * (c.load * n[a] + c.flux.dot(&grads[a]));
                    local.w[a] += w * c.weight * n[a];
                }
            }
            Ok(local)
        })
        .collect();
    let locals = locals?;
    let nd = dofs.n_dofs();
    let mut rhs = vec![0.0; nd];
    let mut mean_weights = vec![0.0; nd];
    let mut triplets = Vec::with_capacity(16 * locals.len());
    for l in &locals {
        for a in 0..4 {
            let Some(ra) = l.dofs[a] else { continue };
            rhs[ra] += l.f[a];
            mean_weights[ra] += l.w[a];
            for b in 0..4 {
                if let Some(cb) = l.dofs[b] {
                    triplets.push((ra, cb, l.k[a][b]));
                }
            }
        }
    }
    Ok(Assembled {
        matrix: CsrMatrix::from_triplets(nd, triplets),
        rhs,
        mean_weights,
    })
}

/// Load vector `∫ f φ + ∫ g·∇φ` only.
pub fn assemble_rhs(
    mesh: &QuadMesh,
    dofs: &DofMap,
    load: impl Fn(&QuadPoint) -> Result<(f64, Vector2<f64>)> + Sync,
) -> Result<Vec<f64>> {
    let parts: Result<Vec<([Option<usize>; 4], [f64; 4])>> = (0..mesh.n_elements())
        .into_par_iter()
        .filter(|e| mesh.is_active(*e))
        .map(|e| {
            let mut f = [0.0; 4];
            for (p, w, n, grads) in element_points(mesh, e)? {
                let (s, g) = load(&p)?;
                if !s.is_finite() || !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteCoefficient(p.physical));
                }
                for a in 0..4 {
                    f[a] += w * (s * n[a] + g.dot(&grads[a]));
                }
            }
            Ok((mesh.element_vertices(e).map(|v| dofs.dof(v)), f))
        })
        .collect();
    let mut rhs = vec![0.0; dofs.n_dofs()];
    for (d, f) in parts? {
        for a in 0..4 {
            if let Some(r) = d[a] {
                rhs[r] += f[a];
            }
        }
    }
    Ok(rhs)
}
