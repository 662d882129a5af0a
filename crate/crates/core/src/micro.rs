//! Fine-scale solves: the substitute problem on the periodic reference mesh and
//! the original problem on the vertex-mapped deformed mesh.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::coefficient::{min_eigenvalue, Coefficient, Ellipticity};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fem::assembly::QuadPoint;
use crate::fem::{assemble, norms, solve_cg, CgOptions, CgReport, DofMap, PointCoefficients, QuadMesh};
use crate::geometry::{spectral_norm, CellJacobian, EpsTransform, Microstructure};
use crate::lattice::{micro_resolution, GridFunction, Rect};

#[derive(Clone, Debug)]
pub struct MicroProblem {
    /// Flux scaling exponent, 0 or 2.
    pub l: u32,
    pub coefficient: Coefficient,
    /// `f(x, y)`; the fine source is `f(x, x/ε)`.
    pub source: Expr,
    pub epsilon: f64,
    /// Elements per unit length of the global mesh.
    pub mesh: usize,
    pub micro: Microstructure,
    pub solver_tol: f64,
}

#[derive(Clone, Debug)]
pub struct MicroSolution {
    pub mesh: QuadMesh,
    /// Values at every mesh vertex (zero at vertices without a DOF).
    pub values: Vec<f64>,
    pub l2: f64,
    pub grad_l2: f64,
    /// `‖u‖ + ε^{l/2}‖∇u‖`.
    pub estimate: f64,
    pub solver: CgReport,
}

impl MicroSolution {
    /// The solution as a masked grid function on the reference grid.
    pub fn grid_function(&self, resolution: usize) -> Result<GridFunction> {
        GridFunction::from_nodal(Rect::UNIT, resolution, self.values.clone())?
            .with_mask(self.mesh.active().to_vec())
    }
}

impl MicroProblem {
    pub fn validate(&self) -> Result<usize> {
        if self.l != 0 && self.l != 2 {
            return Err(Error::ParameterOutOfRange(format!(
                "flux scaling l = {} not in {{0, 2}}",
                self.l
            )));
        }
        let n = micro_resolution(self.epsilon, self.mesh)
            .map_err(|e| Error::Tiling(e.to_string()))?;
        self.micro.cell().check_alignment(n)?;
        Ok(n)
    }

    /// Elements per cell side.
    pub fn per_cell(&self) -> Result<usize> {
        self.validate()
    }

    pub fn eps_transform(&self) -> Result<EpsTransform> {
        EpsTransform::new(self.epsilon, self.micro.clone())
    }

    pub fn scaling(&self) -> f64 {
        self.epsilon.powi(self.l as i32)
    }

    pub fn reference_mesh(&self) -> Result<QuadMesh> {
        let n = self.validate()?;
        QuadMesh::unit_square(self.mesh).perforate(self.micro.cell(), n)
    }

    fn ellipticity(&self) -> Result<Ellipticity> {
        self.coefficient.ellipticity(16)
    }

    fn solve_on(&self, mesh: QuadMesh, coeffs: impl Fn(&QuadPoint) -> Result<PointCoefficients> + Sync) -> Result<MicroSolution> {
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &dofs, coeffs)?;
        let opts = CgOptions {
            tol: self.solver_tol,
            max_iter: 200_000,
            ..Default::default()
        };
        let (u, report) = solve_cg(&sys.matrix, &sys.rhs, &opts)?;
        let values = dofs.expand(&u);
        let l2 = norms::l2_norm(&mesh, &values)?;
        let grad_l2 = norms::h1_seminorm(&mesh, &values)?;
        let estimate = l2 + self.epsilon.powf(self.l as f64 / 2.0) * grad_l2;
        Ok(MicroSolution {
            mesh,
            values,
            l2,
            grad_l2,
            estimate,
            solver: report,
        })
    }
}

/// Cell index, local cell point and transformed data at a reference quadrature point.
#[derive(Clone, Copy, Debug)]
pub struct SubstitutePoint {
    pub cell: [usize; 2],
    pub y: [f64; 2],
    pub y_mapped: [f64; 2],
    pub x_mapped: [f64; 2],
    pub jacobian: CellJacobian,
}

pub fn substitute_point(t: &EpsTransform, n: usize, p: &QuadPoint) -> SubstitutePoint {
    let [i, j] = p.elem_ij;
    let cell = [i / n, j / n];
    let y = [
        ((i % n) as f64 + p.xi[0]) / n as f64,
        ((j % n) as f64 + p.xi[1]) / n as f64,
    ];
    let (x_mapped, y_mapped, jacobian) = t.map_in_cell(cell, y);
    SubstitutePoint {
        cell,
        y,
        y_mapped,
        x_mapped,
        jacobian,
    }
}

/// `J Ψ⁻¹ A Ψ⁻ᵀ`.
#[inline]
pub fn transformed_coefficient(a: &Matrix2<f64>, jac: &CellJacobian) -> Matrix2<f64> {
    let inv = jac.inverse();
    inv * a * inv.transpose() * jac.det
}

/// Checks the uniform Jacobian bounds at one point.
pub fn check_bounds(micro: &Microstructure, jac: &CellJacobian) -> Result<()> {
    let c_j = micro.transform.c_j;
    if jac.det < c_j {
        return Err(Error::DegenerateJacobian {
            det: jac.det,
            threshold: c_j,
        });
    }
    let bound = micro.bound;
    let norm = spectral_norm(&jac.matrix);
    let inv_norm = spectral_norm(&jac.inverse());
    if jac.det > bound || norm > bound || inv_norm > bound {
        return Err(Error::ParameterOutOfRange(format!(
            "jacobian exceeds bound C = {bound} (J {:.3}, |Ψ| {norm:.3}, |Ψ⁻¹| {inv_norm:.3})",
            jac.det
        )));
    }
    Ok(())
}

/// Solves the substitute problem for `û_ε` on the reference perforated mesh.
pub fn solve_substitute(problem: &MicroProblem) -> Result<MicroSolution> {
    let n = problem.validate()?;
    let t = problem.eps_transform()?;
    let ell = problem.ellipticity()?;
    let required = ell.alpha * problem.micro.transform.c_j / problem.micro.bound.powi(2);
    let scale = problem.scaling();
    let mesh = problem.reference_mesh()?;
    problem.solve_on(mesh, |p| {
        let s = substitute_point(&t, n, p);
        check_bounds(&problem.micro, &s.jacobian)?;
        let a = problem.coefficient.eval(s.x_mapped, s.y_mapped);
        let d = transformed_coefficient(&a, &s.jacobian);
        let lambda = min_eigenvalue(&d);
        if lambda < required {
            return Err(Error::CoercivityViolation {
                found: lambda,
                required,
            });
        }
        Ok(PointCoefficients {
            diffusion: d * scale,
            reaction: s.jacobian.det,
            load: s.jacobian.det * problem.source.eval(s.x_mapped, s.y_mapped),
            ..Default::default()
        })
    })
}

/// Deformed mesh `ψ_ε(reference mesh)`.
pub fn mapped_mesh(problem: &MicroProblem) -> Result<QuadMesh> {
    let t = problem.eps_transform()?;
    Ok(problem.reference_mesh()?.map_vertices(|v| t.map(v)))
}

/// Solves the original problem for `u_ε` on the vertex-mapped mesh.
pub fn solve_fine_mapped(problem: &MicroProblem) -> Result<MicroSolution> {
    problem.validate()?;
    problem.ellipticity()?;
    let eps = problem.epsilon;
    let scale = problem.scaling();
    let mesh = mapped_mesh(problem)?;
    problem.solve_on(mesh, |p| {
        let x = p.physical;
        let y = [x[0] / eps, x[1] / eps];
        Ok(PointCoefficients {
            diffusion: problem.coefficient.eval(x, y) * scale,
            reaction: 1.0,
            load: problem.source.eval(x, y),
            ..Default::default()
        })
    })
}

/// Sampled minimum of `λ_min(J Ψ⁻¹ Â Ψ⁻ᵀ)` over all reference quadrature
/// points, with the lower bound `α c_J / C²`.
pub fn coercivity_diagnostic(problem: &MicroProblem) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    let n = problem.validate()?;
    let t = problem.eps_transform()?;
    let ell = problem.ellipticity()?;
    let bound = ell.alpha * problem.micro.transform.c_j / problem.micro.bound.powi(2);
    let mesh = problem.reference_mesh()?;
    let mins: Result<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .filter(|e| mesh.is_active(*e))
        .map(|e| {
            let mut m = f64::INFINITY;
            for (p, _, _, _) in crate::fem::assembly::element_points(&mesh, e)? {
                let s = substitute_point(&t, n, &p);
                check_bounds(&problem.micro, &s.jacobian)?;
                let a = problem.coefficient.eval(s.x_mapped, s.y_mapped);
                m = m.min(min_eigenvalue(&transformed_coefficient(&a, &s.jacobian)));
            }
            Ok(m)
        })
        .collect();
    Ok((mins?.into_iter().fold(f64::INFINITY, f64::min), bound))
}

/// Relative `L²` difference between `û_ε` and `u_ε ∘ ψ_ε`, compared vertexwise
/// on the reference mesh.
pub fn equivalence_gap(substitute: &MicroSolution, fine: &MicroSolution) -> Result<f64> {
    if substitute.values.len() != fine.values.len() {
        return Err(Error::ResolutionMismatch(
            "substitute and fine solutions live on different meshes".into(),
        ));
    }
    let diff: Vec<f64> = substitute
        .values
        .iter()
        .zip(&fine.values)
        .map(|(a, b)| a - b)
        .collect();
    let num = norms::l2_norm(&substitute.mesh, &diff)?;
    let den = norms::l2_norm(&substitute.mesh, &substitute.values)?;
    Ok(if den > 0.0 { num / den } else { num })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub mesh: usize,
    pub per_cell: usize,
    pub gap: f64,
    pub substitute_l2: f64,
    pub fine_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub epsilon: f64,
    pub rows: Vec<EquivalenceRow>,
    pub decreasing: bool,
}

/// Runs both solves at each global mesh resolution.
pub fn verify_equivalence(problem: &MicroProblem, meshes: &[usize]) -> Result<EquivalenceReport> {
    let mut rows = Vec::new();
    for &m in meshes {
        let p = MicroProblem {
            mesh: m,
            ..problem.clone()
        };
        let n = p.validate()?;
        let (sub, fine) = rayon::join(|| solve_substitute(&p), || solve_fine_mapped(&p));
        let (sub, fine) = (sub?, fine?);
        rows.push(EquivalenceRow {
            mesh: m,
            per_cell: n,
            gap: equivalence_gap(&sub, &fine)?,
            substitute_l2: sub.l2,
            fine_l2: fine.l2,
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].gap <= w[0].gap);
    Ok(EquivalenceReport {
        epsilon: problem.epsilon,
        rows,
        decreasing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub epsilon: f64,
    pub l2: f64,
    pub grad_l2: f64,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformEstimate {
    pub l: u32,
    pub rows: Vec<EstimateRow>,
    /// `max_ε estimate / first estimate`.
    pub ratio: f64,
    pub bounded: bool,
}

pub fn uniform_estimate_sweep(problem: &MicroProblem, eps: &[f64]) -> Result<UniformEstimate> {
    let mut rows = Vec::new();
    for &e in eps {
        let p = MicroProblem {
            epsilon: e,
            ..problem.clone()
        };
        let s = solve_substitute(&p)?;
        rows.push(EstimateRow {
            epsilon: e,
            l2: s.l2,
            grad_l2: s.grad_l2,
            estimate: s.estimate,
        });
    }
    let first = rows.first().map_or(0.0, |r| r.estimate);
    let worst = rows.iter().map(|r| r.estimate).fold(0.0, f64::max);
    let ratio = if first > 0.0 { worst / first } else if worst == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(UniformEstimate {
        l: problem.l,
        rows,
        ratio,
        bounded: ratio <= 1.5,
    })
}
