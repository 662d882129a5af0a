//! Homogenized macro problem (`l = 0`), pointwise two-scale limit (`l = 2`),
//! back-transformation checks and ε-sweeps.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{solve_cell, CellCorrectors, CellSetup, EffectiveTensorField, Route};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fem::assembly::{element_points, QuadPoint};
use crate::fem::quadrature::GAUSS_POINTS_2D;
use crate::fem::{assemble, norms, solve_cg, CgOptions, CgReport, DofMap, PointCoefficients, QuadMesh};
use crate::lattice::{cell_index_set, test_battery, two_scale_error_sampled, unfold, GridFunction, Rect};
use crate::micro::{solve_substitute, substitute_point, MicroProblem};

/// Index of a 2×2 Gauss point from its local coordinates.
#[inline]
fn gauss_index(xi: [f64; 2]) -> usize {
    (xi[0] > 0.5) as usize + 2 * (xi[1] > 0.5) as usize
}

/// Macro mesh Gauss points in assembly order (`4e + q`).
pub fn macro_points(mesh: &QuadMesh) -> Vec<[f64; 2]> {
    (0..mesh.n_elements())
        .flat_map(|e| GAUSS_POINTS_2D.iter().map(move |g| mesh.reference_point(e, *g)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct HomogenizedSolution {
    pub mesh: QuadMesh,
    pub u0: Vec<f64>,
    pub solver: CgReport,
}

impl HomogenizedSolution {
    /// `(u₀(x), ∇u₀(x))` by bilinear interpolation.
    pub fn eval(&self, x: [f64; 2]) -> (f64, Vector2<f64>) {
        let m = &self.mesh;
        let s = [(x[0] - m.origin[0]) / m.h, (x[1] - m.origin[1]) / m.h];
        let i = (s[0].floor() as usize).min(m.nx - 1);
        let j = (s[1].floor() as usize).min(m.ny - 1);
        let xi = [s[0] - i as f64, s[1] - j as f64];
        let e = j * m.nx + i;
        let (n, dn) = crate::fem::assembly::shape(xi);
        let vs = m.element_vertices(e);
        let mut v = 0.0;
        let mut g = Vector2::zeros();
        for a in 0..4 {
            v += n[a] * self.u0[vs[a]];
            g += Vector2::new(dn[a][0], dn[a][1]) * (self.u0[vs[a]] / m.h);
        }
        (v, g)
    }

    pub fn l2(&self) -> Result<f64> {
        norms::l2_norm(&self.mesh, &self.u0)
    }
}

/// Solves `∫ B∇u₀·∇φ + Θ u₀ φ = ∫ Θ f φ` on the unperforated unit square with
/// tensors given at the macro Gauss points.
pub fn solve_homogenized(
    mesh_n: usize,
    field: &EffectiveTensorField,
    source: &Expr,
    tol: f64,
) -> Result<HomogenizedSolution> {
    if source.depends_on_y() {
        return Err(Error::Config(
            "the homogenized problem needs a source f(x) without y-dependence".into(),
        ));
    }
    let mesh = QuadMesh::unit_square(mesh_n);
    if field.points.len() != 4 * mesh.n_elements() {
        return Err(Error::ResolutionMismatch(format!(
            "tensor field has {} points, macro mesh needs {}",
            field.points.len(),
            4 * mesh.n_elements()
        )));
    }
    let dofs = DofMap::new(&mesh);
    let sys = assemble(&mesh, &dofs, |p: &QuadPoint| {
        let k = 4 * p.elem + gauss_index(p.xi);
        let theta = field.porosity[k];
        Ok(PointCoefficients {
            diffusion: field.tensors[k],
            reaction: theta,
            load: theta * source.eval(p.physical, [0.0; 2]),
            ..Default::default()
        })
    })?;
    let opts = CgOptions {
        tol,
        max_iter: 100_000,
        ..Default::default()
    };
    let (u, solver) = solve_cg(&sys.matrix, &sys.rhs, &opts)?;
    Ok(HomogenizedSolution {
        u0: dofs.expand(&u),
        mesh,
        solver,
    })
}

/// Relative residual of `ŵ_j = w_j∘ψ₀ + ψ̌₀,j` (mean removed), max over `j`.
///
/// Both correctors must come from the same cell resolution; the deformed mesh
/// vertex `v` is the image of reference vertex `v`.
pub fn corrector_rule_residual(
    setup: &CellSetup,
    transformed: &CellCorrectors,
    deformed: &CellCorrectors,
) -> Result<f64> {
    if transformed.route != Route::Transformed || deformed.route != Route::Deformed {
        return Err(Error::Config("corrector rule needs one corrector per route".into()));
    }
    let mesh = &transformed.mesh;
    let theta = transformed.theta;
    let area = norms::integrate(mesh, &transformed.correctors[0], |_, _, _| 1.0)?;
    let centered = |v: &[f64]| -> Result<Vec<f64>> {
        let m = norms::integrate(mesh, v, |_, u, _| u)? / area;
        Ok(v.iter().map(|x| x - m).collect())
    };
    let mut worst = 0.0f64;
    for j in 0..2 {
        let diff: Vec<f64> = (0..mesh.n_vertices())
            .map(|v| {
                let d = setup
                    .transform()
                    .displacement(theta, mesh.reference_vertex(v));
                transformed.correctors[j][v] - deformed.correctors[j][v] - d[j]
            })
            .collect();
        let num = norms::l2_norm(mesh, &centered(&diff)?)?;
        let den = norms::l2_norm(mesh, &centered(&transformed.correctors[j])?)?;
        worst = worst.max(if den > 0.0 { num / den } else { num });
    }
    Ok(worst)
}

/// Per-point solution of the `l = 2` limit problem on one cell.
#[derive(Clone, Debug)]
pub struct TwoScalePoint {
    pub route: Route,
    pub x: [f64; 2],
    pub theta: f64,
    pub mesh: QuadMesh,
    pub values: Vec<f64>,
    pub solver: CgReport,
}

impl TwoScalePoint {
    /// Values at the micro Gauss points (zero in the hole), grid-function order.
    pub fn gauss_values(&self) -> Result<Vec<f64>> {
        let n = self.mesh.nx;
        let g = GridFunction::from_nodal(Rect::UNIT, n, self.values.clone())?
            .with_mask(self.mesh.active().to_vec())?;
        Ok(g.gauss().to_vec())
    }
}

/// `∫ D∇_yû₀·∇_yφ + J û₀ φ = ∫ J f̂₀ φ` (transformed) or its deformed analogue.
pub fn solve_two_scale_point(
    setup: &CellSetup,
    source: &Expr,
    route: Route,
    x: [f64; 2],
) -> Result<TwoScalePoint> {
    let theta = setup.micro.theta(x);
    let mesh = setup.mesh(route, theta)?;
    let dofs = DofMap::periodic(&mesh, false);
    let t = setup.transform();
    let sys = assemble(&mesh, &dofs, |p| {
        let (d, w) = setup.point(route, x, theta, p);
        let y = match route {
            Route::Transformed => t.map_unchecked(theta, p.reference),
            Route::Deformed => p.physical,
        };
        Ok(PointCoefficients {
            diffusion: d,
            reaction: w,
            load: w * source.eval(x, y),
            ..Default::default()
        })
    })?;
    let opts = CgOptions {
        tol: setup.tol,
        max_iter: 100_000,
        ..Default::default()
    };
    let (u, solver) = solve_cg(&sys.matrix, &sys.rhs, &opts)?;
    Ok(TwoScalePoint {
        route,
        x,
        theta,
        values: dofs.expand(&u),
        mesh,
        solver,
    })
}

pub fn solve_two_scale_l2(
    setup: &CellSetup,
    source: &Expr,
    route: Route,
    points: &[[f64; 2]],
) -> Result<Vec<TwoScalePoint>> {
    points
        .par_iter()
        .map(|x| solve_two_scale_point(setup, source, route, *x))
        .collect()
}

/// Relative `L²(Y*)` gap of `û₀(x,·)` against `u₀(x, ψ₀(x,·))`.
pub fn two_scale_rule_gap(transformed: &TwoScalePoint, deformed: &TwoScalePoint) -> Result<f64> {
    let diff: Vec<f64> = transformed
        .values
        .iter()
        .zip(&deformed.values)
        .map(|(a, b)| a - b)
        .collect();
    let num = norms::l2_norm(&transformed.mesh, &diff)?;
    let den = norms::l2_norm(&transformed.mesh, &transformed.values)?;
    Ok(if den > 0.0 { num / den } else { num })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub error: f64,
    /// `log₂(e(2ε)/e(ε))`, absent for the first row.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub l: u32,
    pub rows: Vec<SweepRow>,
    pub monotone: bool,
    pub mean_order: f64,
    /// Report-only pairing discrepancies, one list per ε.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairings: Vec<Vec<f64>>,
}

impl ConvergenceTable {
    pub fn from_errors(l: u32, eps: &[f64], errors: &[f64]) -> Self {
        let mut rows = Vec::new();
        for (i, (e, err)) in eps.iter().zip(errors).enumerate() {
            let order = if i == 0 {
                None
            } else {
                let ratio = eps[i - 1] / e;
                Some((errors[i - 1] / err).ln() / ratio.ln())
            };
            rows.push(SweepRow {
                epsilon: *e,
                error: *err,
                order,
            });
        }
        let monotone = errors.windows(2).all(|w| w[1] < w[0]) || errors.iter().all(|e| *e == 0.0);
        let orders: Vec<f64> = rows.iter().filter_map(|r| r.order).filter(|o| o.is_finite()).collect();
        let mean_order = if orders.is_empty() {
            0.0
        } else {
            orders.iter().sum::<f64>() / orders.len() as f64
        };
        ConvergenceTable {
            l,
            rows,
            monotone,
            mean_order,
            pairings: Vec::new(),
        }
    }
}

fn cell_setup(problem: &MicroProblem, n: usize, tol: f64) -> CellSetup {
    CellSetup {
        micro: problem.micro.clone(),
        coefficient: problem.coefficient.clone(),
        n,
        tol,
    }
}

/// `‖𝒯_ε(ũ̂_ε) − ũ̂₀‖_{L²(Ω×Y)}` for one `l = 2` problem. The limit is solved at
/// every `x` quadrature point on a cell mesh with the same resolution as the
/// fine mesh.
pub fn l2_sweep_error(problem: &MicroProblem) -> Result<f64> {
    let n = problem.validate()?;
    if problem.l != 2 {
        return Err(Error::Config("l2_sweep_error needs l = 2".into()));
    }
    let sol = solve_substitute(problem)?;
    let g = sol.grid_function(problem.mesh)?;
    let unfolded = unfold(problem.epsilon, &g)?;
    let setup = cell_setup(problem, n, problem.solver_tol);
    let index: std::collections::HashMap<[i64; 2], usize> =
        unfolded.cells.iter().enumerate().map(|(c, k)| (*k, c)).collect();
    two_scale_error_sampled(problem.epsilon, n, &unfolded.cells, |k, x| {
        let limit = solve_two_scale_point(&setup, &problem.source, Route::Transformed, x)?;
        Ok((unfolded.gauss[index[&k]].clone(), limit.gauss_values()?))
    })
}

/// `ε`-cell averages of `ũ_ε`, i.e. `ε⁻² ∫_cell J_ε û_ε`, in lattice order.
pub fn cell_averages(problem: &MicroProblem, values: &[f64], mesh: &QuadMesh) -> Result<Vec<f64>> {
    let n = problem.validate()?;
    let t = problem.eps_transform()?;
    let m = t.cells_per_unit();
    let parts: Result<Vec<(usize, f64)>> = (0..mesh.n_elements())
        .into_par_iter()
        .filter(|e| mesh.is_active(*e))
        .map(|e| {
            let vs = mesh.element_vertices(e);
            let mut acc = 0.0;
            let mut cell = 0;
            for (p, w, sh, _) in element_points(mesh, e)? {
                let s = substitute_point(&t, n, &p);
                cell = s.cell[1] * m + s.cell[0];
                let u: f64 = (0..4).map(|a| sh[a] * values[vs[a]]).sum();
                acc += w * s.jacobian.det * u;
            }
            Ok((cell, acc))
        })
        .collect();
    let mut sums = vec![0.0; m * m];
    for (c, v) in parts? {
        sums[c] += v;
    }
    let eps2 = problem.epsilon * problem.epsilon;
    Ok(sums.into_iter().map(|s| s / eps2).collect())
}

/// Homogenized solution with tensors from transformed cell solves at `n` per cell.
pub fn homogenize(problem: &MicroProblem, n: usize, macro_mesh: usize, route: Route) -> Result<HomogenizedSolution> {
    let setup = cell_setup(problem, n, problem.solver_tol.min(1e-10));
    let mesh = QuadMesh::unit_square(macro_mesh);
    let points = macro_points(&mesh);
    let cache = crate::cell::TensorCache::new(1e-3);
    let field = crate::cell::tensor_field(&setup, route, &points, Some(&cache))?;
    solve_homogenized(macro_mesh, &field, &problem.source, problem.solver_tol)
}

/// `sqrt(Σ_k ε² (avg_k ũ_ε − Θ(c_k) u₀(c_k))²)` for one `l = 0` problem.
pub fn l0_sweep_error(problem: &MicroProblem, macro_mesh: usize) -> Result<(f64, Vec<f64>)> {
    let n = problem.validate()?;
    if problem.l != 0 {
        return Err(Error::Config("l0_sweep_error needs l = 0".into()));
    }
    let (sol, hom) = rayon::join(
        || solve_substitute(problem),
        || homogenize(problem, n, macro_mesh, Route::Transformed),
    );
    let (sol, hom) = (sol?, hom?);
    let avgs = cell_averages(problem, &sol.values, &sol.mesh)?;
    let eps = problem.epsilon;
    let m = (1.0 / eps).round() as usize;
    let mut acc = 0.0;
    for (c, avg) in avgs.iter().enumerate() {
        let center = [((c % m) as f64 + 0.5) * eps, ((c / m) as f64 + 0.5) * eps];
        let target = problem.micro.theta(center) * hom.eval(center).0;
        acc += eps * eps * (avg - target).powi(2);
    }
    let pairings = gradient_pairings(problem, &sol.values, &hom, n)?;
    Ok((acc.sqrt(), pairings))
}

/// Report-only: for each battery function `φ`, the gap between
/// `∫ ∂₁û_ε φ(x, x/ε)` and `∫∫_{Y*} (∂₁û₀ + ∂_{y₁}û₁) φ`.
fn gradient_pairings(problem: &MicroProblem, values: &[f64], hom: &HomogenizedSolution, n: usize) -> Result<Vec<f64>> {
    let battery = test_battery();
    let eps = problem.epsilon;
    let mesh = problem.reference_mesh()?;
    let fine: Vec<f64> = battery
        .iter()
        .map(|phi| {
            norms::integrate(&mesh, values, |p, _, g| {
                let x = p.physical;
                g[0] * phi.eval(x, [x[0] / eps, x[1] / eps])
            })
        })
        .collect::<Result<_>>()?;
    // limit: 8×8 macro cells with 2×2 Gauss points, correctors at each point
    let setup = cell_setup(problem, n.min(32), 1e-10);
    let coarse = QuadMesh::unit_square(8);
    let pts = macro_points(&coarse);
    let w = 1.0 / pts.len() as f64;
    let per_point: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|x| -> Result<Vec<f64>> {
            let c = solve_cell(&setup, Route::Transformed, *x, problem.micro.theta(*x))?;
            let (_, grad) = hom.eval(*x);
            let fields: [&[f64]; 2] = [&c.correctors[0], &c.correctors[1]];
            battery
                .iter()
                .map(|phi| {
                    norms::integrate_fields(&c.mesh, &fields, |p, _, g| {
                        let d = grad[0] * (1.0 + g[0][0]) + grad[1] * g[1][0];
                        d * phi.eval(*x, p.reference)
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut limit = vec![0.0; battery.len()];
    for row in &per_point {
        for (k, v) in row.iter().enumerate() {
            limit[k] += v * w;
        }
    }
    Ok(fine.iter().zip(&limit).map(|(a, b)| (a - b).abs()).collect())
}

/// Runs the convergence sweep for the problem's `l`.
pub fn sweep_epsilon(problem: &MicroProblem, eps: &[f64], macro_mesh: usize) -> Result<ConvergenceTable> {
    let mut errors = Vec::new();
    let mut pairings = Vec::new();
    for &e in eps {
        let p = MicroProblem {
            epsilon: e,
            ..problem.clone()
        };
        if problem.l == 2 {
            errors.push(l2_sweep_error(&p)?);
        } else {
            let (err, pair) = l0_sweep_error(&p, macro_mesh)?;
            errors.push(err);
            pairings.push(pair);
        }
    }
    let mut table = ConvergenceTable::from_errors(problem.l, eps, &errors);
    table.pairings = pairings;
    Ok(table)
}

/// Mean `|ũ_ε|` cell averages against `Θu₀` as a pairing with a macro test function.
pub fn weak_limit_pairing(problem: &MicroProblem, hom: &HomogenizedSolution, phi: &Expr) -> Result<(f64, f64)> {
    let sol = solve_substitute(problem)?;
    let avgs = cell_averages(problem, &sol.values, &sol.mesh)?;
    let eps = problem.epsilon;
    let set = cell_index_set(eps, &Rect::UNIT);
    let mut fine = 0.0;
    let mut limit = 0.0;
    for (c, k) in set.cells.iter().enumerate() {
        let center = [(k[0] as f64 + 0.5) * eps, (k[1] as f64 + 0.5) * eps];
        let ph = phi.eval(center, [0.0; 2]);
        fine += eps * eps * avgs[c] * ph;
        limit += eps * eps * problem.micro.theta(center) * hom.eval(center).0 * ph;
    }
    Ok((fine, limit))
}

/// Closed-form solution for constant `B = bI`, `Θ`, and `f = cos πx₁ cos πx₂`.
pub fn closed_form_single_mode(b: f64, theta: f64, x: [f64; 2]) -> f64 {
    let pi = std::f64::consts::PI;
    let f = (pi * x[0]).cos() * (pi * x[1]).cos();
    theta * f / (2.0 * pi * pi * b + theta)
}

/// Constant tensor field over a macro mesh.
pub fn constant_field(mesh_n: usize, b: Matrix2<f64>, theta: f64) -> EffectiveTensorField {
    let mesh = QuadMesh::unit_square(mesh_n);
    let points = macro_points(&mesh);
    let k = points.len();
    EffectiveTensorField {
        theta: vec![theta; k],
        tensors: vec![b; k],
        porosity: vec![theta; k],
        points,
        route: Route::Transformed,
        cached: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_mode() {
        let field = constant_field(64, Matrix2::identity() * 0.8, 0.9);
        let src = Expr::parse("cos(pi*x1)*cos(pi*x2)").unwrap();
        let sol = solve_homogenized(64, &field, &src, 1e-12).unwrap();
        let err = norms::l2_error(&sol.mesh, &sol.u0, |x| closed_form_single_mode(0.8, 0.9, x)).unwrap();
        let scale = norms::function_l2_norm(&sol.mesh, |x| closed_form_single_mode(0.8, 0.9, x)).unwrap();
        assert!(err / scale < 1e-3, "{}", err / scale);
    }

    #[test]
    fn constant_state() {
        let field = constant_field(16, Matrix2::identity(), 1.0);
        let sol = solve_homogenized(16, &field, &Expr::parse("1").unwrap(), 1e-12).unwrap();
        assert!(sol.u0.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn table_orders() {
        let t = ConvergenceTable::from_errors(2, &[0.25, 0.125, 0.0625, 0.03125], &[0.8, 0.4, 0.2, 0.1]);
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows.iter().filter(|r| r.order.is_some()).count(), 3);
        assert!((t.mean_order - 1.0).abs() < 1e-12);
        assert!(t.monotone);
    }
}
