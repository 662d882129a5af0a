//! Cell problems and effective tensors, on the fixed cell `Y*` with transformed
//! coefficients or directly on the vertex-mapped deformed cell `Y*_x`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_rhs, QuadPoint};
use crate::fem::{assemble, norms, solve_cg, CgOptions, CgReport, DofMap, PointCoefficients, QuadMesh};
use crate::geometry::{CellTransform, Microstructure, ReferenceCell};
use crate::micro::transformed_coefficient;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// `J₀Ψ₀⁻¹Â₀Ψ₀⁻ᵀ` on the reference cell.
    Transformed,
    /// `A₀` on the vertex-mapped deformed cell.
    Deformed,
}

/// Periodic perforated `n × n` cell mesh.
pub fn cell_mesh(cell: &ReferenceCell, n: usize) -> Result<QuadMesh> {
    QuadMesh::unit_square(n).perforate(cell, n)
}

/// The cell mesh with vertices moved by `ψ(Θ, ·)`. The outer ring is fixed, so
/// periodic identification is unaffected.
pub fn deformed_cell_mesh(transform: &CellTransform, theta: f64, n: usize) -> Result<QuadMesh> {
    transform.check_theta(theta)?;
    Ok(cell_mesh(&transform.cell, n)?.map_vertices(|v| transform.map_unchecked(theta, v)))
}

/// Everything a cell solve needs besides the macro point.
#[derive(Clone, Debug)]
pub struct CellSetup {
    pub micro: Microstructure,
    pub coefficient: Coefficient,
    /// Elements per cell side.
    pub n: usize,
    pub tol: f64,
}

impl CellSetup {
    pub fn transform(&self) -> &CellTransform {
        &self.micro.transform
    }

    pub fn mesh(&self, route: Route, theta: f64) -> Result<QuadMesh> {
        match route {
            Route::Transformed => {
                self.transform().check_theta_or_identity(theta)?;
                cell_mesh(&self.transform().cell, self.n)
            }
            Route::Deformed => {
                if self.transform().cell.has_hole() {
                    deformed_cell_mesh(self.transform(), theta, self.n)
                } else {
                    cell_mesh(&self.transform().cell, self.n)
                }
            }
        }
    }

    /// Diffusion coefficient and mean weight at a cell quadrature point.
    #[inline]
    pub fn point(&self, route: Route, x: [f64; 2], theta: f64, p: &QuadPoint) -> (Matrix2<f64>, f64) {
        match route {
            Route::Transformed => {
                let t = self.transform();
                let y = p.reference;
                let jac = t.jacobian_unchecked(theta, y);
                let a = self.coefficient.eval(x, t.map_unchecked(theta, y));
                (transformed_coefficient(&a, &jac), jac.det)
            }
            Route::Deformed => (self.coefficient.eval(x, p.physical), 1.0),
        }
    }
}

impl CellTransform {
    /// Like `check_theta` but also accepts the identity for unperforated cells.
    pub fn check_theta_or_identity(&self, theta: f64) -> Result<()> {
        if !self.cell.has_hole() {
            return Ok(());
        }
        self.check_theta(theta)
    }
}

#[derive(Clone, Debug)]
pub struct CellCorrectors {
    pub route: Route,
    pub x: [f64; 2],
    pub theta: f64,
    pub mesh: QuadMesh,
    /// `w_j` at every mesh vertex.
    pub correctors: [Vec<f64>; 2],
    /// `B_ij = ∫ D(e_j + ∇w_j)·e_i`.
    pub tensor: Matrix2<f64>,
    /// `E_ij = ∫ D(e_j + ∇w_j)·(e_i + ∇w_i)`.
    pub energy: Matrix2<f64>,
    /// `∫ J₀` (transformed) or mapped area (deformed).
    pub porosity: f64,
    /// Max over `j` of `‖K w_j − b_j‖ / ‖b_j‖` against the full periodic basis.
    pub residual: f64,
    pub solver: [CgReport; 2],
}

/// Solves both cell problems at macro point `x` with cell porosity `theta`.
pub fn solve_cell(setup: &CellSetup, route: Route, x: [f64; 2], theta: f64) -> Result<CellCorrectors> {
    let mesh = setup.mesh(route, theta)?;
    let dofs = DofMap::periodic(&mesh, true);
    let flux = |p: &QuadPoint, j: usize| -> (Matrix2<f64>, f64, Vector2<f64>) {
        let (d, w) = setup.point(route, x, theta, p);
        (d, w, -d.column(j).into_owned())
    };
    let sys = assemble(&mesh, &dofs, |p| {
        let (d, w, g) = flux(p, 0);
        Ok(PointCoefficients {
            diffusion: d,
            reaction: 0.0,
            load: 0.0,
            flux: g,
            weight: w,
        })
    })?;
    let rhs1 = assemble_rhs(&mesh, &dofs, |p| Ok((0.0, flux(p, 1).2)))?;
    let opts = CgOptions {
        tol: setup.tol,
        max_iter: 100_000,
        mean_zero: Some(sys.mean_weights.clone()),
        ..Default::default()
    };
    let rhs = [sys.rhs.clone(), rhs1];
    let mut correctors: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut reports = [CgReport {
        iterations: 0,
        residual: 0.0,
    }; 2];
    let mut residual = 0.0f64;
    for j in 0..2 {
        let (w, rep) = solve_cg(&sys.matrix, &rhs[j], &opts)?;
        let kw = sys.matrix.mul(&w);
        let bn = rhs[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        let rn = kw
            .iter()
            .zip(&rhs[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        residual = residual.max(if bn > 0.0 { rn / bn } else { rn });
        correctors[j] = dofs.expand(&w);
        reports[j] = rep;
    }
    let fields: [&[f64]; 2] = [&correctors[0], &correctors[1]];
    let mut tensor = Matrix2::zeros();
    let mut energy = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            tensor[(i, j)] = norms::integrate_fields(&mesh, &fields, |p, _, g| {
                let (d, _) = setup.point(route, x, theta, p);
                let v = d * (Vector2::ith(j, 1.0) + g[j]);
                v[i]
            })?;
            energy[(i, j)] = norms::integrate_fields(&mesh, &fields, |p, _, g| {
                let (d, _) = setup.point(route, x, theta, p);
                (d * (Vector2::ith(j, 1.0) + g[j])).dot(&(Vector2::ith(i, 1.0) + g[i]))
            })?;
        }
    }
    let porosity = match route {
        Route::Transformed => norms::integrate(&mesh, &correctors[0], |p, _, _| {
            setup.point(route, x, theta, p).1
        })?,
        Route::Deformed => mesh.active_area(),
    };
    Ok(CellCorrectors {
        route,
        x,
        theta,
        mesh,
        correctors,
        tensor,
        energy,
        porosity,
        residual,
        solver: reports,
    })
}

/// `(B, Θ)` at a macro point.
pub fn effective_tensor(setup: &CellSetup, route: Route, x: [f64; 2]) -> Result<(Matrix2<f64>, f64)> {
    let c = solve_cell(setup, route, x, setup.micro.theta(x))?;
    Ok((c.tensor, c.porosity))
}

/// `‖B̂ − B‖_F / ‖B‖_F`.
pub fn frobenius_gap(transformed: &Matrix2<f64>, deformed: &Matrix2<f64>) -> f64 {
    (transformed - deformed).norm() / deformed.norm()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub theta: f64,
    #[serde(rename = "B11")]
    pub b11: f64,
    #[serde(rename = "B12")]
    pub b12: f64,
    #[serde(rename = "B21")]
    pub b21: f64,
    #[serde(rename = "B22")]
    pub b22: f64,
    pub porosity: f64,
}

impl CacheEntry {
    fn new(theta: f64, b: &Matrix2<f64>, porosity: f64) -> Self {
        CacheEntry {
            theta,
            b11: b[(0, 0)],
            b12: b[(0, 1)],
            b21: b[(1, 0)],
            b22: b[(1, 1)],
            porosity,
        }
    }

    pub fn tensor(&self) -> Matrix2<f64> {
        Matrix2::new(self.b11, self.b12, self.b21, self.b22)
    }
}

const CACHE_VERSION: &str = "# homog2s tensor cache v1";

/// Effective tensors on a quantized porosity grid with linear interpolation.
#[derive(Debug)]
pub struct TensorCache {
    pub bin: f64,
    entries: RwLock<BTreeMap<i64, CacheEntry>>,
}

impl TensorCache {
    pub fn new(bin: f64) -> Self {
        TensorCache {
            bin,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.entries.read().unwrap().values().cloned().collect()
    }

    fn node(&self, key: i64, compute: &impl Fn(f64) -> Result<(Matrix2<f64>, f64)>) -> Result<CacheEntry> {
        if let Some(e) = self.entries.read().unwrap().get(&key) {
            return Ok(*e);
        }
        let theta = key as f64 * self.bin;
        let (b, p) = compute(theta)?;
        let entry = CacheEntry::new(theta, &b, p);
        Ok(*self.entries.write().unwrap().entry(key).or_insert(entry))
    }

    /// Interpolated `(B, Θ)`; missing bin nodes are computed with `compute`.
    pub fn get(&self, theta: f64, compute: impl Fn(f64) -> Result<(Matrix2<f64>, f64)>) -> Result<(Matrix2<f64>, f64)> {
        let s = theta / self.bin;
        let k0 = s.floor() as i64;
        let t = s - k0 as f64;
        let e0 = self.node(k0, &compute)?;
        if t < 1e-9 {
            return Ok((e0.tensor(), e0.porosity));
        }
        let e1 = self.node(k0 + 1, &compute)?;
        Ok((
            e0.tensor() * (1.0 - t) + e1.tensor() * t,
            e0.porosity * (1.0 - t) + e1.porosity * t,
        ))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(CACHE_VERSION);
        out.push('\n');
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in self.entries() {
            w.serialize(e)?;
        }
        if self.is_empty() {
            w.write_record(["theta", "B11", "B12", "B21", "B22", "porosity"])?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(&String::from_utf8_lossy(&body));
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_csv(path: &Path, bin: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.lines().next() != Some(CACHE_VERSION) {
            return Err(Error::Config(format!(
                "{} is not a version-1 tensor cache",
                path.display()
            )));
        }
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let cache = TensorCache::new(bin);
        {
            let mut map = cache.entries.write().unwrap();
            for rec in r.deserialize() {
                let e: CacheEntry = rec?;
                map.insert((e.theta / bin).round() as i64, e);
            }
        }
        Ok(cache)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveTensorField {
    pub points: Vec<[f64; 2]>,
    /// Porosity parameter `Θ(x)` fed to the cell map.
    pub theta: Vec<f64>,
    pub tensors: Vec<Matrix2<f64>>,
    /// Computed cell porosity (`∫J₀` or mapped area).
    pub porosity: Vec<f64>,
    pub route: Route,
    pub cached: bool,
}

/// Tensors at every macro point. The cache is used only when `A` does not
/// depend on `x`, since tensors then depend on `Θ(x)` alone.
pub fn tensor_field(
    setup: &CellSetup,
    route: Route,
    points: &[[f64; 2]],
    cache: Option<&TensorCache>,
) -> Result<EffectiveTensorField> {
    let theta: Vec<f64> = points.iter().map(|x| setup.micro.theta(*x)).collect();
    let use_cache = cache.filter(|_| !setup.coefficient.depends_on_x());
    let results: Result<Vec<(Matrix2<f64>, f64)>> = match use_cache {
        Some(c) => theta
            .par_iter()
            .map(|t| c.get(*t, |tq| Ok({
                let s = solve_cell(setup, route, [0.0, 0.0], tq)?;
                (s.tensor, s.porosity)
            })))
            .collect(),
        None => points
            .par_iter()
            .zip(&theta)
            .map(|(x, t)| {
                let s = solve_cell(setup, route, *x, *t)?;
                Ok((s.tensor, s.porosity))
            })
            .collect(),
    };
    let (tensors, porosity) = results?.into_iter().unzip();
    Ok(EffectiveTensorField {
        points: points.to_vec(),
        theta,
        tensors,
        porosity,
        route,
        cached: use_cache.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PorosityField;

    fn setup(cell: ReferenceCell, theta: f64, a: Coefficient, n: usize) -> CellSetup {
        let micro = if cell.has_hole() {
            Microstructure::new(
                CellTransform::new(cell, 0.2).unwrap(),
                PorosityField::constant(theta),
                5.0,
            )
            .unwrap()
        } else {
            Microstructure::identity(cell)
        };
        CellSetup {
            micro,
            coefficient: a,
            n,
            tol: 1e-12,
        }
    }

    #[test]
    fn no_hole_identity_gives_identity_tensor() {
        let s = setup(ReferenceCell::no_hole(), 1.0, Coefficient::identity(), 16);
        let c = solve_cell(&s, Route::Transformed, [0.5, 0.5], 1.0).unwrap();
        assert!((c.tensor - Matrix2::identity()).norm() < 1e-12);
        assert!((c.porosity - 1.0).abs() < 1e-14);
        assert!(c.correctors[0].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn routes_agree_at_reference_porosity() {
        let s = setup(ReferenceCell::default(), 15.0 / 16.0, Coefficient::identity(), 16);
        let a = solve_cell(&s, Route::Transformed, [0.0; 2], 15.0 / 16.0).unwrap();
        let b = solve_cell(&s, Route::Deformed, [0.0; 2], 15.0 / 16.0).unwrap();
        assert!((a.tensor - b.tensor).norm() < 1e-10);
        assert!((a.porosity - 15.0 / 16.0).abs() < 1e-13);
        assert!((a.tensor - a.energy).norm() < 1e-9);
        assert!(a.residual < 1e-9);
    }

    #[test]
    fn cache_round_trip() {
        let s = setup(ReferenceCell::default(), 0.9, Coefficient::identity(), 16);
        let cache = TensorCache::new(1e-3);
        let compute = |t: f64| {
            let c = solve_cell(&s, Route::Transformed, [0.0; 2], t)?;
            Ok((c.tensor, c.porosity))
        };
        let (b, p) = cache.get(0.9005, compute).unwrap();
        assert_eq!(cache.len(), 2);
        let direct = solve_cell(&s, Route::Transformed, [0.0; 2], 0.9005).unwrap();
        assert!((b - direct.tensor).norm() < 1e-3);
        assert!((p - direct.porosity).abs() < 1e-3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        cache.save_csv(&path).unwrap();
        let back = TensorCache::load_csv(&path, 1e-3).unwrap();
        assert_eq!(back.entries(), cache.entries());
    }
}
