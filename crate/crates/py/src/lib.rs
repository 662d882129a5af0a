//! Python module `homog2s`.

use std::path::PathBuf;

use nalgebra::Matrix2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use homog2s_core::cell::frobenius_gap;
use homog2s_core::{
    run_pipeline, solve_cell, solve_fine_mapped, solve_substitute, CellSetup, CellTransform, Coefficient, Error,
    Expr, MicroProblem, PorosityField, ReferenceCell, Route, RunConfig,
};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Mat = [[f64; 2]; 2];

fn mat(m: &Matrix2<f64>) -> Mat {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn parse_route(s: &str) -> PyResult<Route> {
    match s {
        "transformed" => Ok(Route::Transformed),
        "deformed" => Ok(Route::Deformed),
        _ => Err(PyValueError::new_err(format!("unknown route `{s}`"))),
    }
}

/// Locally periodic microstructure with a porosity field.
#[pyclass(name = "Microstructure", module = "homog2s")]
#[derive(Clone)]
struct PyMicrostructure {
    inner: homog2s_core::Microstructure,
}

#[pymethods]
impl PyMicrostructure {
    #[staticmethod]
    #[pyo3(signature = (theta, hole_halfwidth = 0.125, blend_radius = 0.375, c_j = 0.2, bound = 5.0))]
    fn constant(theta: f64, hole_halfwidth: f64, blend_radius: f64, c_j: f64, bound: f64) -> PyResult<Self> {
        Self::build(PorosityField::constant(theta), hole_halfwidth, blend_radius, c_j, bound)
    }

    #[staticmethod]
    #[pyo3(signature = (mean, amplitude, frequency = (1.0, 1.0), hole_halfwidth = 0.125, blend_radius = 0.375, c_j = 0.2, bound = 5.0))]
    fn sinusoidal(
        mean: f64,
        amplitude: f64,
        frequency: (f64, f64),
        hole_halfwidth: f64,
        blend_radius: f64,
        c_j: f64,
        bound: f64,
    ) -> PyResult<Self> {
        let field = PorosityField::Sinusoidal {
            mean,
            amplitude,
            frequency: [frequency.0, frequency.1],
        };
        Self::build(field, hole_halfwidth, blend_radius, c_j, bound)
    }

    /// Unperforated cell with the identity transform.
    #[staticmethod]
    fn no_hole() -> Self {
        PyMicrostructure {
            inner: homog2s_core::Microstructure::identity(ReferenceCell::no_hole()),
        }
    }

    fn theta(&self, x: (f64, f64)) -> f64 {
        self.inner.theta([x.0, x.1])
    }

    /// `ψ(Θ, y)`.
    fn map(&self, theta: f64, y: (f64, f64)) -> PyResult<(f64, f64)> {
        let m = self.inner.transform.cell_map(theta, [y.0, y.1]).map_err(py_err)?;
        Ok((m[0], m[1]))
    }

    fn inverse(&self, theta: f64, y: (f64, f64)) -> PyResult<(f64, f64)> {
        let m = self.inner.transform.inverse(theta, [y.0, y.1]).map_err(py_err)?;
        Ok((m[0], m[1]))
    }

    /// `(Ψ, det Ψ)` at a cell point.
    fn jacobian(&self, theta: f64, y: (f64, f64)) -> PyResult<(Mat, f64)> {
        let j = self.inner.transform.cell_jacobian(theta, [y.0, y.1]).map_err(py_err)?;
        Ok((mat(&j.matrix), j.det))
    }

    fn is_identity(&self) -> bool {
        self.inner.is_identity()
    }

    fn __repr__(&self) -> String {
        format!("Microstructure({:?})", self.inner.porosity)
    }
}

impl PyMicrostructure {
    fn build(field: PorosityField, h: f64, r: f64, c_j: f64, bound: f64) -> PyResult<Self> {
        let cell = ReferenceCell::new(h, r).map_err(py_err)?;
        let transform = CellTransform::new(cell, c_j).map_err(py_err)?;
        let inner = homog2s_core::Microstructure::new(transform, field, bound).map_err(py_err)?;
        Ok(PyMicrostructure { inner })
    }
}

fn coefficient(a11: &str, a12: &str, a22: &str) -> PyResult<Coefficient> {
    Coefficient::parse(a11, a12, a22).map_err(py_err)
}

/// Effective tensor and porosity from one cell solve.
#[pyfunction]
#[pyo3(signature = (micro, theta, n = 32, route = "transformed", a11 = "1", a12 = "0", a22 = "1", x = (0.5, 0.5)))]
#[allow(clippy::too_many_arguments)]
fn cell_tensor(
    micro: &PyMicrostructure,
    theta: f64,
    n: usize,
    route: &str,
    a11: &str,
    a12: &str,
    a22: &str,
    x: (f64, f64),
) -> PyResult<(Mat, f64)> {
    let setup = CellSetup {
        micro: micro.inner.clone(),
        coefficient: coefficient(a11, a12, a22)?,
        n,
        tol: 1e-12,
    };
    let c = solve_cell(&setup, parse_route(route)?, [x.0, x.1], theta).map_err(py_err)?;
    Ok((mat(&c.tensor), c.porosity))
}

/// Relative Frobenius gap between the two routes.
#[pyfunction]
#[pyo3(signature = (micro, theta, n = 32, a11 = "1", a12 = "0", a22 = "1"))]
fn tensor_gap(micro: &PyMicrostructure, theta: f64, n: usize, a11: &str, a12: &str, a22: &str) -> PyResult<f64> {
    let setup = CellSetup {
        micro: micro.inner.clone(),
        coefficient: coefficient(a11, a12, a22)?,
        n,
        tol: 1e-12,
    };
    let t = solve_cell(&setup, Route::Transformed, [0.5, 0.5], theta).map_err(py_err)?;
    let d = solve_cell(&setup, Route::Deformed, [0.5, 0.5], theta).map_err(py_err)?;
    Ok(frobenius_gap(&t.tensor, &d.tensor))
}

/// Solves the substitute (or vertex-mapped fine) problem; returns
/// `(l2, grad_l2, estimate)`.
#[pyfunction]
#[pyo3(signature = (micro, epsilon, mesh, l = 0, source = "1", a11 = "1", a12 = "0", a22 = "1", fine = false))]
#[allow(clippy::too_many_arguments)]
fn solve(
    micro: &PyMicrostructure,
    epsilon: f64,
    mesh: usize,
    l: u32,
    source: &str,
    a11: &str,
    a12: &str,
    a22: &str,
    fine: bool,
) -> PyResult<(f64, f64, f64)> {
    let p = MicroProblem {
        l,
        coefficient: coefficient(a11, a12, a22)?,
        source: Expr::parse(source).map_err(py_err)?,
        epsilon,
        mesh,
        micro: micro.inner.clone(),
        solver_tol: 1e-10,
    };
    let s = if fine { solve_fine_mapped(&p) } else { solve_substitute(&p) }.map_err(py_err)?;
    Ok((s.l2, s.grad_l2, s.estimate))
}

/// Runs the verification pipeline for a TOML config; returns
/// `(all_pass, report_json)`.
#[pyfunction]
fn run(py: Python<'_>, config: PathBuf) -> PyResult<(bool, String)> {
    py.allow_threads(|| {
        let cfg = RunConfig::load(&config)?;
        let report = run_pipeline(&cfg)?;
        Ok((report.all_pass(), report.to_json()?))
    })
    .map_err(py_err)
}

/// Hash of a parsed config, as recorded in reports.
#[pyfunction]
fn config_hash(config: PathBuf) -> PyResult<String> {
    Ok(RunConfig::load(&config).map_err(py_err)?.hash())
}

#[pymodule]
fn homog2s(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMicrostructure>()?;
    m.add_function(wrap_pyfunction!(cell_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(tensor_gap, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    Ok(())
}
