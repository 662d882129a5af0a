//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{CellTransform, Microstructure, PorosityField, ReferenceCell};
use crate::lattice::micro_resolution;
use crate::micro::MicroProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Hole half-width `h*`; zero means no hole and the identity transform.
    #[serde(default = "default_hole")]
    pub hole_halfwidth: f64,
    #[serde(default = "default_blend")]
    pub blend_radius: f64,
    #[serde(default = "default_cj")]
    pub c_j: f64,
    /// Bound `C` on `‖Ψ‖`, `‖Ψ⁻¹‖`.
    #[serde(default = "default_bound")]
    pub bound: f64,
}

fn default_hole() -> f64 {
    0.125
}
fn default_blend() -> f64 {
    0.375
}
fn default_cj() -> f64 {
    0.2
}
fn default_bound() -> f64 {
    5.0
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            hole_halfwidth: default_hole(),
            blend_radius: default_blend(),
            c_j: default_cj(),
            bound: default_bound(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub l: u32,
    pub a11: Expr,
    #[serde(default = "zero")]
    pub a12: Expr,
    pub a22: Expr,
    pub source: Expr,
}

fn zero() -> Expr {
    Expr::constant(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub epsilon: Vec<f64>,
    /// Elements per unit length of the fine mesh used by the sweeps.
    pub mesh: usize,
    /// Fine meshes for the substitute/mapped equivalence check at `epsilon[0]`.
    #[serde(default = "default_equivalence")]
    pub equivalence_meshes: Vec<usize>,
    #[serde(default = "default_cell_meshes")]
    pub cell_meshes: Vec<usize>,
    #[serde(default = "default_macro")]
    pub macro_mesh: usize,
    /// Porosity values for the cell-level comparisons; defaults to the field range.
    #[serde(default)]
    pub theta_samples: Vec<f64>,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
}

fn default_equivalence() -> Vec<usize> {
    vec![64, 128]
}
fn default_cell_meshes() -> Vec<usize> {
    vec![32, 64]
}
fn default_macro() -> usize {
    64
}
fn default_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "t_eq16")]
    pub equivalence_16: f64,
    #[serde(default = "t_eq32")]
    pub equivalence_32: f64,
    #[serde(default = "t_tensor")]
    pub tensor_gap: f64,
    #[serde(default = "t_tensor")]
    pub corrector_rule: f64,
    #[serde(default = "t_tensor")]
    pub two_scale_rule: f64,
    #[serde(default = "t_order")]
    pub min_order: f64,
    #[serde(default = "t_uniform")]
    pub uniform_ratio: f64,
    #[serde(default = "t_golden")]
    pub golden: f64,
    /// Threshold for the exact checks of identity configurations.
    #[serde(default = "t_exact")]
    pub exact: f64,
}

fn t_eq16() -> f64 {
    2e-2
}
fn t_eq32() -> f64 {
    6e-3
}
fn t_tensor() -> f64 {
    2e-2
}
fn t_order() -> f64 {
    0.8
}
fn t_uniform() -> f64 {
    1.5
}
fn t_golden() -> f64 {
    5e-3
}
fn t_exact() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            equivalence_16: t_eq16(),
            equivalence_32: t_eq32(),
            tensor_gap: t_tensor(),
            corrector_rule: t_tensor(),
            two_scale_rule: t_tensor(),
            min_order: t_order(),
            uniform_ratio: t_uniform(),
            golden: t_golden(),
            exact: t_exact(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Golden values file, relative to the config file.
    #[serde(default)]
    pub golden: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: GeometryConfig,
    pub porosity: PorosityField,
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory of the config file, for relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.discretization;
        if self.problem.l != 0 && self.problem.l != 2 {
            return Err(Error::Config(format!("l = {} not in {{0, 2}}", self.problem.l)));
        }
        if d.epsilon.is_empty() {
            return Err(Error::Config("empty epsilon list".into()));
        }
        let cell = self.cell()?;
        let mut meshes = vec![d.mesh];
        meshes.extend(&d.equivalence_meshes);
        for &m in &meshes {
            for &e in &d.epsilon[..if m == d.mesh { d.epsilon.len() } else { 1 }] {
                let n = micro_resolution(e, m).map_err(|err| Error::Tiling(err.to_string()))?;
                cell.check_alignment(n)?;
            }
        }
        for &n in &d.cell_meshes {
            cell.check_alignment(n)?;
        }
        if d.macro_mesh == 0 {
            return Err(Error::Config("macro mesh must be positive".into()));
        }
        self.microstructure()?;
        self.coefficient().ellipticity(8)?;
        Ok(())
    }

    pub fn cell(&self) -> Result<ReferenceCell> {
        let g = &self.geometry;
        if g.hole_halfwidth == 0.0 {
            Ok(ReferenceCell::no_hole())
        } else {
            ReferenceCell::new(g.hole_halfwidth, g.blend_radius)
        }
    }

    pub fn microstructure(&self) -> Result<Microstructure> {
        let cell = self.cell()?;
        let transform = CellTransform::new(cell, self.geometry.c_j)?;
        if !cell.has_hole() {
            let (lo, hi) = self.porosity.range();
            if lo != 1.0 || hi != 1.0 {
                return Err(Error::Config("a cell without hole needs porosity 1".into()));
            }
            return Ok(Microstructure { transform, ..Microstructure::identity(cell) });
        }
        Microstructure::new(transform, self.porosity.clone(), self.geometry.bound)
    }

    pub fn coefficient(&self) -> Coefficient {
        Coefficient {
            a11: self.problem.a11.clone(),
            a12: self.problem.a12.clone(),
            a22: self.problem.a22.clone(),
        }
    }

    /// Fine problem at `epsilon` on the sweep mesh.
    pub fn problem(&self, epsilon: f64, mesh: usize) -> Result<MicroProblem> {
        Ok(MicroProblem {
            l: self.problem.l,
            coefficient: self.coefficient(),
            source: self.problem.source.clone(),
            epsilon,
            mesh,
            micro: self.microstructure()?,
            solver_tol: self.discretization.solver_tol,
        })
    }

    /// Porosity samples for the cell comparisons.
    pub fn theta_samples(&self) -> Vec<f64> {
        if !self.discretization.theta_samples.is_empty() {
            return self.discretization.theta_samples.clone();
        }
        let (lo, hi) = self.porosity.range();
        if hi - lo < 1e-12 {
            return vec![lo];
        }
        (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn golden_path(&self) -> Option<PathBuf> {
        self.output.golden.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.dir.as_ref().map(|p| self.base_dir.join(p))
    }
}
