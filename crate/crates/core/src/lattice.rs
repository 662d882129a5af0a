//! ε-lattice arithmetic, grid functions and the unfolding operator.
//!
//! A [`GridFunction`] lives on a uniform element grid over a rectangle and keeps
//! both nodal values and the values at the 2×2 Gauss points of every element.
//! Unfolding copies these samples cell by cell, so the discrete integral and
//! norm identities hold up to rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fem::quadrature::{GAUSS_1D, GAUSS_POINTS_2D};

/// `([x]_{ε,Y}, {x}_{ε,Y})` with the fractional part in `[0,1)²`.
#[inline]
pub fn lattice_decompose(eps: f64, x: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let mut k = [0.0; 2];
    let mut y = [0.0; 2];
    for d in 0..2 {
        let s = x[d] / eps;
        let mut f = s.floor();
        // guard against s = n − tiny rounding to a fraction of exactly 1
        let mut frac = s - f;
        if frac >= 1.0 {
            f += 1.0;
            frac = 0.0;
        }
        k[d] = f * eps;
        y[d] = frac;
    }
    (k, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub const UNIT: Rect = Rect {
        lo: [0.0, 0.0],
        hi: [1.0, 1.0],
    };

    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Result<Rect> {
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::ParameterOutOfRange(format!(
                "empty rectangle {lo:?}..{hi:?}"
            )));
        }
        Ok(Rect { lo, hi })
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }
}

/// Cells `k + εY ⊂ Ω̄` stored by integer lattice index, and `|Λ_ε|`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellIndexSet {
    pub epsilon: f64,
    pub cells: Vec<[i64; 2]>,
    pub remainder_measure: f64,
}

impl CellIndexSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn index_range(eps: f64, lo: f64, hi: f64) -> (i64, i64) {
    let tol = 1e-9;
    let first = (lo / eps - tol).ceil() as i64;
    let end = (hi / eps + tol).floor() as i64;
    (first, end.max(first))
}

pub fn cell_index_set(eps: f64, domain: &Rect) -> CellIndexSet {
    let (i0, i1) = index_range(eps, domain.lo[0], domain.hi[0]);
    let (j0, j1) = index_range(eps, domain.lo[1], domain.hi[1]);
    let mut cells = Vec::with_capacity(((i1 - i0) * (j1 - j0)) as usize);
    for j in j0..j1 {
        for i in i0..i1 {
            cells.push([i, j]);
        }
    }
    let covered = cells.len() as f64 * eps * eps;
    CellIndexSet {
        epsilon: eps,
        cells,
        remainder_measure: (domain.area() - covered).max(0.0),
    }
}

/// A scalar field on a uniform element grid, sampled at nodes and at the 2×2
/// Gauss points of each element. Masked elements represent the zero extension.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub domain: Rect,
    pub resolution: usize,
    nx: usize,
    ny: usize,
    nodal: Vec<f64>,
    gauss: Vec<f64>,
    mask: Option<Vec<bool>>,
}

fn grid_dims(domain: &Rect, resolution: usize) -> Result<(usize, usize)> {
    let mut dims = [0usize; 2];
    for d in 0..2 {
        let s = (domain.hi[d] - domain.lo[d]) * resolution as f64;
        if (s - s.round()).abs() > 1e-9 || s.round() < 1.0 {
            return Err(Error::MisalignedGrid(format!(
                "domain extent {} is not a multiple of 1/{resolution}",
                domain.hi[d] - domain.lo[d]
            )));
        }
        dims[d] = s.round() as usize;
    }
    Ok((dims[0], dims[1]))
}

impl GridFunction {
    /// Samples `f` at nodes and Gauss points.
    pub fn from_fn(domain: Rect, resolution: usize, f: impl Fn([f64; 2]) -> f64 + Sync) -> Result<Self> {
        let (nx, ny) = grid_dims(&domain, resolution)?;
        let h = 1.0 / resolution as f64;
        let nodal = (0..(nx + 1) * (ny + 1))
            .map(|v| {
                let (i, j) = (v % (nx + 1), v / (nx + 1));
                f([domain.lo[0] + i as f64 * h, domain.lo[1] + j as f64 * h])
            })
            .collect();
        let gauss = (0..nx * ny)
            .into_par_iter()
            .flat_map_iter(|e| {
                let (i, j) = (e % nx, e / nx);
                let f = &f;
                GAUSS_POINTS_2D.iter().map(move |g| {
                    f([
                        domain.lo[0] + (i as f64 + g[0]) * h,
                        domain.lo[1] + (j as f64 + g[1]) * h,
                    ])
                })
            })
            .collect();
        Ok(GridFunction {
            domain,
            resolution,
            nx,
            ny,
            nodal,
            gauss,
            mask: None,
        })
    }

    /// Builds the Gauss samples by bilinear interpolation of nodal values.
    pub fn from_nodal(domain: Rect, resolution: usize, nodal: Vec<f64>) -> Result<Self> {
        let (nx, ny) = grid_dims(&domain, resolution)?;
        if nodal.len() != (nx + 1) * (ny + 1) {
            return Err(Error::ResolutionMismatch(format!(
                "expected {} nodal values, got {}",
                (nx + 1) * (ny + 1),
                nodal.len()
            )));
        }
        let mut gauss = Vec::with_capacity(4 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let v = |a: usize, b: usize| nodal[(j + b) * (nx + 1) + i + a];
                let (u00, u10, u11, u01) = (v(0, 0), v(1, 0), v(1, 1), v(0, 1));
                for g in GAUSS_POINTS_2D.iter() {
                    let (s, t) = (g[0], g[1]);
                    gauss.push(
                        u00 * (1.0 - s) * (1.0 - t)
                            + u10 * s * (1.0 - t)
                            + u11 * s * t
                            + u01 * (1.0 - s) * t,
                    );
                }
            }
        }
        Ok(GridFunction {
            domain,
            resolution,
            nx,
            ny,
            nodal,
            gauss,
            mask: None,
        })
    }

    /// Applies an active-element mask; inactive elements read as zero.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.nx * self.ny {
            return Err(Error::ResolutionMismatch(format!(
                "mask has {} entries for {} elements",
                mask.len(),
                self.nx * self.ny
            )));
        }
        for (e, active) in mask.iter().enumerate() {
            if !active {
                self.gauss[4 * e..4 * e + 4].fill(0.0);
            }
        }
        // nodes touching no active element carry the zero extension too
        let mut touched = vec![false; self.nodal.len()];
        for (e, active) in mask.iter().enumerate() {
            if *active {
                let (i, j) = (e % self.nx, e / self.nx);
                for (a, b) in [(0, 0), (1, 0), (1, 1), (0, 1)] {
                    touched[(j + b) * (self.nx + 1) + i + a] = true;
                }
            }
        }
        for (v, t) in self.nodal.iter_mut().zip(&touched) {
            if !t {
                *v = 0.0;
            }
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn nodal(&self) -> &[f64] {
        &self.nodal
    }

    pub fn gauss(&self) -> &[f64] {
        &self.gauss
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn element_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    /// Physical coordinates of Gauss point `q` of element `(i, j)`.
    #[inline]
    pub fn gauss_point(&self, i: usize, j: usize, q: usize) -> [f64; 2] {
        let h = self.element_size();
        let g = GAUSS_POINTS_2D[q];
        [
            self.domain.lo[0] + (i as f64 + g[0]) * h,
            self.domain.lo[1] + (j as f64 + g[1]) * h,
        ]
    }

    fn weight(&self) -> f64 {
        let h = self.element_size();
        h * h / 4.0
    }

    pub fn integral(&self) -> f64 {
        self.gauss.iter().sum::<f64>() * self.weight()
    }

    /// `‖u‖_{L^p}` for `p ∈ {1, 2, ∞}` (use `f64::INFINITY`).
    pub fn norm(&self, p: f64) -> Result<f64> {
        lp_norm(self.gauss.iter().map(|v| (self.weight(), *v)), p)
    }

    /// Pointwise combination of two functions on the same grid.
    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        if self.domain != other.domain || self.resolution != other.resolution {
            return Err(Error::ResolutionMismatch(
                "grid functions live on different grids".into(),
            ));
        }
        let mask = match (&self.mask, &other.mask) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| *x && *y).collect()),
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        Ok(GridFunction {
            domain: self.domain,
            resolution: self.resolution,
            nx: self.nx,
            ny: self.ny,
            nodal: self.nodal.iter().zip(&other.nodal).map(|(a, b)| f(*a, *b)).collect(),
            gauss: self.gauss.iter().zip(&other.gauss).map(|(a, b)| f(*a, *b)).collect(),
            mask,
        })
    }
}

fn lp_norm(samples: impl Iterator<Item = (f64, f64)>, p: f64) -> Result<f64> {
    if p == 1.0 {
        Ok(samples.map(|(w, v)| w * v.abs()).sum())
    } else if p == 2.0 {
        Ok(samples.map(|(w, v)| w * v * v).sum::<f64>().sqrt())
    } else if p == f64::INFINITY {
        Ok(samples.map(|(_, v)| v.abs()).fold(0.0, f64::max))
    } else {
        Err(Error::ParameterOutOfRange(format!(
            "p = {p}; only 1, 2 and infinity are supported"
        )))
    }
}

/// `𝒯_ε(u)` sampled on an `n × n` micro grid per cell of `I_ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldedFunction {
    pub epsilon: f64,
    /// Micro elements per cell side.
    pub micro_resolution: usize,
    /// Integer lattice indices of the cells (`k = ε · index`).
    pub cells: Vec<[i64; 2]>,
    /// Per-cell nodal samples, `(n+1)²` each, row-major in `y₂`.
    pub nodal: Vec<Vec<f64>>,
    /// Per-cell Gauss samples, `4n²` each, ordered like the grid function.
    pub gauss: Vec<Vec<f64>>,
    /// `(weight, value)` samples of `u` on `Λ_ε`, where `𝒯_ε(u)(x, y) = u(x)`.
    pub remainder: Vec<(f64, f64)>,
}

impl UnfoldedFunction {
    fn micro_weight(&self) -> f64 {
        let n = self.micro_resolution as f64;
        self.epsilon * self.epsilon / (4.0 * n * n)
    }

    fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let w = self.micro_weight();
        self.gauss
            .iter()
            .flat_map(move |c| c.iter().map(move |v| (w, *v)))
            .chain(self.remainder.iter().cloned())
    }

    /// `∫_Ω ∫_Y 𝒯_ε(u) dy dx`.
    pub fn integral(&self) -> f64 {
        self.samples().map(|(w, v)| w * v).sum()
    }

    pub fn norm(&self, p: f64) -> Result<f64> {
        lp_norm(self.samples(), p)
    }

    /// Micro Gauss point `q` of micro element `(a, b)` in `Y`.
    pub fn micro_gauss_point(&self, a: usize, b: usize, q: usize) -> [f64; 2] {
        let n = self.micro_resolution as f64;
        let g = GAUSS_POINTS_2D[q];
        [(a as f64 + g[0]) / n, (b as f64 + g[1]) / n]
    }
}

/// Micro elements per cell side for a grid of `resolution` elements per unit length.
pub fn micro_resolution(eps: f64, resolution: usize) -> Result<usize> {
    let s = eps * resolution as f64;
    if (s - s.round()).abs() > 1e-9 || s.round() < 1.0 {
        return Err(Error::MisalignedGrid(format!(
            "epsilon {eps} is not a multiple of the element size 1/{resolution}"
        )));
    }
    Ok(s.round() as usize)
}

pub fn unfold(eps: f64, u: &GridFunction) -> Result<UnfoldedFunction> {
    let n = micro_resolution(eps, u.resolution)?;
    for d in 0..2 {
        let s = u.domain.lo[d] * u.resolution as f64;
        if (s - s.round()).abs() > 1e-9 {
            return Err(Error::MisalignedGrid(format!(
                "domain corner {} is not on the grid",
                u.domain.lo[d]
            )));
        }
    }
    let set = cell_index_set(eps, &u.domain);
    let h = u.element_size();
    // element index of the lower-left element of lattice cell k
    let origin = |k: [i64; 2]| -> [usize; 2] {
        let mut o = [0usize; 2];
        for d in 0..2 {
            o[d] = ((k[d] as f64 * eps - u.domain.lo[d]) / h).round() as usize;
        }
        o
    };
    let (nx, _) = u.dims();
    let per_cell: Vec<(Vec<f64>, Vec<f64>)> = set
        .cells
        .par_iter()
        .map(|&k| {
            let o = origin(k);
            let mut nodal = Vec::with_capacity((n + 1) * (n + 1));
            for b in 0..=n {
                for a in 0..=n {
                    nodal.push(u.nodal[(o[1] + b) * (nx + 1) + o[0] + a]);
                }
            }
            let mut gauss = Vec::with_capacity(4 * n * n);
            for b in 0..n {
                for a in 0..n {
                    let e = (o[1] + b) * nx + o[0] + a;
                    gauss.extend_from_slice(&u.gauss[4 * e..4 * e + 4]);
                }
            }
            (nodal, gauss)
        })
        .collect();
    let mut covered = vec![false; u.gauss.len() / 4];
    for &k in &set.cells {
        let o = origin(k);
        for b in 0..n {
            for a in 0..n {
                covered[(o[1] + b) * nx + o[0] + a] = true;
            }
        }
    }
    let w = u.weight();
    let remainder = covered
        .iter()
        .enumerate()
        .filter(|(_, c)| !**c)
        .flat_map(|(e, _)| u.gauss[4 * e..4 * e + 4].iter().map(move |v| (w, *v)))
        .collect();
    let (nodal, gauss) = per_cell.into_iter().unzip();
    Ok(UnfoldedFunction {
        epsilon: eps,
        micro_resolution: n,
        cells: set.cells,
        nodal,
        gauss,
        remainder,
    })
}

/// `|‖𝒯_ε(u)‖_{L^p(Ω×Y)} − ‖u‖_{L^p(Ω)}| / ‖u‖` (absolute when `‖u‖ = 0`).
pub fn unfold_isometry_check(eps: f64, u: &GridFunction, p: f64) -> Result<f64> {
    let unfolded = unfold(eps, u)?;
    let a = unfolded.norm(p)?;
    let b = u.norm(p)?;
    let diff = (a - b).abs();
    Ok(if b > 0.0 { diff / b } else { diff })
}

/// Relative integral identity residual `|∫∫𝒯_ε(u) − ∫u| / max(|∫u|, ‖u‖₁)`.
pub fn unfold_integral_check(eps: f64, u: &GridFunction) -> Result<f64> {
    let unfolded = unfold(eps, u)?;
    let scale = u.integral().abs().max(u.norm(1.0)?);
    let diff = (unfolded.integral() - u.integral()).abs();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Quadrature approximation of `∫ u(x) φ(x, x/ε) dx`.
pub fn two_scale_pairing(eps: f64, u: &GridFunction, phi: &Expr) -> f64 {
    let (nx, ny) = u.dims();
    let w = u.weight();
    (0..nx * ny)
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e % nx, e / nx);
            (0..4)
                .map(|q| {
                    let v = u.gauss[4 * e + q];
                    if v == 0.0 {
                        return 0.0;
                    }
                    let x = u.gauss_point(i, j, q);
                    v * phi.eval(x, [x[0] / eps, x[1] / eps])
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>()
        * w
}

/// `‖𝒯_ε(u) − u₀‖_{L²(Ω×Y)}` using 2×2 Gauss points per cell in `x` and the
/// micro Gauss points in `y`. Requires exact tiling.
pub fn two_scale_error(
    eps: f64,
    u: &GridFunction,
    u0: impl Fn([f64; 2], [f64; 2]) -> f64 + Sync,
) -> Result<f64> {
    let unfolded = unfold(eps, u)?;
    if !unfolded.remainder.is_empty() {
        return Err(Error::MisalignedGrid(
            "two-scale error needs Λ_ε = ∅".into(),
        ));
    }
    let n = unfolded.micro_resolution;
    let index: std::collections::HashMap<[i64; 2], usize> = unfolded
        .cells
        .iter()
        .enumerate()
        .map(|(c, k)| (*k, c))
        .collect();
    two_scale_error_sampled(eps, n, &unfolded.cells, |k, x| {
        let limit = micro_gauss_points(n).map(|y| u0(x, y)).collect();
        Ok((unfolded.gauss[index[&k]].clone(), limit))
    })
}

/// Micro Gauss points of an `n × n` cell grid, in grid-function order.
pub fn micro_gauss_points(n: usize) -> impl Iterator<Item = [f64; 2]> {
    (0..n * n).flat_map(move |e| {
        let (a, b) = (e % n, e / n);
        GAUSS_POINTS_2D
            .iter()
            .map(move |g| [(a as f64 + g[0]) / n as f64, (b as f64 + g[1]) / n as f64])
    })
}

/// Lower-level two-scale error. For each cell `k` and each of its 2×2 Gauss
/// points `x`, `sample(k, x)` returns `(𝒯_ε(u), u₀(x, ·))` at the `4n²` micro
/// Gauss points.
pub fn two_scale_error_sampled(
    eps: f64,
    n: usize,
    cells: &[[i64; 2]],
    sample: impl Fn([i64; 2], [f64; 2]) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
) -> Result<f64> {
    let wx = eps * eps / 4.0;
    let wy = 1.0 / (4.0 * (n * n) as f64);
    let parts: Result<Vec<f64>> = cells
        .par_iter()
        .map(|&k| {
            let mut acc = 0.0;
            for gb in GAUSS_1D {
                for ga in GAUSS_1D {
                    let x = [(k[0] as f64 + ga) * eps, (k[1] as f64 + gb) * eps];
                    let (unfolded, limit) = sample(k, x)?;
                    if unfolded.len() != 4 * n * n || limit.len() != 4 * n * n {
                        return Err(Error::ResolutionMismatch(format!(
                            "expected {} micro samples, got {} and {}",
                            4 * n * n,
                            unfolded.len(),
                            limit.len()
                        )));
                    }
                    acc += unfolded
                        .iter()
                        .zip(&limit)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
            }
            Ok(acc * wx * wy)
        })
        .collect();
    Ok(parts?.iter().sum::<f64>().sqrt())
}

/// The fixed battery of twelve separable test functions `φ(x, y)`.
pub fn test_battery() -> Vec<Expr> {
    [
        "1",
        "sin(2*pi*y1)",
        "sin(2*pi*y2)",
        "cos(2*pi*y1)",
        "x1",
        "x1*sin(2*pi*y2)",
        "x2*cos(2*pi*y1)",
        "x2*sin(2*pi*y1)",
        "cos(pi*x1)",
        "cos(pi*x1)*sin(2*pi*y1)",
        "cos(pi*x2)*sin(2*pi*y2)",
        "cos(pi*x2)*cos(2*pi*y1)",
    ]
    .iter()
    .map(|s| Expr::parse(s).expect("battery expression"))
    .collect()
}
