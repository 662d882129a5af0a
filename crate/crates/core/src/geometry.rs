//! Perforated reference cell and the locally periodic transformations built on it.
//!
//! The unit cell `Y = [0,1]²` carries a square hole of half-width `h*` centred at
//! `(1/2, 1/2)`. For a porosity value `Θ` the cell map scales the ∞-norm radius
//! `r = ‖y − c‖∞` by a monotone C¹ profile `ρ_Θ` that is linear inside the
//! reference hole, a cubic Hermite blend on `[h*, R_out]` and the identity beyond
//! `R_out`. The deformed hole has half-width `h(Θ) = √(1−Θ)/2`, i.e. area `1 − Θ`.
//!
//! The map is piecewise C¹ with kinks on the two cell diagonals; Jacobians are
//! evaluated analytically on either side (points on a diagonal use the `y₁`
//! branch).

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::lattice_decompose;

pub const HOLE_CENTER: [f64; 2] = [0.5, 0.5];

/// Minimum slope of the radial profile accepted for an admissible porosity.
pub const MIN_PROFILE_SLOPE: f64 = 0.1;

/// Fraction of `R_out` the deformed hole half-width may reach.
pub const HOLE_MARGIN: f64 = 0.9;

const Y_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCell {
    pub hole_halfwidth: f64,
    pub blend_radius: f64,
}

impl Default for ReferenceCell {
    fn default() -> Self {
        ReferenceCell {
            hole_halfwidth: 0.125,
            blend_radius: 0.375,
        }
    }
}

impl ReferenceCell {
    pub fn new(hole_halfwidth: f64, blend_radius: f64) -> Result<Self> {
        if !(0.0..0.375).contains(&hole_halfwidth) {
            return Err(Error::ParameterOutOfRange(format!(
                "hole half-width {hole_halfwidth} not in [0, 3/8)"
            )));
        }
        if !(blend_radius > hole_halfwidth && blend_radius < 0.5) {
            return Err(Error::ParameterOutOfRange(format!(
                "blend radius {blend_radius} not in (h*, 1/2)"
            )));
        }
        Ok(ReferenceCell {
            hole_halfwidth,
            blend_radius,
        })
    }

    /// Unperforated cell; every cell map is the identity.
    pub fn no_hole() -> Self {
        ReferenceCell {
            hole_halfwidth: 0.0,
            blend_radius: 0.375,
        }
    }

    pub fn has_hole(&self) -> bool {
        self.hole_halfwidth > 0.0
    }

    /// Porosity at which the cell map is the identity, `1 − 4h*²`.
    pub fn reference_porosity(&self) -> f64 {
        1.0 - 4.0 * self.hole_halfwidth * self.hole_halfwidth
    }

    /// `|Y*|`.
    pub fn material_measure(&self) -> f64 {
        self.reference_porosity()
    }

    /// True if `y` lies in the open reference hole.
    pub fn in_hole(&self, y: [f64; 2]) -> bool {
        self.has_hole() && inf_radius(y) < self.hole_halfwidth
    }

    /// Whether micro element `(a, b)` of an `n × n` cell mesh lies in the hole.
    pub fn element_in_hole(&self, n: usize, a: usize, b: usize) -> bool {
        let h = 1.0 / n as f64;
        self.in_hole([(a as f64 + 0.5) * h, (b as f64 + 0.5) * h])
    }

    /// Checks that the hole and blend radius fall on nodes of an `n × n` cell mesh.
    pub fn check_alignment(&self, n: usize) -> Result<()> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::Tiling(format!(
                "cell resolution {n} must be a positive even number"
            )));
        }
        for (name, v) in [
            ("hole half-width", self.hole_halfwidth),
            ("blend radius", self.blend_radius),
        ] {
            if name == "blend radius" && !self.has_hole() {
                continue;
            }
            let s = v * n as f64;
            if (s - s.round()).abs() > 1e-9 {
                return Err(Error::Tiling(format!(
                    "{name} {v} is not a multiple of 1/{n}"
                )));
            }
        }
        Ok(())
    }
}

#[inline]
fn inf_radius(y: [f64; 2]) -> f64 {
    (y[0] - HOLE_CENTER[0])
        .abs()
        .max((y[1] - HOLE_CENTER[1]).abs())
}

/// Hole half-width producing porosity `Θ`.
pub fn halfwidth_for_porosity(theta: f64) -> f64 {
    (1.0 - theta).max(0.0).sqrt() / 2.0
}

/// Spatial porosity distribution `Θ(x)` over `Ω = (0,1)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PorosityField {
    Constant {
        value: f64,
    },
    /// `base + gradient · x`
    Affine { base: f64, gradient: [f64; 2] },
    /// `mean + amplitude · sin(2π frequency · x)`
    Sinusoidal {
        mean: f64,
        amplitude: f64,
        frequency: [f64; 2],
    },
}

impl PorosityField {
    pub fn constant(value: f64) -> Self {
        PorosityField::Constant { value }
    }

    #[inline]
    pub fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            PorosityField::Constant { value } => *value,
            PorosityField::Affine { base, gradient } => {
                base + gradient[0] * x[0] + gradient[1] * x[1]
            }
            PorosityField::Sinusoidal {
                mean,
                amplitude,
                frequency,
            } => {
                mean + amplitude
                    * (2.0 * std::f64::consts::PI * (frequency[0] * x[0] + frequency[1] * x[1]))
                        .sin()
            }
        }
    }

    /// Range of values over the closed unit square (conservative for the sinusoid).
    pub fn range(&self) -> (f64, f64) {
        match self {
            PorosityField::Constant { value } => (*value, *value),
            PorosityField::Affine { base, gradient } => {
                let corners = [
                    *base,
                    base + gradient[0],
                    base + gradient[1],
                    base + gradient[0] + gradient[1],
                ];
                let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            PorosityField::Sinusoidal {
                mean, amplitude, ..
            } => (mean - amplitude.abs(), mean + amplitude.abs()),
        }
    }

    /// Lipschitz constant with respect to the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            PorosityField::Constant { .. } => 0.0,
            PorosityField::Affine { gradient, .. } => gradient[0].hypot(gradient[1]),
            PorosityField::Sinusoidal {
                amplitude,
                frequency,
                ..
            } => 2.0 * std::f64::consts::PI * amplitude.abs() * frequency[0].hypot(frequency[1]),
        }
    }

    /// Modulus of continuity over an `ε`-cell (diameter `√2 ε`).
    pub fn modulus(&self, eps: f64) -> f64 {
        self.lipschitz() * std::f64::consts::SQRT_2 * eps
    }
}

/// The radial scaling `ρ_Θ` for a given target hole half-width.
#[derive(Clone, Copy, Debug)]
pub struct RadialProfile {
    h_ref: f64,
    h: f64,
    r_out: f64,
}

impl RadialProfile {
    pub fn new(cell: &ReferenceCell, theta: f64) -> Self {
        RadialProfile {
            h_ref: cell.hole_halfwidth,
            h: halfwidth_for_porosity(theta),
            r_out: cell.blend_radius,
        }
    }

    pub fn target_halfwidth(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if r <= self.h_ref {
            r * self.h / self.h_ref
        } else if r >= self.r_out {
            r
        } else {
            let len = self.r_out - self.h_ref;
            let t = (r - self.h_ref) / len;
            let (t2, t3) = (t * t, t * t * t);
            let m0 = self.h / self.h_ref;
            (2.0 * t3 - 3.0 * t2 + 1.0) * self.h
                + (t3 - 2.0 * t2 + t) * len * m0
                + (-2.0 * t3 + 3.0 * t2) * self.r_out
                + (t3 - t2) * len
        }
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        if r <= self.h_ref {
            self.h / self.h_ref
        } else if r >= self.r_out {
            1.0
        } else {
            let len = self.r_out - self.h_ref;
            let t = (r - self.h_ref) / len;
            let t2 = t * t;
            let m0 = self.h / self.h_ref;
            let secant = (self.r_out - self.h) / len;
            6.0 * (t - t2) * secant + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (3.0 * t2 - 2.0 * t)
        }
    }

    /// Solves `ρ(r) = s` by safeguarded Newton iteration.
    pub fn inverse(&self, s: f64) -> Result<f64> {
        if s <= self.h {
            return Ok(s * self.h_ref / self.h);
        }
        if s >= self.r_out {
            return Ok(s);
        }
        let (mut lo, mut hi) = (self.h_ref, self.r_out);
        let mut r = self.h_ref + (s - self.h) * (self.r_out - self.h_ref) / (self.r_out - self.h);
        for _ in 0..50 {
            let f = self.value(r) - s;
            if f.abs() <= 1e-15 * s.max(1.0) {
                return Ok(r);
            }
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let d = self.derivative(r);
            let mut next = r - f / d;
            if !(next > lo && next < hi) || d <= 0.0 {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() <= 1e-17 {
                return Ok(next);
            }
            r = next;
        }
        let residual = (self.value(r) - s).abs();
        if residual <= 1e-13 {
            return Ok(r);
        }
        Err(Error::NoConvergence {
            iterations: 50,
            residual,
        })
    }
}

/// Jacobian of a cell (or ε-) map at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellJacobian {
    pub matrix: Matrix2<f64>,
    pub det: f64,
}

impl CellJacobian {
    pub fn identity() -> Self {
        CellJacobian {
            matrix: Matrix2::identity(),
            det: 1.0,
        }
    }

    pub fn inverse(&self) -> Matrix2<f64> {
        let m = &self.matrix;
        Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / self.det
    }
}

/// `min_r ρ′(r) ≥ 0.1` over `[0, R]` and `min ρ′(r)ρ(r)/r > c_J` over the
/// material radii `[h*, R]`; `ρ′ρ/r` is the exact determinant of the radial map.
fn profile_admissible(cell: &ReferenceCell, c_j: f64, theta: f64) -> bool {
    let p = RadialProfile::new(cell, theta);
    let samples = 4096;
    let r_out = cell.blend_radius;
    let slope_ok = (0..=samples).all(|i| p.derivative(r_out * i as f64 / samples as f64) >= MIN_PROFILE_SLOPE);
    let det_ok = (0..=samples).all(|i| {
        let r = cell.hole_halfwidth + (r_out - cell.hole_halfwidth) * i as f64 / samples as f64;
        p.derivative(r) * p.value(r) / r > c_j
    });
    slope_ok && det_ok
}

/// Bisects between an admissible and an inadmissible porosity.
fn bisect_admissible(cell: &ReferenceCell, c_j: f64, mut good: f64, mut bad: f64) -> f64 {
    for _ in 0..60 {
        let mid = 0.5 * (good + bad);
        if profile_admissible(cell, c_j, mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

fn admissible_interval(cell: &ReferenceCell, c_j: f64) -> (f64, f64) {
    let hmax = HOLE_MARGIN * cell.blend_radius;
    let margin_lo = 1.0 - 4.0 * hmax * hmax;
    let reference = cell.reference_porosity();
    let lo = if profile_admissible(cell, c_j, margin_lo) {
        margin_lo
    } else {
        bisect_admissible(cell, c_j, reference, margin_lo)
    };
    let top = 1.0 - 1e-12;
    let hi = if profile_admissible(cell, c_j, top) {
        top
    } else {
        bisect_admissible(cell, c_j, reference, top)
    };
    (lo, hi)
}

/// The porosity-parametrized cell diffeomorphism `ψ(Θ, ·)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTransform {
    pub cell: ReferenceCell,
    pub c_j: f64,
    /// Admissible porosity interval, computed once in [`CellTransform::new`].
    range: (f64, f64),
}

impl CellTransform {
    pub fn new(cell: ReferenceCell, c_j: f64) -> Result<Self> {
        if !(c_j > 0.0 && c_j < 1.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "c_J = {c_j} not in (0, 1)"
            )));
        }
        let range = if cell.has_hole() {
            admissible_interval(&cell, c_j)
        } else {
            (1.0, 1.0)
        };
        Ok(CellTransform { cell, c_j, range })
    }

    /// Closed porosity interval allowed by the hole-size margin, the profile
    /// slope bound and `det Ψ > c_J`. Unperforated cells admit only `Θ = 1`.
    pub fn admissible_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn check_theta(&self, theta: f64) -> Result<()> {
        let (lo, hi) = self.admissible_range();
        let ok = if self.cell.has_hole() {
            theta >= lo && theta <= hi
        } else {
            (theta - 1.0).abs() < 1e-12
        };
        if ok && theta.is_finite() {
            Ok(())
        } else {
            Err(Error::ParameterOutOfRange(format!(
                "porosity {theta} outside admissible range [{lo:.6}, {hi:.6}]"
            )))
        }
    }

    fn check_y(y: [f64; 2]) -> Result<()> {
        if y.iter().all(|v| (-Y_TOL..=1.0 + Y_TOL).contains(v)) {
            Ok(())
        } else {
            Err(Error::ParameterOutOfRange(format!("{y:?} is not in Y")))
        }
    }

    pub fn profile(&self, theta: f64) -> RadialProfile {
        RadialProfile::new(&self.cell, theta)
    }

    /// `ψ(Θ, y)`; fails when `Θ` or `y` are out of range.
    pub fn cell_map(&self, theta: f64, y: [f64; 2]) -> Result<[f64; 2]> {
        self.check_theta(theta)?;
        Self::check_y(y)?;
        Ok(self.map_unchecked(theta, y))
    }

    #[inline]
    pub fn map_unchecked(&self, theta: f64, y: [f64; 2]) -> [f64; 2] {
        if !self.cell.has_hole() {
            return y;
        }
        let d = [y[0] - HOLE_CENTER[0], y[1] - HOLE_CENTER[1]];
        let r = d[0].abs().max(d[1].abs());
        if r == 0.0 || r >= self.cell.blend_radius {
            return y;
        }
        let g = self.profile(theta).value(r) / r;
        [HOLE_CENTER[0] + g * d[0], HOLE_CENTER[1] + g * d[1]]
    }

    /// `D_y ψ(Θ, y)` and its determinant; fails when the determinant drops to `c_J`.
    pub fn cell_jacobian(&self, theta: f64, y: [f64; 2]) -> Result<CellJacobian> {
        self.check_theta(theta)?;
        Self::check_y(y)?;
        let jac = self.jacobian_unchecked(theta, y);
        if jac.det <= self.c_j {
            return Err(Error::DegenerateJacobian {
                det: jac.det,
                threshold: self.c_j,
            });
        }
        Ok(jac)
    }

    #[inline]
    pub fn jacobian_unchecked(&self, theta: f64, y: [f64; 2]) -> CellJacobian {
        if !self.cell.has_hole() {
            return CellJacobian::identity();
        }
        let d = [y[0] - HOLE_CENTER[0], y[1] - HOLE_CENTER[1]];
        let r = d[0].abs().max(d[1].abs());
        if r >= self.cell.blend_radius {
            return CellJacobian::identity();
        }
        let profile = self.profile(theta);
        if r <= self.cell.hole_halfwidth {
            let s = profile.target_halfwidth() / self.cell.hole_halfwidth;
            return CellJacobian {
                matrix: Matrix2::new(s, 0.0, 0.0, s),
                det: s * s,
            };
        }
        let rho = profile.value(r);
        let drho = profile.derivative(r);
        let g = rho / r;
        let dg = (drho * r - rho) / (r * r);
        let matrix = if d[0].abs() >= d[1].abs() {
            let s = d[0].signum();
            Matrix2::new(drho, 0.0, dg * d[1] * s, g)
        } else {
            let s = d[1].signum();
            Matrix2::new(g, dg * d[0] * s, 0.0, drho)
        };
        CellJacobian {
            matrix,
            det: g * drho,
        }
    }

    /// `ψ(Θ, ·)⁻¹(y)` via the radial profile inverse.
    pub fn inverse(&self, theta: f64, y: [f64; 2]) -> Result<[f64; 2]> {
        self.check_theta(theta)?;
        Self::check_y(y)?;
        if !self.cell.has_hole() {
            return Ok(y);
        }
        let d = [y[0] - HOLE_CENTER[0], y[1] - HOLE_CENTER[1]];
        let s = d[0].abs().max(d[1].abs());
        if s == 0.0 || s >= self.cell.blend_radius {
            return Ok(y);
        }
        let r = self.profile(theta).inverse(s)?;
        let g = r / s;
        Ok([HOLE_CENTER[0] + g * d[0], HOLE_CENTER[1] + g * d[1]])
    }

    /// Displacement `ψ̌(Θ, y) = ψ(Θ, y) − y`.
    #[inline]
    pub fn displacement(&self, theta: f64, y: [f64; 2]) -> [f64; 2] {
        let m = self.map_unchecked(theta, y);
        [m[0] - y[0], m[1] - y[1]]
    }
}

/// Sampled extremes of the cell-map Jacobians over a porosity interval.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct JacobianBounds {
    pub min_det: f64,
    pub max_det: f64,
    pub max_norm: f64,
    pub max_inverse_norm: f64,
    pub min_profile_slope: f64,
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix2<f64>) -> f64 {
    let ata = m.transpose() * m;
    let e = ata.symmetric_eigenvalues();
    e[0].max(e[1]).max(0.0).sqrt()
}

/// The full geometry description: cell transform, porosity field and the
/// uniform Jacobian bound `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Microstructure {
    pub transform: CellTransform,
    pub porosity: PorosityField,
    pub bound: f64,
}

impl Microstructure {
    /// Validates the porosity range against the admissibility rules and the
    /// Jacobian bounds by dense sampling.
    pub fn new(transform: CellTransform, porosity: PorosityField, bound: f64) -> Result<Self> {
        let micro = Microstructure {
            transform,
            porosity,
            bound,
        };
        let (lo, hi) = micro.porosity.range();
        transform.check_theta(lo)?;
        transform.check_theta(hi)?;
        if transform.cell.has_hole() {
            let b = micro.sample_bounds(64, 256);
            if b.min_profile_slope < MIN_PROFILE_SLOPE {
                return Err(Error::ParameterOutOfRange(format!(
                    "radial profile slope {:.4} < {MIN_PROFILE_SLOPE} for porosity range [{lo}, {hi}]",
                    b.min_profile_slope
                )));
            }
            if b.min_det <= transform.c_j {
                return Err(Error::DegenerateJacobian {
                    det: b.min_det,
                    threshold: transform.c_j,
                });
            }
            if b.max_norm > bound || b.max_inverse_norm > bound || b.max_det > bound {
                return Err(Error::ParameterOutOfRange(format!(
                    "jacobian bound C = {bound} exceeded (|Ψ| {:.3}, |Ψ⁻¹| {:.3}, J {:.3})",
                    b.max_norm, b.max_inverse_norm, b.max_det
                )));
            }
        }
        Ok(micro)
    }

    /// Identity configuration: hole at its reference size, no deformation.
    pub fn identity(cell: ReferenceCell) -> Self {
        Microstructure {
            transform: CellTransform::new(cell, 0.2).expect("default c_J"),
            porosity: PorosityField::constant(cell.reference_porosity()),
            bound: 5.0,
        }
    }

    pub fn cell(&self) -> &ReferenceCell {
        &self.transform.cell
    }

    pub fn theta(&self, x: [f64; 2]) -> f64 {
        self.porosity.value(x)
    }

    /// True when every cell map is the identity.
    pub fn is_identity(&self) -> bool {
        let (lo, hi) = self.porosity.range();
        let r = self.cell().reference_porosity();
        !self.cell().has_hole() || (lo == r && hi == r)
    }

    /// Samples `ρ′`, `det`, `‖Ψ‖`, `‖Ψ⁻¹‖` over `n_theta` porosity values and an
    /// `n_y × n_y` grid of cell points (offset from the diagonals).
    pub fn sample_bounds(&self, n_theta: usize, n_y: usize) -> JacobianBounds {
        let (lo, hi) = self.porosity.range();
        let mut out = JacobianBounds {
            min_det: f64::INFINITY,
            max_det: 0.0,
            max_norm: 0.0,
            max_inverse_norm: 0.0,
            min_profile_slope: f64::INFINITY,
        };
        let cell = self.transform.cell;
        for it in 0..n_theta {
            let theta = if n_theta == 1 {
                lo
            } else {
                lo + (hi - lo) * it as f64 / (n_theta - 1) as f64
            };
            let profile = self.transform.profile(theta);
            for ir in 0..=4 * n_y {
                let r = cell.blend_radius * ir as f64 / (4 * n_y) as f64;
                out.min_profile_slope = out.min_profile_slope.min(profile.derivative(r));
            }
            for i in 0..n_y {
                for j in 0..n_y {
                    let y = [
                        (i as f64 + 0.37) / n_y as f64,
                        (j as f64 + 0.61) / n_y as f64,
                    ];
                    let jac = self.transform.jacobian_unchecked(theta, y);
                    out.min_det = out.min_det.min(jac.det);
                    out.max_det = out.max_det.max(jac.det);
                    out.max_norm = out.max_norm.max(spectral_norm(&jac.matrix));
                    out.max_inverse_norm = out.max_inverse_norm.max(spectral_norm(&jac.inverse()));
                }
            }
        }
        out
    }

    /// `max_Θ ‖ψ̌(Θ, ·)‖∞` over the porosity range.
    pub fn max_displacement(&self) -> f64 {
        let (lo, hi) = self.porosity.range();
        let cell = self.transform.cell;
        if !cell.has_hole() {
            return 0.0;
        }
        let mut best = 0.0f64;
        for it in 0..=32 {
            let theta = lo + (hi - lo) * it as f64 / 32.0;
            let p = self.transform.profile(theta);
            for ir in 0..=2048 {
                let r = cell.blend_radius * ir as f64 / 2048.0;
                // ∞-norm displacement along a ray with direction of unit ∞-norm.
                best = best.max((p.value(r) - r).abs());
            }
        }
        best
    }

    /// `max_Θ |∂_Θ ψ̌(Θ, ·)|∞`, by centred differences.
    pub fn displacement_theta_lipschitz(&self) -> f64 {
        let (lo, hi) = self.porosity.range();
        let cell = self.transform.cell;
        if !cell.has_hole() {
            return 0.0;
        }
        let (a_lo, _) = self.transform.admissible_range();
        let dt = 1e-6;
        let mut best = 0.0f64;
        for it in 0..=32 {
            let theta = (lo + (hi - lo) * it as f64 / 32.0).clamp(a_lo + dt, 1.0 - 2.0 * dt);
            let p_plus = self.transform.profile(theta + dt);
            let p_minus = self.transform.profile(theta - dt);
            for ir in 0..=1024 {
                let r = cell.blend_radius * ir as f64 / 1024.0;
                best = best.max(((p_plus.value(r) - p_minus.value(r)) / (2.0 * dt)).abs());
            }
        }
        best
    }
}

/// `ψ_ε(x) = [x]_{ε,Y} + ε ψ(Θ([x]_{ε,Y}), {x}_{ε,Y})` on `Ω = (0,1)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsTransform {
    pub epsilon: f64,
    cells: usize,
    pub micro: Microstructure,
}

/// Number of `ε`-cells per unit length, failing unless `1/ε` is an integer.
pub fn cells_per_unit(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Tiling(format!("epsilon {eps} not in (0, 1]")));
    }
    let m = 1.0 / eps;
    if (m - m.round()).abs() > 1e-9 * m {
        return Err(Error::Tiling(format!(
            "1/epsilon = {m} is not an integer"
        )));
    }
    Ok(m.round() as usize)
}

impl EpsTransform {
    pub fn new(epsilon: f64, micro: Microstructure) -> Result<Self> {
        let cells = cells_per_unit(epsilon)?;
        Ok(EpsTransform {
            epsilon: 1.0 / cells as f64,
            cells,
            micro,
        })
    }

    pub fn cells_per_unit(&self) -> usize {
        self.cells
    }

    /// Lattice corner of cell `(i, j)`.
    #[inline]
    pub fn cell_corner(&self, cell: [usize; 2]) -> [f64; 2] {
        [cell[0] as f64 * self.epsilon, cell[1] as f64 * self.epsilon]
    }

    /// Porosity assigned to cell `(i, j)` (evaluated at its lattice corner).
    #[inline]
    pub fn cell_theta(&self, cell: [usize; 2]) -> f64 {
        self.micro.theta(self.cell_corner(cell))
    }

    /// Maps the local point `y ∈ Y` of cell `(i, j)`; returns the deformed point
    /// and the Jacobian `Ψ_ε` there (the `ε` and `1/ε` factors cancel).
    #[inline]
    pub fn map_in_cell(&self, cell: [usize; 2], y: [f64; 2]) -> ([f64; 2], [f64; 2], CellJacobian) {
        let theta = self.cell_theta(cell);
        let k = self.cell_corner(cell);
        let ym = self.micro.transform.map_unchecked(theta, y);
        let jac = self.micro.transform.jacobian_unchecked(theta, y);
        (
            [k[0] + self.epsilon * ym[0], k[1] + self.epsilon * ym[1]],
            ym,
            jac,
        )
    }

    fn locate(&self, x: [f64; 2]) -> ([usize; 2], [f64; 2]) {
        let (k, y) = lattice_decompose(self.epsilon, x);
        let mut cell = [
            (k[0] / self.epsilon).round() as usize,
            (k[1] / self.epsilon).round() as usize,
        ];
        let mut y = y;
        // Points on the far boundary of Ω belong to the last cell.
        for d in 0..2 {
            if cell[d] >= self.cells {
                cell[d] = self.cells - 1;
                y[d] = 1.0;
            }
        }
        (cell, y)
    }

    pub fn map(&self, x: [f64; 2]) -> [f64; 2] {
        let (cell, y) = self.locate(x);
        self.map_in_cell(cell, y).0
    }

    pub fn jacobian(&self, x: [f64; 2]) -> CellJacobian {
        let (cell, y) = self.locate(x);
        self.map_in_cell(cell, y).2
    }

    /// `ψ̌_ε(x) = ψ_ε(x) − x`.
    pub fn displacement(&self, x: [f64; 2]) -> [f64; 2] {
        let m = self.map(x);
        [m[0] - x[0], m[1] - x[1]]
    }

    /// `ψ_ε⁻¹`; every cell is mapped into itself, so the inverse is local.
    pub fn inverse(&self, x_deformed: [f64; 2]) -> Result<[f64; 2]> {
        let (cell, y) = self.locate(x_deformed);
        let theta = self.cell_theta(cell);
        let yr = self.micro.transform.inverse(theta, y)?;
        let k = self.cell_corner(cell);
        Ok([k[0] + self.epsilon * yr[0], k[1] + self.epsilon * yr[1]])
    }

    /// `max_x ‖ε⁻¹ψ̌_ε(x) − ψ̌₀(x, {x}_{ε,Y})‖∞` over an `n × n` sample grid.
    pub fn displacement_consistency(&self, n: usize) -> f64 {
        let limit = LimitTransform::new(self.micro.clone());
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                let d = self.displacement(x);
                let (_, y) = lattice_decompose(self.epsilon, x);
                let d0 = limit.displacement(x, y);
                worst = worst
                    .max((d[0] / self.epsilon - d0[0]).abs())
                    .max((d[1] / self.epsilon - d0[1]).abs());
            }
        }
        worst
    }

    /// `(‖𝒯_ε(J̃_ε) − J̃₀‖, ‖𝒯_ε(Ψ̃_ε⁻¹) − Ψ̃₀⁻¹‖)` in `L²(Ω × Y)`, with 2×2 Gauss
    /// points per `ε`-cell in `x` and 2×2 Gauss points on an `n_y × n_y` grid in `y`.
    pub fn jacobian_two_scale_gap(&self, n_y: usize) -> (f64, f64) {
        use rayon::prelude::*;
        let gauss = crate::fem::quadrature::GAUSS_1D;
        let cell = self.micro.transform.cell;
        let transform = self.micro.transform;
        let m = self.cells;
        let eps = self.epsilon;
        let (sj, sp) = (0..m * m)
            .into_par_iter()
            .map(|c| {
                let ci = [c % m, c / m];
                let theta_k = self.cell_theta(ci);
                let k = self.cell_corner(ci);
                let mut acc = (0.0, 0.0);
                for gx in gauss.iter().flat_map(|a| gauss.iter().map(move |b| [*a, *b])) {
                    let x = [k[0] + eps * gx[0], k[1] + eps * gx[1]];
                    let theta_x = self.micro.theta(x);
                    let wx = eps * eps / 4.0;
                    for a in 0..n_y {
                        for b in 0..n_y {
                            if cell.element_in_hole(n_y, a, b) {
                                continue;
                            }
                            for gy in gauss.iter().flat_map(|p| gauss.iter().map(move |q| [*p, *q])) {
                                let y = [
                                    (a as f64 + gy[0]) / n_y as f64,
                                    (b as f64 + gy[1]) / n_y as f64,
                                ];
                                let wy = 1.0 / (4.0 * (n_y * n_y) as f64);
                                let je = transform.jacobian_unchecked(theta_k, y);
                                let j0 = transform.jacobian_unchecked(theta_x, y);
                                acc.0 += wx * wy * (je.det - j0.det).powi(2);
                                acc.1 += wx * wy * (je.inverse() - j0.inverse()).norm_squared();
                            }
                        }
                    }
                }
                acc
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        (sj.sqrt(), sp.sqrt())
    }
}

/// Limit transformation `ψ₀(x, y) = y + ψ̌(Θ(x), y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitTransform {
    pub micro: Microstructure,
}

impl LimitTransform {
    pub fn new(micro: Microstructure) -> Self {
        LimitTransform { micro }
    }

    pub fn map(&self, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
        self.micro.transform.map_unchecked(self.micro.theta(x), y)
    }

    pub fn jacobian(&self, x: [f64; 2], y: [f64; 2]) -> CellJacobian {
        self.micro
            .transform
            .jacobian_unchecked(self.micro.theta(x), y)
    }

    pub fn inverse(&self, x: [f64; 2], y: [f64; 2]) -> Result<[f64; 2]> {
        self.micro.transform.inverse(self.micro.theta(x), y)
    }

    /// `ψ̌₀(x, y)`, extended `Y`-periodically.
    pub fn displacement(&self, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
        let yp = [y[0].rem_euclid(1.0), y[1].rem_euclid(1.0)];
        self.micro.transform.displacement(self.micro.theta(x), yp)
    }

    /// `ψ̌₀⁻¹(x, y) = ψ₀⁻¹(x, y) − y`.
    pub fn inverse_displacement(&self, x: [f64; 2], y: [f64; 2]) -> Result<[f64; 2]> {
        let yi = self.inverse(x, y)?;
        Ok([yi[0] - y[0], yi[1] - y[1]])
    }

    /// Membership `y ∈ Y*_x`.
    pub fn in_deformed_material(&self, x: [f64; 2], y: [f64; 2]) -> Result<bool> {
        Ok(!self.micro.cell().in_hole(self.inverse(x, y)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transform() -> CellTransform {
        CellTransform::new(ReferenceCell::default(), 0.2).unwrap()
    }

    fn sinus_micro() -> Microstructure {
        Microstructure::new(
            transform(),
            PorosityField::Sinusoidal {
                mean: 0.9,
                amplitude: 0.04,
                frequency: [1.0, 1.0],
            },
            5.0,
        )
        .unwrap()
    }

    #[test]
    fn reference_porosity_is_identity() {
        let t = transform();
        assert_eq!(t.cell.reference_porosity(), 15.0 / 16.0);
        let y = t.cell_map(15.0 / 16.0, [0.30, 0.70]).unwrap();
        assert!((y[0] - 0.30).abs() < 1e-15 && (y[1] - 0.70).abs() < 1e-15);
        let j = t.cell_jacobian(15.0 / 16.0, [0.41, 0.57]).unwrap();
        assert!((j.matrix - Matrix2::identity()).norm() < 1e-14);
        assert!((j.det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn outside_blend_radius_is_fixed() {
        let t = transform();
        for theta in [0.8, 0.9, 0.97] {
            assert_eq!(t.cell_map(theta, [0.95, 0.50]).unwrap(), [0.95, 0.50]);
            let j = t.cell_jacobian(theta, [0.95, 0.50]).unwrap();
            assert_eq!(j.det, 1.0);
        }
    }

    #[test]
    fn hole_boundary_maps_to_deformed_hole() {
        let t = transform();
        let theta = 0.9;
        let h = halfwidth_for_porosity(theta);
        let y = t.cell_map(theta, [0.5, 0.375]).unwrap();
        assert!((inf_radius(y) - h).abs() < 1e-15);
        // deformed hole area is 1 − Θ
        assert!(((2.0 * h).powi(2) - (1.0 - theta)).abs() < 1e-15);
    }

    #[test]
    fn profile_matches_hermite_at_sample_point() {
        // Independent evaluation of the Hermite blend at r = 0.25 for Θ = 0.9.
        let h = (0.1f64).sqrt() / 2.0;
        let (h0, r1) = (0.125, 0.375);
        let len = r1 - h0;
        let t: f64 = (0.25 - h0) / len;
        let expected = (2.0 * t.powi(3) - 3.0 * t * t + 1.0) * h
            + (t.powi(3) - 2.0 * t * t + t) * len * (h / h0)
            + (-2.0 * t.powi(3) + 3.0 * t * t) * r1
            + (t.powi(3) - t * t) * len;
        let y = transform().cell_map(0.9, [0.5, 0.25]).unwrap();
        assert!((inf_radius(y) - expected).abs() < 1e-15);
        assert!((y[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn profile_monotone_by_dense_sampling() {
        let t = transform();
        for theta in [0.85, 0.9, 0.95, 0.98] {
            let p = t.profile(theta);
            let mut prev = p.value(0.0);
            for i in 1..=20000 {
                let r = 0.5 * i as f64 / 20000.0;
                let v = p.value(r);
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let t = transform();
        let step = 1e-5;
        for (theta, y) in [
            (0.9, [0.5, 0.25]),
            (0.9, [0.31, 0.6]),
            (0.86, [0.7, 0.22]),
            (0.95, [0.45, 0.72]),
            (0.9, [0.55, 0.52]),
        ] {
            let jac = t.cell_jacobian(theta, y).unwrap();
            for c in 0..2 {
                let mut yp = y;
                let mut ym = y;
                yp[c] += step;
                ym[c] -= step;
                let fp = t.cell_map(theta, yp).unwrap();
                let fm = t.cell_map(theta, ym).unwrap();
                for r in 0..2 {
                    let fd = (fp[r] - fm[r]) / (2.0 * step);
                    let an = jac.matrix[(r, c)];
                    assert!(
                        (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                        "theta {theta} y {y:?} ({r},{c}): fd {fd} vs {an}"
                    );
                }
            }
            let m = jac.matrix;
            assert!((m.determinant() - jac.det).abs() < 1e-13);
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        let t = transform();
        assert!(matches!(
            t.cell_map(0.3, [0.5, 0.5]),
            Err(Error::ParameterOutOfRange(_))
        ));
        assert!(t.cell_map(1.0, [0.5, 0.5]).is_err());
        assert!(t.cell_map(0.9, [1.2, 0.5]).is_err());
        // Large holes break monotonicity of the cubic blend.
        let bad = Microstructure::new(t, PorosityField::constant(0.6), 5.0);
        assert!(bad.is_err());
    }

    #[test]
    fn strict_jacobian_threshold_narrows_range() {
        let t = CellTransform::new(ReferenceCell::default(), 0.9).unwrap();
        let (lo, hi) = t.admissible_range();
        assert!(lo < 15.0 / 16.0 && hi > 15.0 / 16.0 && hi - lo < 0.05, "{lo} {hi}");
        assert!(matches!(
            t.cell_jacobian(0.97, [0.5, 0.45]),
            Err(Error::ParameterOutOfRange(_))
        ));
        assert!(t.cell_jacobian(hi, [0.5, 0.45]).unwrap().det > 0.9);
    }

    #[test]
    fn eps_transform_identity_configuration() {
        let micro = Microstructure::identity(ReferenceCell::default());
        let e = EpsTransform::new(0.25, micro).unwrap();
        let x = e.map([0.30, 0.70]);
        assert!((x[0] - 0.30).abs() < 1e-15 && (x[1] - 0.70).abs() < 1e-15);
        assert_eq!(e.inverse([0.3, 0.7]).unwrap(), [0.3, 0.7]);
    }

    #[test]
    fn eps_displacement_bound() {
        use rand::{Rng, SeedableRng};
        let micro = sinus_micro();
        let bound = micro.max_displacement();
        let e = EpsTransform::new(0.125, micro).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let d = e.displacement(x);
            let n = d[0].abs().max(d[1].abs()) / e.epsilon;
            assert!(n <= bound + 1e-12);
        }
    }

    #[test]
    fn eps_jacobian_above_threshold() {
        let micro = sinus_micro();
        let c_j = micro.transform.c_j;
        let e = EpsTransform::new(0.125, micro).unwrap();
        for i in 0..200 {
            for j in 0..200 {
                let x = [(i as f64 + 0.31) / 200.0, (j as f64 + 0.77) / 200.0];
                assert!(e.jacobian(x).det >= c_j);
            }
        }
    }

    #[test]
    fn eps_inverse_round_trip() {
        use rand::{Rng, SeedableRng};
        let e = EpsTransform::new(0.125, sinus_micro()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let back = e.inverse(e.map(x)).unwrap();
            assert!((back[0] - x[0]).abs() < 1e-10 && (back[1] - x[1]).abs() < 1e-10);
            let xd = e.map(x);
            let fwd = e.map(e.inverse(xd).unwrap());
            assert!((fwd[0] - xd[0]).abs() <= 1e-12 && (fwd[1] - xd[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn deformed_hole_boundary_inverts_to_reference_boundary() {
        let e = EpsTransform::new(0.25, sinus_micro()).unwrap();
        // point on the reference hole boundary in cell (1, 2)
        let x = [0.25 + 0.25 * 0.375, 0.5 + 0.25 * 0.55];
        let xd = e.map(x);
        let back = e.inverse(xd).unwrap();
        assert!((back[0] - x[0]).abs() < 1e-8 && (back[1] - x[1]).abs() < 1e-8);
    }

    #[test]
    fn limit_transform_properties() {
        let micro = sinus_micro();
        let c_j = micro.transform.c_j;
        let lim = LimitTransform::new(micro.clone());
        for i in 0..64 {
            for j in 0..64 {
                let x = [(i as f64 + 0.5) / 64.0, (j as f64 + 0.5) / 64.0];
                let y = [(j as f64 + 0.37) / 64.0, (i as f64 + 0.71) / 64.0];
                if micro.cell().in_hole(y) {
                    continue;
                }
                assert!(lim.jacobian(x, y).det >= c_j);
                // ψ̌₀(x, ψ₀⁻¹(x, y)) = −ψ̌₀⁻¹(x, y)
                let yi = lim.inverse(x, y).unwrap();
                let d = lim.displacement(x, yi);
                let di = lim.inverse_displacement(x, y).unwrap();
                assert!((d[0] + di[0]).abs() < 1e-10 && (d[1] + di[1]).abs() < 1e-10);
            }
        }
        let ident = LimitTransform::new(Microstructure::identity(ReferenceCell::default()));
        assert_eq!(ident.map([0.3, 0.3], [0.2, 0.45]), [0.2, 0.45]);
    }

    #[test]
    fn deformed_material_membership() {
        let lim = LimitTransform::new(sinus_micro());
        let x = [0.25, 0.0];
        let theta = lim.micro.theta(x);
        let h = halfwidth_for_porosity(theta);
        assert!(!lim.in_deformed_material(x, [0.5, 0.5 + 0.9 * h]).unwrap());
        assert!(lim.in_deformed_material(x, [0.5, 0.5 + 1.1 * h]).unwrap());
    }

    #[test]
    fn two_scale_diagnostics_decrease() {
        let micro = sinus_micro();
        let mut prev_disp = f64::INFINITY;
        let mut prev_gap = (f64::INFINITY, f64::INFINITY);
        let lip = micro.displacement_theta_lipschitz();
        for eps in [0.25, 0.125, 0.0625, 0.03125] {
            let e = EpsTransform::new(eps, micro.clone()).unwrap();
            let d = e.displacement_consistency(96);
            assert!(d <= micro.porosity.modulus(eps) * lip * (1.0 + 1e-6));
            assert!(d < prev_disp);
            prev_disp = d;
            let gap = e.jacobian_two_scale_gap(8);
            assert!(gap.0 < prev_gap.0 && gap.1 < prev_gap.1);
            prev_gap = gap;
        }
    }

    #[test]
    fn sampled_bounds_hold() {
        let b = sinus_micro().sample_bounds(16, 64);
        assert!(b.min_profile_slope >= MIN_PROFILE_SLOPE);
        assert!(b.min_det > 0.2);
        assert!(b.max_norm <= 5.0 && b.max_inverse_norm <= 5.0);
    }

    #[test]
    fn tiling_requires_integer_reciprocal() {
        assert!(cells_per_unit(0.25).is_ok());
        assert!(cells_per_unit(1.0 / 3.0).is_ok());
        assert!(cells_per_unit(0.3).is_err());
        assert!(ReferenceCell::default().check_alignment(8).is_ok());
        assert!(ReferenceCell::default().check_alignment(12).is_err());
    }
}
