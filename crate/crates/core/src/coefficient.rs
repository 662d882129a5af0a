//! Symmetric coefficient fields `A(x, y)` and sources `f(x, y)`.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

/// `A(x, y) = [[a11, a12], [a12, a22]]`, `Y`-periodic in `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub a11: Expr,
    #[serde(default = "zero")]
    pub a12: Expr,
    pub a22: Expr,
}

fn zero() -> Expr {
    Expr::constant(0.0)
}

/// Sampled ellipticity data of a coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipticity {
    pub alpha: f64,
    pub max_norm: f64,
}

impl Coefficient {
    pub fn identity() -> Self {
        Coefficient {
            a11: Expr::constant(1.0),
            a12: Expr::constant(0.0),
            a22: Expr::constant(1.0),
        }
    }

    pub fn parse(a11: &str, a12: &str, a22: &str) -> Result<Self> {
        Ok(Coefficient {
            a11: Expr::parse(a11)?,
            a12: Expr::parse(a12)?,
            a22: Expr::parse(a22)?,
        })
    }

    #[inline]
    pub fn eval(&self, x: [f64; 2], y: [f64; 2]) -> Matrix2<f64> {
        let off = self.a12.eval(x, y);
        Matrix2::new(self.a11.eval(x, y), off, off, self.a22.eval(x, y))
    }

    pub fn depends_on_x(&self) -> bool {
        self.a11.depends_on_x() || self.a12.depends_on_x() || self.a22.depends_on_x()
    }

    pub fn depends_on_y(&self) -> bool {
        self.a11.depends_on_y() || self.a12.depends_on_y() || self.a22.depends_on_y()
    }

    /// Minimum eigenvalue and maximum spectral norm over an `n⁴` sample of `Ω × Y`.
    pub fn ellipticity(&self, n: usize) -> Result<Ellipticity> {
        let mut out = Ellipticity {
            alpha: f64::INFINITY,
            max_norm: 0.0,
        };
        let xs: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let ys: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let x_grid: &[f64] = if self.depends_on_x() { &xs } else { &xs[..1] };
        let y_grid: &[f64] = if self.depends_on_y() { &ys } else { &ys[..1] };
        for &x1 in x_grid {
            for &x2 in x_grid {
                for &y1 in y_grid {
                    for &y2 in y_grid {
                        let a = self.eval([x1, x2], [y1, y2]);
                        if !a.iter().all(|v| v.is_finite()) {
                            return Err(Error::NonFiniteCoefficient([x1, x2]));
                        }
                        let e = a.symmetric_eigenvalues();
                        out.alpha = out.alpha.min(e[0].min(e[1]));
                        out.max_norm = out.max_norm.max(e[0].abs().max(e[1].abs()));
                    }
                }
            }
        }
        if out.alpha <= 0.0 {
            return Err(Error::CoercivityViolation {
                found: out.alpha,
                required: 0.0,
            });
        }
        Ok(out)
    }
}

/// Smallest eigenvalue of a symmetric 2×2 matrix (symmetrized first).
#[inline]
pub fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mean - rad
}
