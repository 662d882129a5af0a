//! Element quadrature rules on the reference square `[0,1]²`.
//!
//! Weights are relative to the unit square (they sum to one). Elements cut by a
//! cell diagonal are split into triangles and integrated with a 6-point
//! degree-4 rule so that no evaluation point sits on the kink.

use std::sync::LazyLock;

/// 2-point Gauss–Legendre abscissae on `[0,1]`.
pub const GAUSS_1D: [f64; 2] = [0.21132486540518713, 0.7886751345948129];

/// Tensor Gauss points, index `q = a + 2b` ↦ `(GAUSS_1D[a], GAUSS_1D[b])`.
pub const GAUSS_POINTS_2D: [[f64; 2]; 4] = [
    [GAUSS_1D[0], GAUSS_1D[0]],
    [GAUSS_1D[1], GAUSS_1D[0]],
    [GAUSS_1D[0], GAUSS_1D[1]],
    [GAUSS_1D[1], GAUSS_1D[1]],
];

/// Which cell diagonals pass through an element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kink {
    None,
    /// `ξ₁ = ξ₂`
    Main,
    /// `ξ₁ + ξ₂ = 1`
    Anti,
    Both,
}

pub type Rule = Vec<([f64; 2], f64)>;

// Degree-4 symmetric triangle rule: (a, b, weight) with barycentrics (a, b, b).
const TRI_RULE: [(f64, f64, f64); 2] = [
    (0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.816847572980459, 0.091576213509771, 0.109951743655322),
];

fn triangle(v: [[f64; 2]; 3], out: &mut Rule) {
    let area = 0.5
        * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
            .abs();
    for (a, b, w) in TRI_RULE {
        for perm in 0..3 {
            let mut bary = [b; 3];
            bary[perm] = a;
            let p = [
                bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
                bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
            ];
            out.push((p, w * area));
        }
    }
}

static GAUSS: LazyLock<Rule> =
    LazyLock::new(|| GAUSS_POINTS_2D.iter().map(|p| (*p, 0.25)).collect());

static MAIN: LazyLock<Rule> = LazyLock::new(|| {
    let mut r = Vec::new();
    triangle([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], &mut r);
    triangle([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]], &mut r);
    r
});

static ANTI: LazyLock<Rule> = LazyLock::new(|| {
    let mut r = Vec::new();
    triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &mut r);
    triangle([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], &mut r);
    r
});

static BOTH: LazyLock<Rule> = LazyLock::new(|| {
    let mut r = Vec::new();
    let c = [0.5, 0.5];
    triangle([[0.0, 0.0], [1.0, 0.0], c], &mut r);
    triangle([[1.0, 0.0], [1.0, 1.0], c], &mut r);
    triangle([[1.0, 1.0], [0.0, 1.0], c], &mut r);
    triangle([[0.0, 1.0], [0.0, 0.0], c], &mut r);
    r
});

pub fn rule(kink: Kink) -> &'static Rule {
    match kink {
        Kink::None => &GAUSS,
        Kink::Main => &MAIN,
        Kink::Anti => &ANTI,
        Kink::Both => &BOTH,
    }
}
