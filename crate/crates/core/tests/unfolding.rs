use std::f64::consts::PI;

use proptest::prelude::*;

use homog2s_core::lattice::{
    cell_index_set, two_scale_error, two_scale_pairing, unfold, unfold_integral_check, unfold_isometry_check,
    GridFunction, Rect,
};
use homog2s_core::Expr;

fn grid(domain: Rect, res: usize, f: impl Fn([f64; 2]) -> f64 + Sync) -> GridFunction {
    GridFunction::from_fn(domain, res, f).unwrap()
}

#[test]
fn index_set_counts_and_remainder() {
    let full = cell_index_set(0.125, &Rect::UNIT);
    assert_eq!(full.len(), 64);
    assert_eq!(full.remainder_measure, 0.0);
    let part = cell_index_set(0.125, &Rect::new([0.0, 0.0], [0.9, 0.9]).unwrap());
    assert_eq!(part.len(), 49);
    assert!((part.remainder_measure - (0.81 - 49.0 / 64.0)).abs() < 1e-12);
}

#[test]
fn oscillating_profile_two_scale_error_first_order() {
    // u_ε(x) = cos(πx₁)(1 + ½ sin(2πx₂/ε)) against u₀(x, y) = cos(πx₁)(1 + ½ sin(2πy₂))
    let mut errs = Vec::new();
    for m in [4, 8, 16, 32] {
        let eps = 1.0 / m as f64;
        let u = grid(Rect::UNIT, 256, |x| (PI * x[0]).cos() * (1.0 + 0.5 * (2.0 * PI * x[1] / eps).sin()));
        let e = two_scale_error(eps, &u, |x, y| (PI * x[0]).cos() * (1.0 + 0.5 * (2.0 * PI * y[1]).sin())).unwrap();
        errs.push((eps, e));
    }
    for w in errs.windows(2) {
        let order = (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln();
        assert!(order >= 0.9, "{errs:?}");
    }
}

#[test]
fn product_pairing_matches_closed_form() {
    // ∫ (1+x₁)(1 + ½ sin 2πx₁/ε) sin(2πx₁/ε) dx = 3/8 − ε/(2π) for 1/ε integer
    let phi = Expr::parse("sin(2*pi*y1)").unwrap();
    for m in [4, 8, 16] {
        let eps = 1.0 / m as f64;
        let u = grid(Rect::UNIT, 512, |x| (1.0 + x[0]) * (1.0 + 0.5 * (2.0 * PI * x[0] / eps).sin()));
        let exact = 0.375 - eps / (2.0 * PI);
        let got = two_scale_pairing(eps, &u, &phi);
        assert!((got - exact).abs() < 1e-5, "eps {eps}: {got} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn unfolding_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1u32..4) {
        let d = Rect::UNIT;
        let fu = move |x: [f64; 2]| (k as f64 * PI * x[0]).sin() * x[1];
        let fv = |x: [f64; 2]| x[0] * x[0] - x[1];
        let u = grid(d, 64, fu);
        let v = grid(d, 64, fv);
        let w = grid(d, 64, move |x| a * fu(x) + b * fv(x));
        let (tu, tv, tw) = (unfold(0.25, &u).unwrap(), unfold(0.25, &v).unwrap(), unfold(0.25, &w).unwrap());
        for c in 0..tw.gauss.len() {
            for q in 0..tw.gauss[c].len() {
                let lin = a * tu.gauss[c][q] + b * tv.gauss[c][q];
                prop_assert!((tw.gauss[c][q] - lin).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unfolding_is_multiplicative(k in 1u32..4) {
        let d = Rect::UNIT;
        let fu = move |x: [f64; 2]| (k as f64 * PI * x[0]).cos() + x[1];
        let fv = |x: [f64; 2]| 1.0 + x[0] * x[1];
        let u = grid(d, 64, fu);
        let v = grid(d, 64, fv);
        let uv = u.zip_with(&v, |p, q| p * q).unwrap();
        let (tu, tv, tuv) = (unfold(0.125, &u).unwrap(), unfold(0.125, &v).unwrap(), unfold(0.125, &uv).unwrap());
        for c in 0..tuv.gauss.len() {
            for q in 0..tuv.gauss[c].len() {
                prop_assert!((tuv.gauss[c][q] - tu.gauss[c][q] * tv.gauss[c][q]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isometry_and_integral_with_remainder(p in prop::sample::select(vec![1.0f64, 2.0, f64::INFINITY]), s in 0.5f64..2.0) {
        // 0.875 × 0.9375 with ε = 1/4 leaves a non-empty Λ_ε
        let d = Rect::new([0.0, 0.0], [0.875, 0.9375]).unwrap();
        let u = grid(d, 64, move |x| (s * x[0]).exp() - x[1]);
        prop_assert!(unfold_isometry_check(0.25, &u, p).unwrap() < 1e-12);
        prop_assert!(unfold_integral_check(0.25, &u).unwrap() < 1e-12);
    }
}
