use std::sync::OnceLock;

use proptest::prelude::*;

use homog2s_core::geometry::{
    halfwidth_for_porosity, CellTransform, EpsTransform, LimitTransform, Microstructure, PorosityField, ReferenceCell,
};

fn transform() -> CellTransform {
    static T: OnceLock<CellTransform> = OnceLock::new();
    T.get_or_init(|| CellTransform::new(ReferenceCell::default(), 0.2).unwrap()).clone()
}

fn sinus() -> Microstructure {
    static M: OnceLock<Microstructure> = OnceLock::new();
    M.get_or_init(build_sinus).clone()
}

fn build_sinus() -> Microstructure {
    Microstructure::new(
        transform(),
        PorosityField::Sinusoidal {
            mean: 0.92,
            amplitude: 0.03,
            frequency: [1.0, 1.0],
        },
        5.0,
    )
    .unwrap()
}

#[test]
fn displacement_consistency_within_modulus_and_decreasing() {
    let micro = sinus();
    let lip = micro.displacement_theta_lipschitz();
    let mut prev = f64::INFINITY;
    for eps in [0.25, 0.125, 0.0625, 0.03125] {
        let t = EpsTransform::new(eps, micro.clone()).unwrap();
        let d = t.displacement_consistency(96);
        let bound = micro.porosity.modulus(eps) * lip;
        assert!(d <= bound + 1e-12, "eps {eps}: {d} > {bound}");
        assert!(d < prev, "eps {eps}: {d} not below {prev}");
        prev = d;
    }
}

#[test]
fn jacobian_two_scale_gaps_decrease() {
    let micro = sinus();
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for eps in [0.25, 0.125, 0.0625, 0.03125] {
        let g = EpsTransform::new(eps, micro.clone()).unwrap().jacobian_two_scale_gap(16);
        assert!(g.0 < prev.0 && g.1 < prev.1, "eps {eps}: {g:?} vs {prev:?}");
        prev = g;
    }
}

#[test]
fn limit_jacobian_bounded_below_on_dense_sample() {
    // J₀ ≥ c_J on a 64×64 sample of Ω × Y*
    let limit = LimitTransform::new(sinus());
    let cell = ReferenceCell::default();
    let mut min = f64::INFINITY;
    for i in 0..64 {
        for j in 0..64 {
            let x = [(i as f64 + 0.5) / 64.0, (j as f64 + 0.25) / 64.0];
            let y = [(j as f64 + 0.3) / 64.0, (i as f64 + 0.7) / 64.0];
            if cell.in_hole(y) {
                continue;
            }
            min = min.min(limit.jacobian(x, y).det);
        }
    }
    assert!(min >= 0.2, "{min}");
}

#[test]
fn eps_jacobian_sampled_above_threshold() {
    let t = EpsTransform::new(0.125, sinus()).unwrap();
    let cell = ReferenceCell::default();
    for i in 0..200 {
        for j in 0..200 {
            let x = [(i as f64 + 0.41) / 200.0, (j as f64 + 0.13) / 200.0];
            let (_, y) = homog2s_core::lattice::lattice_decompose(0.125, x);
            if cell.in_hole(y) {
                continue;
            }
            assert!(t.jacobian(x).det >= 0.2);
        }
    }
}

#[test]
fn hermite_profile_value_at_quarter() {
    // ‖ψ(0.9, (0.5, 0.25)) − c‖∞ = ρ(0.25), evaluated independently from the
    // cubic Hermite data: ρ(h*) = h(Θ), ρ′(h*) = h(Θ)/h*, ρ(R) = R, ρ′(R) = 1.
    let theta = 0.9;
    let (hs, r_out) = (0.125, 0.375);
    let h = halfwidth_for_porosity(theta);
    let (p0, m0, p1, m1) = (h, h / hs, r_out, 1.0);
    let len = r_out - hs;
    let s = (0.25 - hs) / len;
    let rho = (2.0 * s.powi(3) - 3.0 * s * s + 1.0) * p0
        + (s.powi(3) - 2.0 * s * s + s) * len * m0
        + (-2.0 * s.powi(3) + 3.0 * s * s) * p1
        + (s.powi(3) - s * s) * len * m1;
    let out = transform().cell_map(theta, [0.5, 0.25]).unwrap();
    let dist = (out[0] - 0.5).abs().max((out[1] - 0.5).abs());
    assert!((dist - rho).abs() < 1e-13, "{dist} vs {rho}");
}

#[test]
fn jacobian_matches_central_differences() {
    let t = transform();
    let (theta, y, step) = (0.9, [0.5, 0.25], 1e-5);
    let j = t.cell_jacobian(theta, y).unwrap().matrix;
    for c in 0..2 {
        let mut yp = y;
        let mut ym = y;
        yp[c] += step;
        ym[c] -= step;
        let (fp, fm) = (t.map_unchecked(theta, yp), t.map_unchecked(theta, ym));
        for r in 0..2 {
            let fd = (fp[r] - fm[r]) / (2.0 * step);
            assert!((fd - j[(r, c)]).abs() <= 1e-6 * j.amax(), "({r},{c}) {fd} vs {}", j[(r, c)]);
        }
    }
}

#[test]
fn admissible_range_brackets_bundled_porosities() {
    let (lo, hi) = transform().admissible_range();
    assert!(lo > 1.0 - 4.0 * (0.9f64 * 0.375).powi(2) && lo < 0.89, "{lo}");
    // det Ψ = (h/h*)² at the hole edge caps Θ below 1 − 4(h*)²c_J
    assert!((hi - (1.0 - 4.0 * 0.125f64.powi(2) * 0.2)).abs() < 1e-9, "{hi}");
    assert!(transform().cell_map(lo - 1e-3, [0.1, 0.1]).is_err());
    assert!(transform().cell_map(hi + 1e-5, [0.1, 0.1]).is_err());
}

#[test]
fn profile_monotone_over_admissible_range() {
    let t = transform();
    let (lo, hi) = t.admissible_range();
    for k in 0..=40 {
        let theta = lo + (hi - lo) * k as f64 / 40.0;
        let p = t.profile(theta);
        for i in 0..=3000 {
            let r = 0.375 * i as f64 / 3000.0;
            assert!(p.derivative(r) >= 0.1, "theta {theta}, r {r}");
        }
    }
}

/// Maps `s ∈ [0, 1]` into the interior of the admissible porosity range.
fn admissible(s: f64) -> f64 {
    let (lo, hi) = transform().admissible_range();
    lo + 1e-6 + (hi - lo - 2e-6) * s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cell_map_round_trip(s in 0.0f64..1.0, y1 in 0.0f64..1.0, y2 in 0.0f64..1.0) {
        let (t, theta) = (transform(), admissible(s));
        let cell = ReferenceCell::default();
        prop_assume!(!cell.in_hole([y1, y2]));
        let z = t.map_unchecked(theta, [y1, y2]);
        prop_assert!((0.0..=1.0).contains(&z[0]) && (0.0..=1.0).contains(&z[1]));
        let back = t.inverse(theta, z).unwrap();
        prop_assert!((back[0] - y1).abs() < 1e-9 && (back[1] - y2).abs() < 1e-9);
    }

    #[test]
    fn jacobian_det_above_threshold(s in 0.0f64..1.0, y1 in 0.0f64..1.0, y2 in 0.0f64..1.0) {
        let (t, theta) = (transform(), admissible(s));
        prop_assume!(!ReferenceCell::default().in_hole([y1, y2]));
        prop_assert!(t.jacobian_unchecked(theta, [y1, y2]).det > 0.2);
    }

    #[test]
    fn jacobian_norms_bounded_on_validated_range(s in 0.0f64..1.0, y1 in 0.0f64..1.0, y2 in 0.0f64..1.0) {
        let micro = sinus();
        let (lo, hi) = micro.porosity.range();
        let theta = lo + (hi - lo) * s;
        prop_assume!(!ReferenceCell::default().in_hole([y1, y2]));
        let j = micro.transform.jacobian_unchecked(theta, [y1, y2]);
        prop_assert!(j.det > 0.2);
        prop_assert!(homog2s_core::geometry::spectral_norm(&j.matrix) <= 5.0);
        prop_assert!(homog2s_core::geometry::spectral_norm(&j.inverse()) <= 5.0);
    }

    #[test]
    fn eps_inverse_round_trip(x1 in 0.0f64..1.0, x2 in 0.0f64..1.0) {
        let t = EpsTransform::new(0.125, sinus()).unwrap();
        let (_, y) = homog2s_core::lattice::lattice_decompose(0.125, [x1, x2]);
        prop_assume!(!ReferenceCell::default().in_hole(y));
        let back = t.inverse(t.map([x1, x2])).unwrap();
        prop_assert!((back[0] - x1).abs() < 1e-10 && (back[1] - x2).abs() < 1e-10);
    }

    #[test]
    fn hole_area_matches_porosity(theta in 0.6f64..0.99) {
        let h = halfwidth_for_porosity(theta);
        prop_assert!(((2.0 * h).powi(2) - (1.0 - theta)).abs() < 1e-14);
    }
}
