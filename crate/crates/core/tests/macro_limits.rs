use std::path::Path;

use nalgebra::Matrix2;

use homog2s_core::cell::Route;
use homog2s_core::fem::norms::{function_l2_norm, l2_error};
use homog2s_core::macro_limits::{
    closed_form_single_mode, constant_field, homogenize, l0_sweep_error, weak_limit_pairing, ConvergenceTable,
};
use homog2s_core::{solve_homogenized, Error, Expr, RunConfig};

fn config(name: &str) -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn constant_tensor_matches_closed_form_at_second_order() {
    let src = Expr::parse("cos(pi*x1)*cos(pi*x2)").unwrap();
    let exact = |x: [f64; 2]| closed_form_single_mode(0.7, 0.9, x);
    let errs: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&n| {
            let sol = solve_homogenized(n, &constant_field(n, Matrix2::identity() * 0.7, 0.9), &src, 1e-12).unwrap();
            l2_error(&sol.mesh, &sol.u0, exact).unwrap() / function_l2_norm(&sol.mesh, exact).unwrap()
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[0] / w[1] >= 3.5), "{errs:?}");
}

#[test]
fn homogenized_input_errors() {
    let field = constant_field(8, Matrix2::identity(), 1.0);
    let ysrc = Expr::parse("sin(2*pi*y1)").unwrap();
    assert!(matches!(solve_homogenized(8, &field, &ysrc, 1e-10), Err(Error::Config(_))));
    let one = Expr::parse("1").unwrap();
    assert!(matches!(solve_homogenized(16, &field, &one, 1e-10), Err(Error::ResolutionMismatch(_))));
}

#[test]
fn homogenized_solution_independent_of_route() {
    let p = config("sinus-porosity-l0.toml").problem(0.125, 256).unwrap();
    let t = homogenize(&p, 32, 16, Route::Transformed).unwrap();
    let d = homogenize(&p, 32, 16, Route::Deformed).unwrap();
    let diff: Vec<f64> = t.u0.iter().zip(&d.u0).map(|(a, b)| a - b).collect();
    let rel = homog2s_core::fem::norms::l2_norm(&t.mesh, &diff).unwrap() / t.l2().unwrap();
    assert!(rel < 1e-2, "{rel}");
}

#[test]
fn unperforated_y_independent_coefficient_error_first_order() {
    let mut cfg = config("identity.toml");
    cfg.problem.a11 = Expr::parse("1.5").unwrap();
    let errs: Vec<(f64, f64)> = [0.25, 0.125]
        .iter()
        .map(|&eps| {
            let p = cfg.problem(eps, 128).unwrap();
            (eps, l0_sweep_error(&p, 32).unwrap().0)
        })
        .collect();
    assert!(errs.iter().all(|(eps, e)| e <= eps), "{errs:?}");
}

#[test]
fn weak_limit_pairing_gap_shrinks() {
    let cfg = config("sinus-porosity-l0.toml");
    let phi = Expr::parse("cos(pi*x1)").unwrap();
    let base = cfg.problem(0.25, 128).unwrap();
    let hom = homogenize(&base, 32, 32, Route::Transformed).unwrap();
    let gaps: Vec<f64> = [0.25, 0.125, 0.0625]
        .iter()
        .map(|&eps| {
            let (fine, limit) = weak_limit_pairing(&cfg.problem(eps, 256).unwrap(), &hom, &phi).unwrap();
            (fine - limit).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn convergence_table_flags_non_monotone() {
    let t = ConvergenceTable::from_errors(0, &[0.25, 0.125, 0.0625], &[0.1, 0.12, 0.03]);
    assert!(!t.monotone);
    assert!(t.rows[0].order.is_none());
}
