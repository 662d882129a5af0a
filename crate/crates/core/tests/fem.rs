use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};

use homog2s_core::fem::norms::{h1_semi_error, l2_error};
use homog2s_core::fem::{
    assemble, solve_cg, CgOptions, DofMap, PointCoefficients, Preconditioner, QuadMesh,
};
use homog2s_core::geometry::ReferenceCell;

fn stiffness() -> PointCoefficients {
    PointCoefficients {
        diffusion: Matrix2::new(2.0, 0.3, 0.3, 1.0),
        ..Default::default()
    }
}

#[test]
fn neumann_stiffness_annihilates_constants() {
    let mesh = QuadMesh::unit_square(16);
    let dofs = DofMap::new(&mesh);
    let sys = assemble(&mesh, &dofs, |_| Ok(stiffness())).unwrap();
    assert_eq!(dofs.n_dofs(), 17 * 17);
    assert!(sys.matrix.row_sums().iter().all(|s| s.abs() < 1e-13));
    assert!(sys.matrix.asymmetry() < 1e-14);
}

#[test]
fn periodic_perforated_kernel_is_constants() {
    let mesh = QuadMesh::unit_square(32).perforate(&ReferenceCell::default(), 32).unwrap();
    let dofs = DofMap::periodic(&mesh, true);
    // 32² periodic vertices minus the 7² strictly inside the hole
    assert_eq!(dofs.n_dofs(), 32 * 32 - 7 * 7);
    let sys = assemble(&mesh, &dofs, |_| Ok(stiffness())).unwrap();
    assert!(sys.matrix.row_sums().iter().all(|s| s.abs() < 1e-13));
    // corrector for e₁ has zero weighted mean
    let load = assemble(&mesh, &dofs, |_| {
        Ok(PointCoefficients {
            flux: -(stiffness().diffusion * Vector2::new(1.0, 0.0)),
            ..stiffness()
        })
    })
    .unwrap();
    let opts = CgOptions {
        mean_zero: Some(sys.mean_weights.clone()),
        ..Default::default()
    };
    let (w, _) = solve_cg(&sys.matrix, &load.rhs, &opts).unwrap();
    let mean: f64 = w.iter().zip(&sys.mean_weights).map(|(a, b)| a * b).sum();
    assert!(mean.abs() < 1e-12, "{mean}");
    assert!(w.iter().any(|v| v.abs() > 1e-3));
}

fn manufactured(n: usize, pre: Preconditioner) -> (f64, f64, usize) {
    // −Δu + u = f with natural boundary conditions, u = cos πx₁ cos πx₂
    let exact = |x: [f64; 2]| (PI * x[0]).cos() * (PI * x[1]).cos();
    let grad = |x: [f64; 2]| {
        [
            -PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            -PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
        ]
    };
    let mesh = QuadMesh::unit_square(n);
    let dofs = DofMap::new(&mesh);
    let sys = assemble(&mesh, &dofs, |p| {
        Ok(PointCoefficients {
            reaction: 1.0,
            load: (2.0 * PI * PI + 1.0) * exact(p.physical),
            ..Default::default()
        })
    })
    .unwrap();
    let opts = CgOptions {
        preconditioner: pre,
        ..Default::default()
    };
    let (u, report) = solve_cg(&sys.matrix, &sys.rhs, &opts).unwrap();
    let u = dofs.expand(&u);
    (
        l2_error(&mesh, &u, exact).unwrap(),
        h1_semi_error(&mesh, &u, grad).unwrap(),
        report.iterations,
    )
}

#[test]
fn manufactured_solution_second_order() {
    let rows: Vec<_> = [8, 16, 32, 64].iter().map(|&n| manufactured(n, Preconditioner::Jacobi)).collect();
    for w in rows.windows(2) {
        assert!(w[0].0 / w[1].0 >= 3.6, "{rows:?}");
        assert!(w[1].1 < w[0].1, "{rows:?}");
    }
}

#[test]
fn unpreconditioned_cg_iteration_bound() {
    let (_, _, iters) = manufactured(64, Preconditioner::None);
    let n = 65.0f64 * 65.0;
    assert!((iters as f64) <= 5.0 * n.sqrt(), "{iters}");
}

#[test]
fn identity_system_one_iteration() {
    let a = homog2s_core::fem::CsrMatrix::identity(50);
    let b: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let (x, report) = solve_cg(&a, &b, &CgOptions::default()).unwrap();
    assert_eq!(report.iterations, 1);
    assert!(x.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-14));
}
