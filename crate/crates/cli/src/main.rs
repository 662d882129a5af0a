use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use homog2s_core::cell::frobenius_gap;
use homog2s_core::lattice::{test_battery, unfold_integral_check, unfold_isometry_check, GridFunction, Rect};
use homog2s_core::macro_limits::{homogenize, solve_two_scale_point, sweep_epsilon, two_scale_rule_gap};
use homog2s_core::micro::verify_equivalence;
use homog2s_core::report::emit_plot_data;
use homog2s_core::{
    run_oracle, run_pipeline, solve_cell, solve_fine_mapped, solve_substitute, CellSetup, Error, Route, RunConfig,
    VerificationReport,
};

#[derive(Parser)]
#[command(name = "homog2s", version, about = "Two-scale homogenization on deformed perforated domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated ε values; `0.25` and `1/4` are both accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_eps)]
    eps: Vec<f64>,
    /// Fine mesh (elements per unit length), or cell mesh for `cell-tensor`.
    #[arg(long)]
    mesh: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the flux scaling exponent.
    #[arg(long)]
    l: Option<u32>,
    /// Output directory (defaults to the config's).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Unfolding identities for the oscillating test battery.
    Unfold(Common),
    /// Substitute problem on the periodic reference domain.
    SolveSubstitute(Common),
    /// Original problem on the vertex-mapped deformed mesh.
    SolveFine(Common),
    VerifyEquivalence(Common),
    /// Effective tensors by both routes.
    CellTensor {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        theta: Vec<f64>,
    },
    SolveHomogenized(Common),
    SolveTwoScale(Common),
    SweepEpsilon(Common),
    /// Full verification pipeline.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write golden reference values from overkill meshes instead.
        #[arg(long)]
        oracle: bool,
    },
}

fn parse_eps(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|e| format!("{e}"))?,
    };
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("epsilon {v} not in (0, 1]"))
    }
}

fn load(c: &Common) -> Result<RunConfig, Error> {
    if let Some(j) = c.jobs {
        // fails only if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let mut cfg = RunConfig::load(&c.config)?;
    if !c.eps.is_empty() {
        cfg.discretization.epsilon = c.eps.clone();
    }
    if let Some(l) = c.l {
        cfg.problem.l = l;
    }
    if let Some(m) = c.mesh {
        cfg.discretization.mesh = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &RunConfig) -> Option<PathBuf> {
    c.out.clone().or_else(|| cfg.output_dir())
}

fn unfold_cmd(c: &Common) -> Result<(Value, bool), Error> {
    let cfg = load(c)?;
    let mesh = cfg.discretization.mesh;
    let mut rows = Vec::new();
    let mut ok = true;
    for &eps in &cfg.discretization.epsilon {
        for phi in test_battery() {
            let u = GridFunction::from_fn(Rect::UNIT, mesh, |x| phi.eval(x, [x[0] / eps, x[1] / eps]))?;
            let integral = unfold_integral_check(eps, &u)?;
            let isometry = unfold_isometry_check(eps, &u, 2.0)?;
            ok &= integral <= 1e-12 && isometry <= 1e-12;
            rows.push(json!({"epsilon": eps, "phi": phi.to_string(), "integral": integral, "l2_isometry": isometry}));
        }
    }
    Ok((json!({ "mesh": mesh, "rows": rows }), ok))
}

fn solve_cmd(c: &Common, fine: bool) -> Result<(Value, bool), Error> {
    let cfg = load(c)?;
    let mut rows = Vec::new();
    for &eps in &cfg.discretization.epsilon {
        let p = cfg.problem(eps, cfg.discretization.mesh)?;
        let n = p.validate()?;
        let s = if fine { solve_fine_mapped(&p)? } else { solve_substitute(&p)? };
        rows.push(json!({
            "epsilon": eps, "per_cell": n, "l2": s.l2, "grad_l2": s.grad_l2,
            "estimate": s.estimate, "iterations": s.solver.iterations, "residual": s.solver.residual,
        }));
    }
    Ok((json!({ "l": cfg.problem.l, "mesh": cfg.discretization.mesh, "rows": rows }), true))
}

fn equivalence_cmd(c: &Common) -> Result<(Value, bool), Error> {
    let cfg = load(c)?;
    let meshes = match c.mesh {
        Some(m) => vec![m],
        None => cfg.discretization.equivalence_meshes.clone(),
    };
    let p = cfg.problem(cfg.discretization.epsilon[0], meshes[0])?;
    let identity = p.micro.is_identity();
    let rep = verify_equivalence(&p, &meshes)?;
    let tol = &cfg.tolerances;
    let ok = rep.rows.iter().all(|r| {
        let t = if identity {
            tol.exact
        } else if r.per_cell <= 16 {
            tol.equivalence_16
        } else {
            tol.equivalence_32
        };
        r.gap <= t
    });
    Ok((serde_json::to_value(&rep)?, ok))
}

fn cell_cmd(c: &Common, theta: &[f64]) -> Result<(Value, bool), Error> {
    // --mesh is the cell mesh here, not the fine mesh
    let cfg = load(&Common { mesh: None, ..c.clone() })?;
    let micro = cfg.microstructure()?;
    let thetas = if theta.is_empty() { cfg.theta_samples() } else { theta.to_vec() };
    let meshes = match c.mesh {
        Some(m) => vec![m],
        None => cfg.discretization.cell_meshes.clone(),
    };
    let tol = if micro.is_identity() { cfg.tolerances.exact } else { cfg.tolerances.tensor_gap };
    let mut rows = Vec::new();
    let mut ok = true;
    for &t in &thetas {
        for &n in &meshes {
            let setup = CellSetup {
                micro: micro.clone(),
                coefficient: cfg.coefficient(),
                n,
                tol: 1e-12,
            };
            let a = solve_cell(&setup, Route::Transformed, [0.5, 0.5], t)?;
            let b = solve_cell(&setup, Route::Deformed, [0.5, 0.5], t)?;
            let gap = frobenius_gap(&a.tensor, &b.tensor);
            ok &= n != meshes[0] || gap <= tol;
            rows.push(json!({
                "theta": t, "n": n,
                "transformed": [[a.tensor[(0, 0)], a.tensor[(0, 1)]], [a.tensor[(1, 0)], a.tensor[(1, 1)]]],
                "deformed": [[b.tensor[(0, 0)], b.tensor[(0, 1)]], [b.tensor[(1, 0)], b.tensor[(1, 1)]]],
                "porosity": a.porosity, "gap": gap,
            }));
        }
    }
    Ok((json!({ "rows": rows }), ok))
}

fn homogenized_cmd(c: &Common) -> Result<(Value, bool), Error> {
    let cfg = load(c)?;
    let d = &cfg.discretization;
    let n = *d.cell_meshes.last().unwrap_or(&32);
    let p = cfg.problem(d.epsilon[0], d.mesh)?;
    let t = homogenize(&p, n, d.macro_mesh, Route::Transformed)?;
    let b = homogenize(&p, n, d.macro_mesh, Route::Deformed)?;
    let diff: Vec<f64> = t.u0.iter().zip(&b.u0).map(|(x, y)| x - y).collect();
    let gap = homog2s_core::fem::norms::l2_norm(&t.mesh, &diff)? / t.l2()?.max(1e-300);
    let tol = if p.micro.is_identity() { cfg.tolerances.exact } else { cfg.tolerances.tensor_gap };
    Ok((
        json!({ "macro_mesh": d.macro_mesh, "cell_mesh": n, "u0_l2": t.l2()?, "route_gap": gap,
                "iterations": t.solver.iterations }),
        gap <= tol,
    ))
}

fn two_scale_cmd(c: &Common) -> Result<(Value, bool), Error> {
    let cfg = load(c)?;
    let d = &cfg.discretization;
    let micro = cfg.microstructure()?;
    let setup = CellSetup {
        micro: micro.clone(),
        coefficient: cfg.coefficient(),
        n: *d.cell_meshes.last().unwrap_or(&32),
        tol: 1e-12,
    };
    let tol = if micro.is_identity() { cfg.tolerances.exact } else { cfg.tolerances.two_scale_rule };
    let mut rows = Vec::new();
    let mut ok = true;
    for x in [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.6, 0.55]] {
        let t = solve_two_scale_point(&setup, &cfg.problem.source, Route::Transformed, x)?;
        let b = solve_two_scale_point(&setup, &cfg.problem.source, Route::Deformed, x)?;
        let gap = two_scale_rule_gap(&t, &b)?;
        ok &= gap <= tol;
        rows.push(json!({ "x": x, "theta": t.theta, "rule_gap": gap }));
    }
    Ok((json!({ "cell_mesh": setup.n, "rows": rows }), ok))
}

fn sweep_cmd(c: &Common) -> Result<(Value, bool), Error> {
    let cfg = load(c)?;
    let d = &cfg.discretization;
    let p = cfg.problem(d.epsilon[0], d.mesh)?;
    let table = sweep_epsilon(&p, &d.epsilon, d.macro_mesh)?;
    let ok = d.epsilon.len() < 2 || (table.monotone && table.mean_order >= cfg.tolerances.min_order);
    if let Some(dir) = out_dir(c, &cfg) {
        let mut r = VerificationReport::new(cfg.hash());
        r.sweep = Some(table.clone());
        emit_plot_data(&r, &dir)?;
    }
    Ok((serde_json::to_value(&table)?, ok))
}

fn run_cmd(c: &Common, oracle: bool) -> Result<(Value, bool), Error> {
    let cfg = load(c)?;
    if oracle {
        let golden = run_oracle(&cfg)?;
        let path = match (&c.out, cfg.golden_path()) {
            (Some(dir), _) => dir.join("golden.json"),
            (None, Some(p)) => p,
            (None, None) => return Err(Error::Config("no golden path configured; pass --out".into())),
        };
        golden.save(&path)?;
        eprintln!("wrote {}", path.display());
        return Ok((serde_json::to_value(&golden)?, true));
    }
    let report = run_pipeline(&cfg)?;
    for ch in &report.checks {
        eprintln!(
            "{} {:<8} {:<36} {:.4e} (tol {:.1e})",
            if ch.pass { "PASS" } else { "FAIL" },
            ch.stage,
            ch.name,
            ch.value,
            ch.tolerance
        );
    }
    if let Some(dir) = out_dir(c, &cfg) {
        report.write(&dir)?;
    }
    let ok = report.all_pass();
    Ok((serde_json::to_value(&report)?, ok))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Unfold(c) => unfold_cmd(c),
        Command::SolveSubstitute(c) => solve_cmd(c, false),
        Command::SolveFine(c) => solve_cmd(c, true),
        Command::VerifyEquivalence(c) => equivalence_cmd(c),
        Command::CellTensor { common, theta } => cell_cmd(common, theta),
        Command::SolveHomogenized(c) => homogenized_cmd(c),
        Command::SolveTwoScale(c) => two_scale_cmd(c),
        Command::SweepEpsilon(c) => sweep_cmd(c),
        Command::Run { common, oracle } => run_cmd(common, *oracle),
    };
    match result {
        Ok((value, ok)) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
