use std::path::{Path, PathBuf};

use homog2s_core::pipeline::richardson3;
use homog2s_core::report::Comparison;
use homog2s_core::{run_pipeline, Error, Golden, RunConfig, VerificationReport};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn identity_pipeline_writes_report_and_plot_data() {
    let mut cfg = RunConfig::load(&config_path("identity.toml")).unwrap();
    cfg.output.dir = None;
    let report = run_pipeline(&cfg).unwrap();
    let failures: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
    assert!(report.all_pass(), "{failures:?}");
    assert_eq!(report.config_hash, cfg.hash());
    assert!(report.check("sweep:mean_order").is_some());

    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epsilon,error,order"));
    assert_eq!(lines.count(), cfg.discretization.epsilon.len());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("convergence.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], cfg.hash());

    let back = VerificationReport::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(back.compare(&report, 0.0).is_empty());
    let mut shifted = back.clone();
    let key = shifted.values.keys().next().unwrap().clone();
    *shifted.values.get_mut(&key).unwrap() *= 1.01;
    assert_eq!(shifted.compare(&report, 1e-3), vec![format!("value:{key}")]);
    assert!(shifted.compare(&report, 2e-2).is_empty());
}

#[test]
fn malformed_tiling_rejected_at_load() {
    let err = RunConfig::load(&config_path("malformed-tiling.toml")).unwrap_err();
    assert!(matches!(err, Error::Tiling(_)), "{err}");
}

#[test]
fn unknown_keys_rejected() {
    let text = std::fs::read_to_string(config_path("deformed.toml")).unwrap() + "\n[extra]\nkey = 1\n";
    assert!(RunConfig::from_toml(&text).is_err());
}

#[test]
fn bundled_golden_matches_config() {
    let cfg = RunConfig::load(&config_path("sinus-porosity-l0.toml")).unwrap();
    let golden = Golden::load(&cfg.golden_path().unwrap()).unwrap();
    assert_eq!(golden.config_hash, cfg.hash());
    assert!(golden.values.contains_key("u0_l2"));
    assert!(golden.values.keys().filter(|k| k.starts_with("B11@")).count() == cfg.theta_samples().len());
}

#[test]
fn golden_checks_relative_error() {
    let mut golden = Golden {
        config_hash: "h".into(),
        method: "test".into(),
        values: Default::default(),
    };
    golden.values.insert("a".into(), 2.0);
    let mut report = VerificationReport::new("h".into());
    report.values.insert("a".into(), 2.004);
    let checks = golden.checks(&report, 5e-3).unwrap();
    assert_eq!(checks.len(), 1);
    assert!(checks[0].pass && checks[0].comparison == Comparison::Le);
    assert!((checks[0].value - 2e-3).abs() < 1e-12);
    report.values.clear();
    assert!(golden.checks(&report, 5e-3).is_err());
}

#[test]
fn richardson_recovers_power_law_limit() {
    // q(h) = 0.87 + 0.3 h^{4/3}
    let q = |h: f64| 0.87 + 0.3 * h.powf(4.0 / 3.0);
    let x = richardson3(q(1.0 / 32.0), q(1.0 / 64.0), q(1.0 / 128.0));
    assert!((x - 0.87).abs() < 1e-12, "{x}");
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig::load(&config_path("sinus-porosity-l2.toml")).unwrap();
    let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back.hash(), cfg.hash());
}
