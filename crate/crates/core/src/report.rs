//! Verification reports, plot data and golden-value comparison.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macro_limits::ConvergenceTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    /// `value ≤ tolerance`
    Le,
    /// `value ≥ tolerance`
    Ge,
    /// `value` is 1 for pass, 0 for fail; tolerance unused.
    Flag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub stage: String,
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl Check {
    pub fn le(stage: &str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            stage: stage.into(),
            value,
            tolerance,
            comparison: Comparison::Le,
            pass: value <= tolerance,
        }
    }

    pub fn ge(stage: &str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            stage: stage.into(),
            value,
            tolerance,
            comparison: Comparison::Ge,
            pass: value >= tolerance,
        }
    }

    pub fn flag(stage: &str, name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            stage: stage.into(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            comparison: Comparison::Flag,
            pass: ok,
        }
    }
}

/// Build stamp. Contains nothing that varies between runs of the same binary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub profile: String,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            profile: if cfg!(debug_assertions) { "debug" } else { "release" }.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config_hash: String,
    pub environment: Environment,
    pub checks: Vec<Check>,
    /// Named scalar results, also used for golden comparison.
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub sweep: Option<ConvergenceTable>,
}

impl VerificationReport {
    pub fn new(config_hash: String) -> Self {
        VerificationReport {
            config_hash,
            environment: Environment::current(),
            checks: Vec::new(),
            values: BTreeMap::new(),
            sweep: None,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Field-by-field comparison with a relative tolerance on numbers.
    /// Returns the names of mismatching entries.
    pub fn compare(&self, other: &VerificationReport, rel_tol: f64) -> Vec<String> {
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs()) || a == b;
        let mut out = Vec::new();
        if self.config_hash != other.config_hash {
            out.push("config_hash".into());
        }
        if self.checks.len() != other.checks.len() {
            out.push("checks".into());
        }
        for (a, b) in self.checks.iter().zip(&other.checks) {
            if a.name != b.name || a.pass != b.pass || !close(a.value, b.value) {
                out.push(format!("check:{}", a.name));
            }
        }
        for (k, v) in &self.values {
            match other.values.get(k) {
                Some(w) if close(*v, *w) => {}
                _ => out.push(format!("value:{k}")),
            }
        }
        for k in other.values.keys() {
            if !self.values.contains_key(k) {
                out.push(format!("value:{k}"));
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        emit_plot_data(self, dir)
    }
}

#[derive(Serialize)]
struct PlotRow {
    epsilon: f64,
    error: f64,
    order: Option<f64>,
}

/// Writes `convergence.csv` (`epsilon,error,order`) and `convergence.json`.
pub fn emit_plot_data(report: &VerificationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<PlotRow> = report
        .sweep
        .iter()
        .flat_map(|t| &t.rows)
        .map(|r| PlotRow {
            epsilon: r.epsilon,
            error: r.error,
            order: r.order,
        })
        .collect();
    write_plot_csv(&rows, &dir.join("convergence.csv"))?;
    let json = serde_json::json!({
        "config_hash": report.config_hash,
        "rows": rows,
    });
    std::fs::write(dir.join("convergence.json"), serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

fn write_plot_csv(rows: &[PlotRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["epsilon", "error", "order"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reference values with per-entry tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Golden {
    pub config_hash: String,
    pub method: String,
    pub values: BTreeMap<String, f64>,
}

impl Golden {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// One check per golden value present in the report.
    pub fn checks(&self, report: &VerificationReport, rel_tol: f64) -> Result<Vec<Check>> {
        let mut out = Vec::new();
        for (k, g) in &self.values {
            let v = report
                .values
                .get(k)
                .ok_or_else(|| Error::Config(format!("golden value `{k}` missing from report")))?;
            let rel = (v - g).abs() / g.abs().max(1e-300);
            out.push(Check::le("golden", format!("golden:{k}"), rel, rel_tol));
        }
        Ok(out)
    }
}
