//! Report schema. Every command emits one JSON document with a stable,
//! versioned shape; identical inputs and seeds produce byte-identical
//! documents.

use serde::Serialize;

pub const SCHEMA: &str = "1";

/// One verification check: either an exact identity (residual vs
/// tolerance) or a statistical test (statistic, p-value vs threshold).
#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pass: bool,
}

impl CheckEntry {
    pub fn exact(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            kind: "exact",
            residual: Some(residual),
            tolerance: Some(tolerance),
            statistic: None,
            p_value: None,
            threshold: None,
            detail: None,
            error: None,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            kind: "exact",
            residual: None,
            tolerance: None,
            statistic: None,
            p_value: None,
            threshold: None,
            detail: None,
            error: None,
            pass: ok,
        }
    }

    pub fn statistical(
        name: impl Into<String>,
        statistic: f64,
        p_value: f64,
        threshold: f64,
        also: bool,
    ) -> Self {
        Self {
            name: name.into(),
            kind: "statistical",
            residual: None,
            tolerance: None,
            statistic: Some(statistic),
            p_value: Some(p_value),
            threshold: Some(threshold),
            detail: None,
            error: None,
            pass: p_value > threshold && also,
        }
    }

    pub fn failed(name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self {
            name: name.into(),
            kind: "exact",
            residual: None,
            tolerance: None,
            statistic: None,
            p_value: None,
            threshold: None,
            detail: None,
            error: Some(err.to_string()),
            pass: false,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Suite-style report (verify, quantum-check).
#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub schema: &'static str,
    pub command: &'static str,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<u64>,
    pub times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub tolerances: Tolerances,
    pub checks: Vec<CheckEntry>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Tolerances {
    pub algebra: f64,
    pub extension: f64,
}

/// Per-time Monte Carlo comparison against the exact semigroup row.
#[derive(Debug, Serialize)]
pub struct SemigroupRun {
    /// 1-based initial state.
    pub k: usize,
    pub t: f64,
    pub paths: u64,
    pub empirical: Vec<f64>,
    pub exact: Vec<f64>,
    pub max_abs_dev: f64,
    pub chi2: f64,
    pub p_value: f64,
    pub verdict: &'static str,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub schema: &'static str,
    pub command: &'static str,
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    pub runs: Vec<SemigroupRun>,
    pub pass: bool,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
