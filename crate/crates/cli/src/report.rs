//! Verification reports.

use crate::json;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

pub const REPORT_FORMAT: &str = "mvkit-verify-1";

/// How a measured value is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

impl Relation {
    pub fn holds(self, measured: f64, tolerance: f64) -> bool {
        match self {
            Self::AtMost => measured <= tolerance,
            Self::Below => measured < tolerance,
            Self::AtLeast => measured >= tolerance,
            Self::Above => measured > tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// `None` when the measurement was not a finite number.
    pub measured: Option<f64>,
    pub relation: Relation,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: &str, measured: f64, relation: Relation, tolerance: f64) -> Self {
        let finite = measured.is_finite();
        Self {
            name: name.to_string(),
            pass: finite && relation.holds(measured, tolerance),
            measured: finite.then_some(measured),
            relation,
            tolerance,
        }
    }

    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured, Relation::AtMost, tolerance)
    }

    pub fn at_least(name: &str, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured, Relation::AtLeast, tolerance)
    }

    /// A boolean property recorded as 1 (held) or 0 (failed).
    pub fn holds(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Relation::AtLeast, 1.0)
    }

    pub fn describe(&self) -> String {
        let measured = self
            .measured
            .map_or_else(|| "non-finite".to_string(), |m| format!("{m:.6e}"));
        let rel = serde_json::to_value(self.relation).expect("relation serializes");
        format!(
            "{} {}: measured {} (need {} {:e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            measured,
            rel.as_str().unwrap_or("?"),
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRecord {
    pub suite: String,
    pub anchor: String,
    pub pass: bool,
    pub seed: u64,
    pub runtime_ms: u64,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl SuiteRecord {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failing(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format: String,
    pub selection: String,
    pub seed: u64,
    pub pass: bool,
    pub suites: Vec<SuiteRecord>,
}

impl VerifyReport {
    pub fn new(selection: &str, seed: u64, suites: Vec<SuiteRecord>) -> Self {
        Self {
            format: REPORT_FORMAT.to_string(),
            selection: selection.to_string(),
            seed,
            pass: suites.iter().all(|s| s.pass),
            suites,
        }
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteRecord> {
        self.suites.iter().find(|s| s.suite == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = json::to_string_pretty(self).expect("report serialization cannot fail");
        s.push('\n');
        s
    }
}

pub fn write_report(report: &VerifyReport, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, report.to_json())
}

/// Parse a report and drop every `runtime_ms` field.
pub fn strip_runtime(report_json: &str) -> serde_json::Result<Value> {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                map.remove("runtime_ms");
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v: Value = serde_json::from_str(report_json)?;
    strip(&mut v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(pass: bool, runtime_ms: u64) -> SuiteRecord {
        SuiteRecord {
            suite: "x".into(),
            anchor: "a".into(),
            pass,
            seed: 3,
            runtime_ms,
            checks: vec![Check::at_most("c", if pass { 0.5 } else { 2.0 }, 1.0)],
            details: Value::Null,
        }
    }

    #[test]
    fn overall_pass_requires_every_suite() {
        assert!(VerifyReport::new("all", 0, vec![record(true, 1), record(true, 2)]).pass);
        assert!(!VerifyReport::new("all", 0, vec![record(true, 1), record(false, 2)]).pass);
    }

    #[test]
    fn checks_compare_with_tolerance() {
        assert!(Check::at_most("a", 1.0, 1.0).pass);
        assert!(!Check::new("b", 1.0, Relation::Below, 1.0).pass);
        assert!(Check::at_least("c", 0.95, 0.95).pass);
        let nan = Check::at_most("d", f64::NAN, 1.0);
        assert!(!nan.pass && nan.measured.is_none());
        assert!(Check::holds("e", true).pass && !Check::holds("f", false).pass);
        assert!(Check::at_most("g", 2.0, 1.0)
            .describe()
            .starts_with("FAIL g: measured 2.000000e0 (need <= 1e0)"));
    }

    #[test]
    fn runtime_is_the_only_difference_stripped() {
        let a = VerifyReport::new("all", 0, vec![record(true, 1)]).to_json();
        let b = VerifyReport::new("all", 0, vec![record(true, 99)]).to_json();
        assert_ne!(a, b);
        assert_eq!(strip_runtime(&a).unwrap(), strip_runtime(&b).unwrap());
        let c = VerifyReport::new("all", 1, vec![record(true, 1)]).to_json();
        assert_ne!(strip_runtime(&a).unwrap(), strip_runtime(&c).unwrap());
    }

    #[test]
    fn report_round_trips() {
        let r = VerifyReport::new("fusion", 7, vec![record(false, 5)]);
        let back: VerifyReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.suite("x").unwrap().failing().count(), 1);
    }
}
