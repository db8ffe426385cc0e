//! Versioned JSON reports shared by the command-line tools.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    /// Hex SHA-256 of the canonical argument list.
    pub input_digest: String,
    pub seed: Option<u64>,
    pub budgets: BTreeMap<String, u64>,
    pub results: serde_json::Value,
    pub violations: Vec<String>,
    pub wall_time_s: f64,
}

impl Report {
    pub fn new(command: impl Into<String>, input_digest: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            input_digest: input_digest.into(),
            seed: None,
            budgets: BTreeMap::new(),
            results: serde_json::Value::Null,
            violations: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported report schema {}", r.schema_version)));
        }
        Ok(r)
    }

    /// The report without its wall time, for reproducibility comparisons.
    pub fn payload(&self) -> Self {
        Self { wall_time_s: 0.0, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut r = Report::new("jacobi-scan", "ab12");
        r.seed = Some(3);
        r.budgets.insert("budget".into(), 1000);
        r.results = serde_json::json!({ "min_gap": -0.125, "lambda": [1.5, 0.25, -0.1] });
        r.violations.push("min_gap < 0".into());
        r.wall_time_s = 0.75;
        assert_eq!(Report::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn schema_is_checked() {
        let mut r = Report::new("x", "y");
        r.schema_version = 99;
        assert!(Report::from_json(&serde_json::to_string(&r).unwrap()).is_err());
    }
}
