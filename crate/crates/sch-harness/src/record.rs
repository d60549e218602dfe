//! Persisted run results: JSON records, one verification check per assert.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sch_core::analysis::RateFit;

use crate::config::ExperimentConfig;
use crate::HarnessError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SampleStatus {
    Ok,
    BlowUp { step: usize },
}

/// One Monte Carlo sample's outcome and named statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub index: u64,
    pub epsilon: f64,
    #[serde(flatten)]
    pub status: SampleStatus,
    pub stats: BTreeMap<String, f64>,
}

/// One verification record: `lhs ≤ rhs` (or a slope window etc.) with the
/// constant that was used and the sampling context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub params: serde_json::Value,
    pub lhs: f64,
    pub rhs: f64,
    pub constant_used: Option<f64>,
    pub holds: bool,
    pub samples: usize,
    pub stderr: Option<f64>,
}

impl CheckResult {
    pub fn inequality(name: &str, params: serde_json::Value, lhs: f64, rhs: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            params,
            lhs,
            rhs,
            constant_used: None,
            holds: lhs <= rhs,
            samples: 0,
            stderr: None,
        }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant_used = Some(c);
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.samples = n;
        self
    }

    pub fn with_stderr(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedRateFit {
    pub name: String,
    #[serde(flatten)]
    pub fit: RateFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub code_version: String,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub per_sample: Vec<SampleOutcome>,
    pub aggregates: BTreeMap<String, f64>,
    pub rate_fits: Vec<NamedRateFit>,
    pub checks: Vec<CheckResult>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn new(config: &ExperimentConfig) -> Self {
        RunRecord {
            format_version: FORMAT_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: config.experiment.as_str().to_string(),
            config: config.clone(),
            per_sample: Vec::new(),
            aggregates: BTreeMap::new(),
            rate_fits: Vec::new(),
            checks: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn all_checks_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn blow_up_count(&self) -> usize {
        self.per_sample
            .iter()
            .filter(|s| matches!(s.status, SampleStatus::BlowUp { .. }))
            .count()
    }

    pub fn write_json(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Config(format!("serialize record: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("bad record {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_result_semantics() {
        let ok = CheckResult::inequality("x", serde_json::json!({}), 1.0, 2.0);
        assert!(ok.holds);
        let bad = CheckResult::inequality("x", serde_json::json!({}), 2.0, 1.0);
        assert!(!bad.holds);
    }
}
