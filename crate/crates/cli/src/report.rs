//! Run reports: per-analysis steps with their verdicts, plus CSV tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgnet_core::sgc::{Status, Verdict};

use crate::config::Scenario;
use crate::CliError;

/// Version of the report JSON layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StepStatus {
    Falsified,
    Refused,
    NoViolationFound,
    Certified,
    /// A computation without a pass/fail verdict (closures, tables).
    Completed,
}

impl StepStatus {
    pub fn is_failure(self) -> bool {
        matches!(self, StepStatus::Falsified | StepStatus::Refused)
    }
}

impl From<Status> for StepStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Falsified => StepStatus::Falsified,
            Status::NoViolationFound => StepStatus::NoViolationFound,
            Status::Certified => StepStatus::Certified,
        }
    }
}

/// Outcome of re-running a check at twice the truncation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub window: usize,
    pub status: StepStatus,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// The analysis label, or its check name made unique within the scenario.
    pub id: String,
    pub check: String,
    pub status: StepStatus,
    pub scope: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub verdicts: BTreeMap<String, Verdict>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Drift>,
    /// File names of the CSV tables written for this step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Step {
    pub fn new(id: &str, check: &str, scope: impl Into<String>) -> Self {
        Step {
            id: id.to_string(),
            check: check.to_string(),
            status: StepStatus::Completed,
            scope: scope.into(),
            verdicts: BTreeMap::new(),
            metrics: BTreeMap::new(),
            drift: None,
            tables: Vec::new(),
            reason: None,
        }
    }

    pub fn refused(id: &str, check: &str, reason: impl Into<String>) -> Self {
        Step { status: StepStatus::Refused, reason: Some(reason.into()), ..Step::new(id, check, "") }
    }

    /// Records a verdict; the step status becomes the weakest verdict status.
    pub fn push_verdict(&mut self, name: &str, verdict: Verdict) {
        let status = StepStatus::from(verdict.status);
        self.status = if self.verdicts.is_empty() { status } else { self.status.min(status) };
        self.verdicts.insert(name.to_string(), verdict);
    }

    /// The part of the step compared by [`merge_reports`].
    fn outcome(&self) -> (&str, StepStatus, &BTreeMap<String, Verdict>) {
        (&self.check, self.status, &self.verdicts)
    }
}

/// A CSV table held in memory until the run writes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        Table { name: name.into(), header, rows }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush().map_err(|e| CliError::Csv(e.into()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    /// The scenarios that produced the steps; one for a single run.
    pub scenarios: Vec<Scenario>,
    pub steps: Vec<Step>,
    /// Wall-clock seconds per step id and in total. The only field that
    /// differs between runs of the same scenario.
    pub timing: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(scenario: Scenario) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            scenarios: vec![scenario],
            steps: Vec::new(),
            timing: BTreeMap::new(),
        }
    }

    /// Nonzero iff some step was falsified or refused.
    pub fn exit_code(&self) -> i32 {
        if self.steps.iter().any(|s| s.status.is_failure()) {
            1
        } else {
            0
        }
    }

    pub fn step(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Report, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let report: Report = serde_json::from_str(&text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(CliError::config(
                path.display().to_string(),
                format!("report schema version {} is not {REPORT_SCHEMA_VERSION}", report.schema_version),
            ));
        }
        Ok(report)
    }
}

/// Concatenates reports. Steps with the same id must agree on check, status
/// and verdicts; agreeing duplicates are kept once.
pub fn merge_reports(reports: &[Report]) -> Result<Report, CliError> {
    let mut merged = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        scenarios: Vec::new(),
        steps: Vec::new(),
        timing: BTreeMap::new(),
    };
    for report in reports {
        merged.scenarios.extend(report.scenarios.iter().cloned());
        for step in &report.steps {
            match merged.steps.iter().find(|s| s.id == step.id) {
                Some(existing) if existing.outcome() == step.outcome() => {}
                Some(existing) => {
                    return Err(CliError::MergeConflict {
                        id: step.id.clone(),
                        first: format!("{:?}", existing.status),
                        second: format!("{:?}", step.status),
                    })
                }
                None => merged.steps.push(step.clone()),
            }
        }
        for (key, secs) in &report.timing {
            *merged.timing.entry(key.clone()).or_insert(0.0) += secs;
        }
    }
    Ok(merged)
}
