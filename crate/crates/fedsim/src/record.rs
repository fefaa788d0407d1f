//! Run records: the metric time series a run produces, and their exact
//! text round-trip.
//!
//! The CSV form carries `#`-prefixed header lines (seed, terminal status,
//! resolved config) for provenance, then one row per evaluation point.
//! Floats are written with Rust's shortest round-trip formatting, so
//! `parse(emit(record))` reproduces every field bit for bit (NaN marks
//! metrics that are undefined for the problem, e.g. accuracy of a
//! quadratic).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed run record: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: u64,
    /// Cumulative single-gradient evaluations summed over workers.
    pub cum_grad_evals: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub grad_norm2: f64,
}

impl MetricRow {
    /// Field-exact equality; NaN equals NaN.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.cum_grad_evals == other.cum_grad_evals
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_acc.to_bits() == other.train_acc.to_bits()
            && self.test_loss.to_bits() == other.test_loss.to_bits()
            && self.test_acc.to_bits() == other.test_acc.to_bits()
            && self.grad_norm2.to_bits() == other.grad_norm2.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    TargetReached,
    Diverged,
    BudgetViolation,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::TargetReached => "target-reached",
            RunStatus::Diverged => "diverged",
            RunStatus::BudgetViolation => "budget-violation",
        }
    }

    pub fn from_str(s: &str) -> Result<Self, RecordError> {
        match s {
            "completed" => Ok(RunStatus::Completed),
            "target-reached" => Ok(RunStatus::TargetReached),
            "diverged" => Ok(RunStatus::Diverged),
            "budget-violation" => Ok(RunStatus::BudgetViolation),
            other => Err(RecordError::Malformed(format!("unknown status '{other}'"))),
        }
    }
}

/// Time series of one repeat, plus its terminal status and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub status: RunStatus,
    /// Resolved run configuration as compact JSON, when available.
    pub config_json: Option<String>,
    pub rows: Vec<MetricRow>,
}

const CSV_HEADER: &str = "round,cum_grad_evals,train_loss,train_acc,test_loss,test_acc,grad_norm2";

impl RunRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        for w in self.rows.windows(2) {
            if w[1].round <= w[0].round {
                return Err(RecordError::Malformed(format!(
                    "rounds must increase strictly ({} then {})",
                    w[0].round, w[1].round
                )));
            }
        }
        if let Some(r) = self.rows.iter().find(|r| r.grad_norm2 < 0.0) {
            return Err(RecordError::Malformed(format!(
                "negative gradient norm at round {}",
                r.round
            )));
        }
        Ok(())
    }

    pub fn bits_eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.status == other.status
            && self.config_json == other.config_json
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.bits_eq(b))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# fedsim-run v1\n");
        out.push_str(&format!("# seed: {}\n", self.seed));
        out.push_str(&format!("# status: {}\n", self.status.as_str()));
        if let Some(cfg) = &self.config_json {
            out.push_str(&format!("# config: {cfg}\n"));
        }
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.round,
                r.cum_grad_evals,
                r.train_loss,
                r.train_acc,
                r.test_loss,
                r.test_acc,
                r.grad_norm2
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, RecordError> {
        let mut seed = None;
        let mut status = None;
        let mut config_json = None;
        let mut rows = Vec::new();
        let mut header_seen = false;
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("seed:") {
                    seed = Some(v.trim().parse::<u64>().map_err(|e| {
                        RecordError::Malformed(format!("bad seed: {e}"))
                    })?);
                } else if let Some(v) = rest.strip_prefix("status:") {
                    status = Some(RunStatus::from_str(v.trim())?);
                } else if let Some(v) = rest.strip_prefix("config:") {
                    config_json = Some(v.trim().to_string());
                }
                continue;
            }
            if !header_seen {
                if line != CSV_HEADER {
                    return Err(RecordError::Malformed(format!(
                        "unexpected column header '{line}'"
                    )));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(RecordError::Malformed(format!(
                    "expected 7 fields, got {} in '{line}'",
                    fields.len()
                )));
            }
            let f = |i: usize| -> Result<f64, RecordError> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|e| RecordError::Malformed(format!("bad float '{}': {e}", fields[i])))
            };
            rows.push(MetricRow {
                round: fields[0]
                    .parse()
                    .map_err(|e| RecordError::Malformed(format!("bad round: {e}")))?,
                cum_grad_evals: fields[1]
                    .parse()
                    .map_err(|e| RecordError::Malformed(format!("bad count: {e}")))?,
                train_loss: f(2)?,
                train_acc: f(3)?,
                test_loss: f(4)?,
                test_acc: f(5)?,
                grad_norm2: f(6)?,
            });
        }
        let record = RunRecord {
            seed: seed.ok_or_else(|| RecordError::Malformed("missing seed header".into()))?,
            status: status.ok_or_else(|| RecordError::Malformed("missing status header".into()))?,
            config_json,
            rows,
        };
        record.validate()?;
        Ok(record)
    }

    /// JSON-lines form: a header object, then one object per row.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            seed: u64,
            status: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            config: Option<&'a str>,
        }
        let mut out = serde_json::to_string(&Header {
            seed: self.seed,
            status: self.status.as_str(),
            config: self.config_json.as_deref(),
        })
        .expect("header serialization");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serialization"));
            out.push('\n');
        }
        out
    }

    /// Best (minimum) train loss over the evaluated rounds.
    pub fn best_train_loss(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.train_loss)
            .fold(f64::INFINITY, f64::min)
    }

    /// Best (maximum) test accuracy over the evaluated rounds.
    pub fn best_test_acc(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.test_acc)
            .fold(f64::NAN, f64::max)
    }

    /// First round at which the squared global gradient norm fell to
    /// `target` or below.
    pub fn rounds_to_target(&self, target: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.grad_norm2 <= target)
            .map(|r| r.round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_record() -> RunRecord {
        RunRecord {
            seed: 42,
            status: RunStatus::TargetReached,
            config_json: Some("{\"alg\":\"test\"}".to_string()),
            rows: vec![
                MetricRow {
                    round: 0,
                    cum_grad_evals: 0,
                    train_loss: 2.302585092994046,
                    train_acc: 0.1,
                    test_loss: f64::NAN,
                    test_acc: f64::NAN,
                    grad_norm2: 1.5e-3,
                },
                MetricRow {
                    round: 10,
                    cum_grad_evals: 12_345,
                    train_loss: 0.1,
                    train_acc: 0.97,
                    test_loss: 0.2,
                    test_acc: 0.9,
                    grad_norm2: 1e-7,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_field_exact() {
        let record = sample_record();
        let parsed = RunRecord::from_csv(&record.to_csv()).unwrap();
        assert!(parsed.bits_eq(&record));
    }

    #[test]
    fn rejects_non_increasing_rounds() {
        let mut record = sample_record();
        record.rows[1].round = 0;
        assert!(record.validate().is_err());
    }

    #[test]
    fn jsonl_has_header_plus_row_lines() {
        let record = sample_record();
        let jsonl = record.to_jsonl();
        assert_eq!(jsonl.lines().count(), 3);
        assert!(jsonl.lines().next().unwrap().contains("target-reached"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn csv_round_trip_survives_arbitrary_floats(
            seed in any::<u64>(),
            values in prop::collection::vec(
                (any::<f64>().prop_filter("finite", |v| v.is_finite()), 0u64..u64::MAX / 2),
                1..8,
            ),
        ) {
            let mut rows = Vec::new();
            for (i, (v, c)) in values.iter().enumerate() {
                rows.push(MetricRow {
                    round: i as u64,
                    cum_grad_evals: *c,
                    train_loss: *v,
                    train_acc: v * 0.5,
                    test_loss: f64::NAN,
                    test_acc: -v,
                    grad_norm2: v.abs(),
                });
            }
            let record = RunRecord { seed, status: RunStatus::Completed, config_json: None, rows };
            let parsed = RunRecord::from_csv(&record.to_csv()).unwrap();
            prop_assert!(parsed.bits_eq(&record));
        }
    }
}
