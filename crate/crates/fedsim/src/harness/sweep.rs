//! Learning-rate sweeps with a stability-aware selection rule: maximize the
//! minimum train accuracy over the last 100 evaluation points (the loss
//! stands in for accuracy on problems without one). Diverged runs score
//! negative infinity; ties break toward the smaller learning rate.

use serde::Serialize;

use super::{run, HarnessError, RunConfig, RunSummary};
use crate::record::{RunRecord, RunStatus};

/// The default learning-rate grid.
pub const DEFAULT_ETA_GRID: [f64; 6] = [0.005, 0.01, 0.05, 0.1, 0.5, 1.0];

/// Evaluation points entering the stability criterion.
const CRITERION_TAIL: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct EtaOutcome {
    pub eta: f64,
    /// Mean over repeats of the tail-minimum metric; `-inf` when any repeat
    /// failed.
    pub criterion: f64,
    pub statuses: Vec<RunStatus>,
    #[serde(skip)]
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    /// Selected learning rate; `None` when every candidate diverged.
    pub chosen: Option<f64>,
    pub per_eta: Vec<EtaOutcome>,
}

/// The per-record criterion: minimum over the last `CRITERION_TAIL`
/// evaluation points of the train accuracy, or of the negated train loss
/// when the problem defines no accuracy.
pub fn stability_criterion(record: &RunRecord) -> f64 {
    let tail = record.rows.len().saturating_sub(CRITERION_TAIL);
    record.rows[tail..]
        .iter()
        .map(|r| {
            if r.train_acc.is_nan() {
                -r.train_loss
            } else {
                r.train_acc
            }
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn sweep_eta(config: &RunConfig, etas: &[f64]) -> Result<SweepOutcome, HarnessError> {
    if etas.is_empty() {
        return Err(HarnessError::Config("eta grid must be nonempty".into()));
    }
    let mut per_eta = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut cfg = config.clone();
        cfg.params.eta = eta;
        let output = run(&cfg)?;
        let statuses = output.statuses();
        let failed = statuses
            .iter()
            .any(|s| matches!(s, RunStatus::Diverged | RunStatus::BudgetViolation));
        let criterion = if failed {
            f64::NEG_INFINITY
        } else {
            let records: Vec<_> = output.records().collect();
            records.iter().map(|r| stability_criterion(r)).sum::<f64>() / records.len() as f64
        };
        per_eta.push(EtaOutcome {
            eta,
            criterion,
            statuses,
            summary: output.summary,
        });
    }

    // Ascending by eta; replace only on strict improvement so ties go to
    // the smaller learning rate.
    let mut order: Vec<usize> = (0..per_eta.len()).collect();
    order.sort_by(|&a, &b| per_eta[a].eta.partial_cmp(&per_eta[b].eta).unwrap());
    let mut chosen: Option<(f64, f64)> = None;
    for &i in &order {
        let o = &per_eta[i];
        if o.criterion == f64::NEG_INFINITY {
            continue;
        }
        match chosen {
            None => chosen = Some((o.eta, o.criterion)),
            Some((_, best)) if o.criterion > best => chosen = Some((o.eta, o.criterion)),
            _ => {}
        }
    }
    Ok(SweepOutcome {
        chosen: chosen.map(|(eta, _)| eta),
        per_eta,
    })
}
