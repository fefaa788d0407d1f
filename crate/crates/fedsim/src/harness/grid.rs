//! Full experiment grids over heterogeneity q, local computation budget B
//! and algorithm, with the fixed budget split K = B/16, b = 16 for local
//! methods and b = B for non-local ones.
//!
//! Cells are independent jobs with seed-derived randomness, so concurrent
//! execution produces identical output in identical order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svg::{line_chart, Series};
use super::{run, Algorithm, HarnessError, ProblemSpec, RunConfig, RunSummary};
use crate::record::RunStatus;

/// The paper-style local batch size of the budget split.
pub const LOCAL_BATCH: u64 = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    /// Template; its problem must be a classification spec whose `q` is
    /// replaced per cell.
    pub base: RunConfig,
    pub q_values: Vec<f64>,
    pub budgets: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    /// Per-algorithm learning rates (e.g. from prior sweeps); the template
    /// eta applies where absent.
    #[serde(default)]
    pub etas: BTreeMap<Algorithm, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellKey {
    pub algorithm: Algorithm,
    pub q: f64,
    pub budget: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub best_train_loss_mean: f64,
    pub best_train_loss_std: f64,
    pub best_test_acc_mean: f64,
    pub best_test_acc_std: f64,
    pub statuses: Vec<RunStatus>,
    #[serde(skip)]
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub enum CellOutcome {
    Done(CellSummary),
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct GridOutput {
    pub cells: Vec<(CellKey, CellOutcome)>,
}

impl GridOutput {
    pub fn cell(&self, algorithm: Algorithm, q: f64, budget: u64) -> Option<&CellOutcome> {
        self.cells
            .iter()
            .find(|(k, _)| k.algorithm == algorithm && k.q == q && k.budget == budget)
            .map(|(_, o)| o)
    }
}

/// Applies the budget split and q to the template.
pub fn cell_config(
    base: &RunConfig,
    algorithm: Algorithm,
    q: f64,
    budget: u64,
    etas: &BTreeMap<Algorithm, f64>,
) -> Result<RunConfig, HarnessError> {
    let mut cfg = base.clone();
    cfg.algorithm = algorithm;
    cfg.federation.budget = budget;
    let per_worker = match &mut cfg.problem {
        ProblemSpec::Classification {
            q: cell_q,
            classes,
            samples_per_class,
            ..
        } => {
            *cell_q = q;
            let c = crate::problems::ClassPartitionConfig {
                q,
                num_classes: *classes,
                samples_per_class: *samples_per_class,
                feature_dim: 1,
                label_noise: 0.0,
            };
            crate::problems::partition_summary(&c).per_worker as u64
        }
        _ => {
            return Err(HarnessError::Config(
                "experiment grids need a classification problem template".into(),
            ))
        }
    };
    if algorithm.is_local() {
        cfg.params.local_steps = (budget / LOCAL_BATCH).max(1);
        cfg.params.batch = budget.min(LOCAL_BATCH);
    } else {
        cfg.params.local_steps = 1;
        cfg.params.batch = budget;
    }
    // Full snapshots; stages derived from the round budget.
    cfg.params.snapshot_batch = per_worker;
    cfg.params.auto_inner_rounds = true;
    cfg.params.stages = 0;
    if let Some(&eta) = etas.get(&algorithm) {
        cfg.params.eta = eta;
    }
    Ok(cfg)
}

pub fn experiment_grid(grid: &GridConfig) -> Result<GridOutput, HarnessError> {
    if grid.q_values.is_empty() || grid.budgets.is_empty() || grid.algorithms.is_empty() {
        return Err(HarnessError::Config(
            "grid axes must all be nonempty".into(),
        ));
    }
    let mut keys = Vec::new();
    for &algorithm in &grid.algorithms {
        for &q in &grid.q_values {
            for &budget in &grid.budgets {
                keys.push(CellKey {
                    algorithm,
                    q,
                    budget,
                });
            }
        }
    }
    let cells: Vec<(CellKey, CellOutcome)> = keys
        .into_par_iter()
        .map(|key| {
            let outcome = run_cell(grid, key);
            (key, outcome)
        })
        .collect();
    Ok(GridOutput { cells })
}

fn run_cell(grid: &GridConfig, key: CellKey) -> CellOutcome {
    let cfg = match cell_config(&grid.base, key.algorithm, key.q, key.budget, &grid.etas) {
        Ok(c) => c,
        Err(e) => return CellOutcome::Failed(e.to_string()),
    };
    let output = match run(&cfg) {
        Ok(o) => o,
        Err(e) => return CellOutcome::Failed(e.to_string()),
    };
    let best_losses: Vec<f64> = output.records().map(|r| r.best_train_loss()).collect();
    let best_accs: Vec<f64> = output.records().map(|r| r.best_test_acc()).collect();
    let stat = |vs: &[f64]| {
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let std = if vs.len() < 2 {
            0.0
        } else {
            (vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        (mean, std)
    };
    let (loss_mean, loss_std) = stat(&best_losses);
    let (acc_mean, acc_std) = stat(&best_accs);
    CellOutcome::Done(CellSummary {
        best_train_loss_mean: loss_mean,
        best_train_loss_std: loss_std,
        best_test_acc_mean: acc_mean,
        best_test_acc_std: acc_std,
        statuses: output.statuses(),
        summary: output.summary,
    })
}

/// Writes the three views (metric vs q, metric vs budget, metric vs rounds)
/// as CSV plus SVG charts, and per-cell summaries. Returns the paths
/// written.
pub fn write_grid_outputs(
    grid: &GridConfig,
    output: &GridOutput,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let cells_dir = dir.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    let mut written = Vec::new();

    for (key, outcome) in &output.cells {
        if let CellOutcome::Done(cell) = outcome {
            let path = cells_dir.join(format!(
                "{}-q{}-B{}.summary.csv",
                key.algorithm, key.q, key.budget
            ));
            std::fs::write(&path, cell.summary.to_csv())?;
            written.push(path);
        }
    }

    // View (i): best metric vs q at the largest budget.
    let budget_star = *grid.budgets.iter().max().unwrap();
    let mut csv = String::from(
        "q,algorithm,best_train_loss_mean,best_train_loss_std,best_test_acc_mean,best_test_acc_std,status\n",
    );
    for &q in &grid.q_values {
        for &alg in &grid.algorithms {
            match output.cell(alg, q, budget_star) {
                Some(CellOutcome::Done(c)) => csv.push_str(&format!(
                    "{q},{alg},{},{},{},{},ok\n",
                    c.best_train_loss_mean,
                    c.best_train_loss_std,
                    c.best_test_acc_mean,
                    c.best_test_acc_std
                )),
                Some(CellOutcome::Failed(e)) => {
                    csv.push_str(&format!("{q},{alg},,,,,failed: {e}\n"))
                }
                None => csv.push_str(&format!("{q},{alg},,,,,missing\n")),
            }
        }
    }
    let path = dir.join("view_by_q.csv");
    std::fs::write(&path, csv)?;
    written.push(path);

    // View (ii): best metric vs budget at the smallest q.
    let q_star = grid
        .q_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut csv = String::from(
        "budget,algorithm,best_train_loss_mean,best_train_loss_std,best_test_acc_mean,best_test_acc_std,status\n",
    );
    for &budget in &grid.budgets {
        for &alg in &grid.algorithms {
            match output.cell(alg, q_star, budget) {
                Some(CellOutcome::Done(c)) => csv.push_str(&format!(
                    "{budget},{alg},{},{},{},{},ok\n",
                    c.best_train_loss_mean,
                    c.best_train_loss_std,
                    c.best_test_acc_mean,
                    c.best_test_acc_std
                )),
                Some(CellOutcome::Failed(e)) => {
                    csv.push_str(&format!("{budget},{alg},,,,,failed: {e}\n"))
                }
                None => csv.push_str(&format!("{budget},{alg},,,,,missing\n")),
            }
        }
    }
    let path = dir.join("view_by_budget.csv");
    std::fs::write(&path, csv)?;
    written.push(path);

    // Charts: best train loss vs q, and loss-vs-rounds curves per q at the
    // largest budget.
    let series: Vec<Series> = grid
        .algorithms
        .iter()
        .map(|&alg| Series {
            label: alg.to_string(),
            points: grid
                .q_values
                .iter()
                .filter_map(|&q| match output.cell(alg, q, budget_star) {
                    Some(CellOutcome::Done(c)) => Some((q, c.best_train_loss_mean)),
                    _ => None,
                })
                .collect(),
            band: Some(
                grid.q_values
                    .iter()
                    .filter_map(|&q| match output.cell(alg, q, budget_star) {
                        Some(CellOutcome::Done(c)) => Some((
                            q,
                            c.best_train_loss_mean - c.best_train_loss_std,
                            c.best_train_loss_mean + c.best_train_loss_std,
                        )),
                        _ => None,
                    })
                    .collect(),
            ),
        })
        .collect();
    let path = dir.join("best_train_loss_by_q.svg");
    std::fs::write(
        &path,
        line_chart(
            &format!("Best train loss vs q (B = {budget_star})"),
            "q",
            "best train loss",
            &series,
            false,
        ),
    )?;
    written.push(path);

    for &q in &grid.q_values {
        let series: Vec<Series> = grid
            .algorithms
            .iter()
            .filter_map(|&alg| match output.cell(alg, q, budget_star) {
                Some(CellOutcome::Done(c)) => Some(Series {
                    label: alg.to_string(),
                    points: c
                        .summary
                        .rows
                        .iter()
                        .map(|r| (r.round as f64, r.mean.train_loss))
                        .collect(),
                    band: Some(
                        c.summary
                            .rows
                            .iter()
                            .map(|r| {
                                (
                                    r.round as f64,
                                    r.mean.train_loss - r.std.train_loss,
                                    r.mean.train_loss + r.std.train_loss,
                                )
                            })
                            .collect(),
                    ),
                }),
                _ => None,
            })
            .collect();
        let path = dir.join(format!("train_loss_by_round_q{q}.svg"));
        std::fs::write(
            &path,
            line_chart(
                &format!("Train loss vs rounds (q = {q}, B = {budget_star})"),
                "communication round",
                "train loss",
                &series,
                false,
            ),
        )?;
        written.push(path);
    }
    Ok(written)
}
