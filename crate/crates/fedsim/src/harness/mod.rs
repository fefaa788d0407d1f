//! Experiment harness: run configuration, execution, repeat summaries.

mod grid;
mod svg;
mod sweep;

pub use grid::{
    experiment_grid, write_grid_outputs, CellKey, CellOutcome, CellSummary, GridConfig, GridOutput,
};
pub use svg::{line_chart, Series};
pub use sweep::{sweep_eta, EtaOutcome, SweepOutcome, DEFAULT_ETA_GRID};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{
    self, AlgoOutput, AlgoParams, SimOptions, Simulation, StopReason,
};
use crate::cluster::{FederationConfig, RoundLedger, RunError};
use crate::problems::{
    gen_classification, gen_quadratic_family_with, import_dataset, mlp_objective,
    ClassPartitionConfig, Problem, ProblemError, QuadraticFamilyConfig,
};
use crate::record::{MetricRow, RecordError, RunRecord, RunStatus};
use crate::rng::{derive_seed, purpose};
use crate::vector::ParamVector;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MinibatchSgd,
    MinibatchSarah,
    LocalSgd,
    LocalGd,
    Scaffold,
    BvrLSgd,
    BvrLSgdPractical,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::MinibatchSgd,
        Algorithm::MinibatchSarah,
        Algorithm::LocalSgd,
        Algorithm::LocalGd,
        Algorithm::Scaffold,
        Algorithm::BvrLSgd,
        Algorithm::BvrLSgdPractical,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::MinibatchSgd => "minibatch-sgd",
            Algorithm::MinibatchSarah => "minibatch-sarah",
            Algorithm::LocalSgd => "local-sgd",
            Algorithm::LocalGd => "local-gd",
            Algorithm::Scaffold => "scaffold",
            Algorithm::BvrLSgd => "bvr-l-sgd",
            Algorithm::BvrLSgdPractical => "bvr-l-sgd-practical",
        }
    }

    /// Local methods take K local steps between barriers; non-local methods
    /// spend the whole budget on one batch.
    pub fn is_local(&self) -> bool {
        matches!(
            self,
            Algorithm::LocalSgd
                | Algorithm::LocalGd
                | Algorithm::Scaffold
                | Algorithm::BvrLSgd
                | Algorithm::BvrLSgdPractical
        )
    }

    /// Stage-structured algorithms derive their stage count from the round
    /// budget.
    pub fn is_staged(&self) -> bool {
        matches!(
            self,
            Algorithm::MinibatchSarah | Algorithm::BvrLSgd | Algorithm::BvrLSgdPractical
        )
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown algorithm '{s}'"))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_sigma2() -> f64 {
    1.0
}
fn default_examples_per_worker() -> usize {
    64
}
fn default_l2() -> f64 {
    crate::problems::DEFAULT_L2
}

/// What to optimize.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic {
        workers: usize,
        dim: usize,
        zeta: f64,
        smoothness: f64,
        mu: f64,
        #[serde(default = "default_sigma2")]
        sigma2: f64,
        #[serde(default = "default_examples_per_worker")]
        examples_per_worker: usize,
    },
    Classification {
        q: f64,
        classes: usize,
        samples_per_class: usize,
        feature_dim: usize,
        hidden: usize,
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default)]
        label_noise: f64,
    },
    Dataset {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        hidden: usize,
        #[serde(default = "default_l2")]
        l2: f64,
    },
}

impl ProblemSpec {
    pub fn build(&self, seed: u64) -> Result<Problem, HarnessError> {
        match self {
            ProblemSpec::Quadratic {
                workers,
                dim,
                zeta,
                smoothness,
                mu,
                sigma2,
                examples_per_worker,
            } => {
                let mut cfg = QuadraticFamilyConfig::new(*workers, *dim, *zeta, *smoothness, *mu);
                cfg.sigma2 = *sigma2;
                cfg.examples_per_worker = *examples_per_worker;
                Ok(gen_quadratic_family_with(cfg, seed)?)
            }
            ProblemSpec::Classification {
                q,
                classes,
                samples_per_class,
                feature_dim,
                hidden,
                l2,
                label_noise,
            } => {
                let cfg = ClassPartitionConfig {
                    q: *q,
                    num_classes: *classes,
                    samples_per_class: *samples_per_class,
                    feature_dim: *feature_dim,
                    label_noise: *label_noise,
                };
                let model = mlp_objective(*hidden, *l2)?;
                let (problem, _) = gen_classification(&cfg, &model, seed)?;
                Ok(problem)
            }
            ProblemSpec::Dataset {
                train,
                test,
                hidden,
                l2,
            } => {
                let model = mlp_objective(*hidden, *l2)?;
                Ok(import_dataset(train, test.as_deref(), &model, seed)?)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    pub params: AlgoParams,
    pub federation: FederationConfig,
    pub total_rounds: u64,
    pub eval_every: u64,
    #[serde(default)]
    pub target_grad_norm2: Option<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    pub seed: u64,
    /// Explicit per-repeat seeds; by default repeat r derives its seed from
    /// `seed` and r.
    #[serde(default)]
    pub repeat_seeds: Option<Vec<u64>>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_repeats() -> u32 {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.eval_every == 0 {
            return Err(HarnessError::Config("eval_every must be >= 1".into()));
        }
        if self.total_rounds % self.eval_every != 0 {
            return Err(HarnessError::Config(
                "eval_every must divide total_rounds".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(HarnessError::Config("repeats must be >= 1".into()));
        }
        if let Some(seeds) = &self.repeat_seeds {
            if seeds.len() != self.repeats as usize {
                return Err(HarnessError::Config(
                    "repeat_seeds length must equal repeats".into(),
                ));
            }
        }
        self.federation.validate()?;
        self.params.validate(&self.federation)?;
        Ok(())
    }

    pub fn repeat_seed(&self, repeat: u32) -> u64 {
        match &self.repeat_seeds {
            Some(seeds) => seeds[repeat as usize],
            None => derive_seed(self.seed, 0x5eed_0000 + repeat as u64),
        }
    }

    /// Stage count for stage-structured algorithms: explicit when set,
    /// otherwise as many stages as fit the round budget.
    fn resolved_params(&self) -> AlgoParams {
        let mut params = self.params.clone();
        if self.algorithm.is_staged() && params.stages == 0 {
            let t = params.effective_inner_rounds();
            params.stages = self.total_rounds.div_ceil(t + 1).max(1);
        }
        params
    }
}

/// One repeat's full result: the record plus the fabric ledger.
#[derive(Debug)]
pub struct RepeatResult {
    pub record: RunRecord,
    pub ledger: RoundLedger,
    pub output: Option<AlgoOutput>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub repeats: Vec<RepeatResult>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.repeats.iter().map(|r| &r.record)
    }

    pub fn statuses(&self) -> Vec<RunStatus> {
        self.repeats.iter().map(|r| r.record.status).collect()
    }
}

pub fn run(config: &RunConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let problem = config.problem.build(config.seed)?;
    if problem.workers() != config.federation.workers {
        return Err(HarnessError::Config(format!(
            "problem has {} workers but federation declares {}",
            problem.workers(),
            config.federation.workers
        )));
    }
    let params = config.resolved_params();
    let mut repeats = Vec::with_capacity(config.repeats as usize);
    for r in 0..config.repeats {
        repeats.push(run_repeat(config, &problem, &params, r)?);
    }
    let summary = summarize(repeats.iter().map(|r| &r.record));
    Ok(RunOutput { repeats, summary })
}

fn run_repeat(
    config: &RunConfig,
    problem: &Problem,
    params: &AlgoParams,
    repeat: u32,
) -> Result<RepeatResult, HarnessError> {
    let seed = config.repeat_seed(repeat);
    let mut fed = config.federation.clone();
    fed.seed = seed;
    let mut resolved = config.clone();
    resolved.federation = fed.clone();
    resolved.params = params.clone();
    let config_json = serde_json::to_string(&resolved)?;

    let opts = SimOptions {
        total_rounds: if config.total_rounds > 0 {
            Some(config.total_rounds)
        } else {
            None
        },
        eval_every: config.eval_every,
        target_grad_norm2: config.target_grad_norm2,
        capture_iterates: false,
    };
    let mut sim = Simulation::new(problem, fed, opts);
    let mut init_rng = sim.seeds.stream(&[purpose::INIT]);
    let x0 = problem.sample_init(&mut init_rng);
    sim.record_initial(&x0);

    // A zero-round run is just the initial evaluation.
    let (status, output) = if config.total_rounds == 0 {
        (RunStatus::Completed, None)
    } else {
        match dispatch(config.algorithm, &mut sim, &x0, params) {
            Ok(out) => {
                let status = match sim.stop_reason {
                    Some(StopReason::TargetReached) => RunStatus::TargetReached,
                    _ => RunStatus::Completed,
                };
                (status, Some(out))
            }
            Err(RunError::Diverged { .. }) => (RunStatus::Diverged, None),
            Err(RunError::BudgetViolation { .. }) => (RunStatus::BudgetViolation, None),
            Err(e) => return Err(e.into()),
        }
    };

    let record = RunRecord {
        seed,
        status,
        config_json: Some(config_json),
        rows: std::mem::take(&mut sim.rows),
    };
    record.validate()?;
    Ok(RepeatResult {
        record,
        ledger: sim.fabric.ledger,
        output,
    })
}

pub(crate) fn dispatch(
    algorithm: Algorithm,
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    match algorithm {
        Algorithm::MinibatchSgd => algorithms::minibatch_sgd(sim, x0, params),
        Algorithm::MinibatchSarah => algorithms::minibatch_sarah(sim, x0, params),
        Algorithm::LocalSgd => algorithms::local_sgd(sim, x0, params),
        Algorithm::LocalGd => algorithms::local_gd(sim, x0, params),
        Algorithm::Scaffold => algorithms::scaffold(sim, x0, params),
        Algorithm::BvrLSgd => algorithms::bvr_l_sgd(sim, x0, params),
        Algorithm::BvrLSgdPractical => algorithms::bvr_l_sgd_practical(sim, x0, params),
    }
}

/// Per-metric mean or standard deviation at one evaluation round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub cum_grad_evals: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub grad_norm2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub round: u64,
    /// Repeats contributing at this round (diverged runs end early).
    pub repeats: u32,
    pub mean: MetricStats,
    pub std: MetricStats,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
}

pub fn summarize<'a>(records: impl Iterator<Item = &'a RunRecord>) -> RunSummary {
    use std::collections::BTreeMap;
    let mut grouped: BTreeMap<u64, Vec<&MetricRow>> = BTreeMap::new();
    for record in records {
        for row in &record.rows {
            grouped.entry(row.round).or_default().push(row);
        }
    }
    let rows = grouped
        .into_iter()
        .map(|(round, rows)| {
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            let std = |f: &dyn Fn(&MetricRow) -> f64, m: f64| {
                if rows.len() < 2 {
                    0.0
                } else {
                    (rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                }
            };
            let build = |f: &dyn Fn(&MetricRow) -> f64| {
                let m = mean(f);
                (m, std(f, m))
            };
            let (cg_m, cg_s) = build(&|r| r.cum_grad_evals as f64);
            let (trl_m, trl_s) = build(&|r| r.train_loss);
            let (tra_m, tra_s) = build(&|r| r.train_acc);
            let (tel_m, tel_s) = build(&|r| r.test_loss);
            let (tea_m, tea_s) = build(&|r| r.test_acc);
            let (g_m, g_s) = build(&|r| r.grad_norm2);
            SummaryRow {
                round,
                repeats: rows.len() as u32,
                mean: MetricStats {
                    cum_grad_evals: cg_m,
                    train_loss: trl_m,
                    train_acc: tra_m,
                    test_loss: tel_m,
                    test_acc: tea_m,
                    grad_norm2: g_m,
                },
                std: MetricStats {
                    cum_grad_evals: cg_s,
                    train_loss: trl_s,
                    train_acc: tra_s,
                    test_loss: tel_s,
                    test_acc: tea_s,
                    grad_norm2: g_s,
                },
            }
        })
        .collect();
    RunSummary { rows }
}

pub const SUMMARY_CSV_HEADER: &str = "round,repeats,cum_grad_evals_mean,cum_grad_evals_std,train_loss_mean,train_loss_std,train_acc_mean,train_acc_std,test_loss_mean,test_loss_std,test_acc_mean,test_acc_std,grad_norm2_mean,grad_norm2_std";

impl RunSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SUMMARY_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.repeats,
                r.mean.cum_grad_evals,
                r.std.cum_grad_evals,
                r.mean.train_loss,
                r.std.train_loss,
                r.mean.train_acc,
                r.std.train_acc,
                r.mean.test_loss,
                r.std.test_loss,
                r.mean.test_acc,
                r.std.test_acc,
                r.mean.grad_norm2,
                r.std.grad_norm2
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, RecordError> {
        let mut rows = Vec::new();
        let mut lines = text.lines().filter(|l| !l.is_empty());
        match lines.next() {
            Some(h) if h == SUMMARY_CSV_HEADER => {}
            other => {
                return Err(RecordError::Malformed(format!(
                    "unexpected summary header {other:?}"
                )))
            }
        }
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(RecordError::Malformed(format!(
                    "expected 14 summary fields in '{line}'"
                )));
            }
            let num = |i: usize| -> Result<f64, RecordError> {
                f[i].parse::<f64>()
                    .map_err(|e| RecordError::Malformed(format!("bad float '{}': {e}", f[i])))
            };
            rows.push(SummaryRow {
                round: f[0]
                    .parse()
                    .map_err(|e| RecordError::Malformed(format!("bad round: {e}")))?,
                repeats: f[1]
                    .parse()
                    .map_err(|e| RecordError::Malformed(format!("bad repeats: {e}")))?,
                mean: MetricStats {
                    cum_grad_evals: num(2)?,
                    train_loss: num(4)?,
                    train_acc: num(6)?,
                    test_loss: num(8)?,
                    test_acc: num(10)?,
                    grad_norm2: num(12)?,
                },
                std: MetricStats {
                    cum_grad_evals: num(3)?,
                    train_loss: num(5)?,
                    train_acc: num(7)?,
                    test_loss: num(9)?,
                    test_acc: num(11)?,
                    grad_norm2: num(13)?,
                },
            });
        }
        Ok(RunSummary { rows })
    }
}
