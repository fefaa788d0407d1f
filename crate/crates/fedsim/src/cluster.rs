//! Simulated federation fabric: worker registry, synchronization primitives
//! and the ledger that makes communication complexity a measured quantity.
//!
//! One communication round is one synchronization barrier, regardless of how
//! many vector payloads cross it. Gradient evaluations are charged per
//! worker through the fabric so the ledger sees every single-gradient
//! computation; budget enforcement applies a documented slack constant
//! (default 2) reflecting that recursive estimators evaluate each batch at
//! two points.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::{tree_mean, ParamVector};

/// Default slack multiplier for budget enforcement.
pub const DEFAULT_BUDGET_SLACK: u64 = 2;

/// Run-terminating failures raised by the fabric or the optimizers.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("diverged at round {round}: {detail}")]
    Diverged { round: u64, detail: String },
    #[error(
        "budget violation in phase '{phase}' at round {round}: \
         used {used} gradient evaluations, allowed {allowed}"
    )]
    BudgetViolation {
        round: u64,
        phase: &'static str,
        used: u64,
        allowed: u64,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("algorithm/problem mismatch: {0}")]
    Incompatible(String),
}

/// How the per-round gradient budget is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Count only; never abort.
    #[default]
    Off,
    /// Cumulative evals per worker <= budget * rounds * slack.
    Average,
    /// Per-round evals per worker <= budget * slack.
    Strict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationConfig {
    pub workers: usize,
    /// Local computation budget: allowed single-gradient evaluations per
    /// worker per round (on average).
    pub budget: u64,
    pub enforcement: BudgetMode,
    /// Slack multiplier applied in both enforcement modes.
    pub slack: u64,
    /// Root seed of the run's stream tree.
    pub seed: u64,
}

impl FederationConfig {
    pub fn new(workers: usize, budget: u64, seed: u64) -> Self {
        FederationConfig {
            workers,
            budget,
            enforcement: BudgetMode::Off,
            slack: DEFAULT_BUDGET_SLACK,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.workers == 0 {
            return Err(RunError::InvalidParams("workers must be >= 1".into()));
        }
        if self.budget == 0 {
            return Err(RunError::InvalidParams("budget must be >= 1".into()));
        }
        if self.slack == 0 {
            return Err(RunError::InvalidParams("slack must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SnapshotGrad,
    EstimatorGrad,
    RoutineGrad,
    FullGrad,
    StepGrad,
    Aggregate,
    Broadcast,
    Transfer,
    RoundComplete,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SnapshotGrad => "snapshot_grad",
            EventKind::EstimatorGrad => "estimator_grad",
            EventKind::RoutineGrad => "routine_grad",
            EventKind::FullGrad => "full_grad",
            EventKind::StepGrad => "step_grad",
            EventKind::Aggregate => "aggregate",
            EventKind::Broadcast => "broadcast",
            EventKind::Transfer => "transfer",
            EventKind::RoundComplete => "round_complete",
        }
    }
}

/// One entry of the ordered fabric trace.
#[derive(Debug, Clone, Serialize)]
pub struct WallEvent {
    /// Round the event belongs to (the round being formed, 1-based).
    pub round: u64,
    pub kind: EventKind,
    /// Charged worker; `None` for coordinator events.
    pub worker: Option<usize>,
    /// Gradient evaluations or vector payloads, depending on the kind.
    pub count: u64,
    /// Worker's gradient count within the current round, after this event.
    pub grads_this_round: Option<u64>,
    /// Worker's cumulative gradient count, after this event.
    pub cum_grads: Option<u64>,
}

/// Counters for communication rounds and per-worker gradient evaluations.
#[derive(Debug, Clone)]
pub struct RoundLedger {
    workers: usize,
    pub comm_rounds: u64,
    current_round: Vec<u64>,
    cumulative: Vec<u64>,
    /// Per-round per-worker evaluation counts, one entry per completed round.
    pub round_history: Vec<Vec<u64>>,
    /// d-dimensional vector payloads transferred, times their dimension.
    pub bytes_equivalent: u64,
    pub wall_events: Vec<WallEvent>,
}

impl RoundLedger {
    pub fn new(workers: usize) -> Self {
        RoundLedger {
            workers,
            comm_rounds: 0,
            current_round: vec![0; workers],
            cumulative: vec![0; workers],
            round_history: Vec::new(),
            bytes_equivalent: 0,
            wall_events: Vec::new(),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn cumulative(&self, worker: usize) -> u64 {
        self.cumulative[worker]
    }

    pub fn cumulative_total(&self) -> u64 {
        self.cumulative.iter().sum()
    }

    pub fn max_cumulative(&self) -> u64 {
        self.cumulative.iter().copied().max().unwrap_or(0)
    }

    pub fn current_round_counts(&self) -> &[u64] {
        &self.current_round
    }

    fn charge(&mut self, worker: usize, count: u64, kind: EventKind) {
        self.current_round[worker] += count;
        self.cumulative[worker] += count;
        self.wall_events.push(WallEvent {
            round: self.comm_rounds + 1,
            kind,
            worker: Some(worker),
            count,
            grads_this_round: Some(self.current_round[worker]),
            cum_grads: Some(self.cumulative[worker]),
        });
    }

    fn coordinator_event(&mut self, kind: EventKind, count: u64) {
        self.wall_events.push(WallEvent {
            round: self.comm_rounds + 1,
            kind,
            worker: None,
            count,
            grads_this_round: None,
            cum_grads: None,
        });
    }

    fn complete_round(&mut self) {
        self.coordinator_event(EventKind::RoundComplete, 0);
        self.comm_rounds += 1;
        let finished = std::mem::replace(&mut self.current_round, vec![0; self.workers]);
        self.round_history.push(finished);
    }

    /// CSV trace with columns (round, worker, grads_this_round, cum_grads,
    /// event); coordinator events leave the worker columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,worker,grads_this_round,cum_grads,event\n");
        for e in &self.wall_events {
            let worker = e.worker.map(|w| w.to_string()).unwrap_or_default();
            let gtr = e.grads_this_round.map(|v| v.to_string()).unwrap_or_default();
            let cum = e.cum_grads.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.round,
                worker,
                gtr,
                cum,
                e.kind.name()
            ));
        }
        out
    }

    /// JSON-lines trace for external analysis.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.wall_events {
            out.push_str(&serde_json::to_string(e).expect("event serialization"));
            out.push('\n');
        }
        out
    }
}

/// The coordinator-side handle: all aggregation, broadcast and gradient
/// charging flows through it.
#[derive(Debug)]
pub struct Fabric {
    pub cfg: FederationConfig,
    pub ledger: RoundLedger,
}

impl Fabric {
    pub fn new(cfg: FederationConfig) -> Self {
        let ledger = RoundLedger::new(cfg.workers);
        Fabric { cfg, ledger }
    }

    /// Mean of one vector per worker under the fixed pairwise-tree order.
    /// Charges the inbound payloads; the matching broadcast is charged
    /// separately and both belong to the same communication round.
    pub fn aggregate(&mut self, vectors: &[ParamVector]) -> ParamVector {
        assert_eq!(
            vectors.len(),
            self.cfg.workers,
            "aggregate expects one vector per worker"
        );
        let dim = vectors[0].dim();
        assert!(
            vectors.iter().all(|v| v.dim() == dim),
            "dimension mismatch in aggregate"
        );
        self.ledger
            .coordinator_event(EventKind::Aggregate, (vectors.len() * dim) as u64);
        self.ledger.bytes_equivalent += (vectors.len() * dim) as u64;
        tree_mean(vectors)
    }

    /// Charges a broadcast of `v` to every worker.
    pub fn broadcast(&mut self, v: &ParamVector) {
        let payload = (self.cfg.workers * v.dim()) as u64;
        self.ledger.coordinator_event(EventKind::Broadcast, payload);
        self.ledger.bytes_equivalent += payload;
    }

    /// Charges an arbitrary extra payload crossing the current barrier
    /// (e.g. candidate-output vectors that ride along a synchronization).
    pub fn transfer(&mut self, vectors: usize, dim: usize) {
        let payload = (vectors * dim) as u64;
        self.ledger.coordinator_event(EventKind::Transfer, payload);
        self.ledger.bytes_equivalent += payload;
    }

    /// Records `count` single-gradient evaluations by `worker`.
    pub fn charge_gradients(&mut self, worker: usize, count: u64, kind: EventKind) {
        self.ledger.charge(worker, count, kind);
    }

    /// Closes the current communication round and enforces the budget mode.
    pub fn complete_round(&mut self, phase: &'static str) -> Result<(), RunError> {
        self.ledger.complete_round();
        self.assert_budget(phase)
    }

    /// Applies the configured budget check at the current round count.
    pub fn assert_budget(&self, phase: &'static str) -> Result<(), RunError> {
        let allowed_per_round = self.cfg.budget.saturating_mul(self.cfg.slack);
        match self.cfg.enforcement {
            BudgetMode::Off => Ok(()),
            BudgetMode::Average => {
                let allowed = allowed_per_round.saturating_mul(self.ledger.comm_rounds);
                let used = self.ledger.max_cumulative();
                if used > allowed {
                    Err(RunError::BudgetViolation {
                        round: self.ledger.comm_rounds,
                        phase,
                        used,
                        allowed,
                    })
                } else {
                    Ok(())
                }
            }
            BudgetMode::Strict => {
                let last = self
                    .ledger
                    .round_history
                    .last()
                    .map(|r| r.iter().copied().max().unwrap_or(0))
                    .unwrap_or(0);
                if last > allowed_per_round {
                    Err(RunError::BudgetViolation {
                        round: self.ledger.comm_rounds,
                        phase,
                        used: last,
                        allowed: allowed_per_round,
                    })
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Uniform index in `0..universe` drawn from a selector stream.
pub fn pick_uniform(universe: usize, rng: &mut ChaCha8Rng) -> usize {
    assert!(universe >= 1, "pick_uniform needs a nonempty universe");
    rng.gen_range(0..universe)
}
