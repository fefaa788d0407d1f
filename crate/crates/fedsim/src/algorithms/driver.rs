//! The per-run execution context: fabric, metric collection, stopping rules
//! and the divergence guard.

use crate::cluster::{Fabric, FederationConfig, RunError};
use crate::problems::Problem;
use crate::record::MetricRow;
use crate::rng::SeedTree;
use crate::vector::ParamVector;

/// Iterates with Euclidean norm beyond this terminate the run as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TargetReached,
    RoundLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundOutcome {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Stop once this many communication rounds completed.
    pub total_rounds: Option<u64>,
    /// Metric evaluation cadence in rounds.
    pub eval_every: u64,
    /// Stop once the squared global gradient norm falls to this value
    /// (checked at evaluation points).
    pub target_grad_norm2: Option<f64>,
    /// Keep each round's synchronized iterate (and, for BVR-L-SGD, the
    /// per-worker routine outputs) for equivalence checks.
    pub capture_iterates: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            total_rounds: None,
            eval_every: 1,
            target_grad_norm2: None,
            capture_iterates: false,
        }
    }
}

/// Execution state of one run: the problem, the metered fabric, derived
/// random streams and the collected metric rows.
pub struct Simulation<'a> {
    pub problem: &'a Problem,
    pub fabric: Fabric,
    pub seeds: SeedTree,
    pub opts: SimOptions,
    pub rows: Vec<MetricRow>,
    pub stop_reason: Option<StopReason>,
    /// Synchronized iterate after each completed round, when captured.
    pub iterates: Vec<ParamVector>,
    /// Per-round per-worker routine outputs, when captured (BVR-L-SGD).
    pub worker_round_outputs: Vec<Vec<ParamVector>>,
}

impl<'a> Simulation<'a> {
    pub fn new(problem: &'a Problem, fed: FederationConfig, opts: SimOptions) -> Self {
        assert!(opts.eval_every >= 1, "eval_every must be >= 1");
        let seeds = SeedTree::new(fed.seed);
        Simulation {
            problem,
            fabric: Fabric::new(fed),
            seeds,
            opts,
            rows: Vec::new(),
            stop_reason: None,
            iterates: Vec::new(),
            worker_round_outputs: Vec::new(),
        }
    }

    /// Records the round-0 evaluation row at the initial iterate.
    pub fn record_initial(&mut self, x0: &ParamVector) {
        debug_assert!(self.rows.is_empty());
        self.record_eval(x0);
    }

    fn record_eval(&mut self, x: &ParamVector) {
        let train = self.problem.train_metrics(x);
        let test = self.problem.test_metrics(x);
        let grad = self.problem.global_grad(x);
        self.rows.push(MetricRow {
            round: self.fabric.ledger.comm_rounds,
            cum_grad_evals: self.fabric.ledger.cumulative_total(),
            train_loss: train.loss,
            train_acc: train.accuracy.unwrap_or(f64::NAN),
            test_loss: test.map(|m| m.loss).unwrap_or(f64::NAN),
            test_acc: test.and_then(|m| m.accuracy).unwrap_or(f64::NAN),
            grad_norm2: grad.norm_sq(),
        });
    }

    /// Closes one communication round at synchronized iterate `x`: budget
    /// check, divergence guard, metric evaluation on cadence, stop rules.
    pub fn end_round(
        &mut self,
        x: &ParamVector,
        phase: &'static str,
    ) -> Result<RoundOutcome, RunError> {
        self.fabric.complete_round(phase)?;
        let round = self.fabric.ledger.comm_rounds;
        guard_iterate(x, round, phase)?;
        if self.opts.capture_iterates {
            self.iterates.push(x.clone());
        }
        let mut evaluated = false;
        if round % self.opts.eval_every == 0 {
            self.record_eval(x);
            evaluated = true;
        }
        if let Some(target) = self.opts.target_grad_norm2 {
            if evaluated && self.rows.last().map(|r| r.grad_norm2 <= target) == Some(true) {
                self.stop_reason = Some(StopReason::TargetReached);
                return Ok(RoundOutcome::Stop);
            }
        }
        if let Some(limit) = self.opts.total_rounds {
            if round >= limit {
                if !evaluated {
                    self.record_eval(x);
                }
                self.stop_reason = Some(StopReason::RoundLimit);
                return Ok(RoundOutcome::Stop);
            }
        }
        Ok(RoundOutcome::Continue)
    }

    /// Round-driven algorithms (no stage structure) need an explicit stop
    /// rule or they would never terminate.
    pub fn require_round_limit(&self) -> Result<(), RunError> {
        if self.opts.total_rounds.is_none() {
            return Err(RunError::InvalidParams(
                "this algorithm is round-driven; set total_rounds".into(),
            ));
        }
        Ok(())
    }
}

/// Divergence guard: non-finite coordinates or a runaway norm abort the run
/// with a learning-rate diagnostic.
pub(crate) fn guard_iterate(
    x: &ParamVector,
    round: u64,
    context: &'static str,
) -> Result<(), RunError> {
    if !x.is_finite() {
        return Err(RunError::Diverged {
            round,
            detail: format!("non-finite iterate in {context} (learning rate too large?)"),
        });
    }
    let norm = x.norm();
    if norm > DIVERGENCE_NORM {
        return Err(RunError::Diverged {
            round,
            detail: format!("iterate norm {norm:.3e} exceeds {DIVERGENCE_NORM:.0e} in {context}"),
        });
    }
    Ok(())
}
