//! The optimizers: BVR-L-SGD (original and practical form), its local
//! routine, and the baselines (minibatch SGD, minibatch SARAH, local SGD,
//! local GD, SCAFFOLD).
//!
//! Every algorithm runs against a [`Simulation`]: it charges gradient
//! evaluations through the fabric, closes communication rounds through
//! `end_round`, and derives all randomness from the simulation's seed tree,
//! keyed by `(purpose, stage, round, worker)`. Keyed streams are what makes
//! the coupled-run equivalences exact: an algorithm variant that skips a
//! computation cannot shift any other draw.

mod baselines;
mod bvr;
mod driver;
mod local_gd;
mod routine;
mod sarah;

pub use baselines::{local_sgd, minibatch_sgd, scaffold};
pub use bvr::{bvr_l_sgd, bvr_l_sgd_practical};
pub use driver::{RoundOutcome, SimOptions, Simulation, StopReason, DIVERGENCE_NORM};
pub use local_gd::local_gd;
pub use routine::{local_routine, RoutineResult};
pub use sarah::minibatch_sarah;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{FederationConfig, RunError};
use crate::problems::{LocalObjective, Problem};
use crate::vector::ParamVector;

/// Optimizer parameters shared by the algorithm family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgoParams {
    /// Learning rate.
    pub eta: f64,
    /// Local steps per routine invocation (K).
    pub local_steps: u64,
    /// Local minibatch size (b); the full per-round batch for non-local
    /// methods.
    pub batch: u64,
    /// Snapshot batch size (b~); snapshots switch to exact local gradients
    /// once it reaches the mean local support size.
    pub snapshot_batch: u64,
    /// Inner rounds per stage (T). Ignored when `auto_inner_rounds` is set.
    #[serde(default)]
    pub inner_rounds: u64,
    /// Stages (S); 0 lets the harness derive it from the round budget.
    #[serde(default)]
    pub stages: u64,
    /// Derive T = ceil(1 + b~/(K b)).
    #[serde(default)]
    pub auto_inner_rounds: bool,
}

impl AlgoParams {
    /// The per-stage inner round count, applying the practical schedule
    /// `T = ceil(1 + b~/(K b))` when requested.
    pub fn effective_inner_rounds(&self) -> u64 {
        if self.auto_inner_rounds {
            let kb = self.local_steps * self.batch;
            1 + self.snapshot_batch.div_ceil(kb)
        } else {
            self.inner_rounds
        }
    }

    pub fn validate(&self, fed: &FederationConfig) -> Result<(), RunError> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(RunError::InvalidParams("eta must be positive".into()));
        }
        if self.local_steps == 0 || self.batch == 0 {
            return Err(RunError::InvalidParams(
                "local_steps and batch must be >= 1".into(),
            ));
        }
        if self.snapshot_batch == 0 {
            return Err(RunError::InvalidParams("snapshot_batch must be >= 1".into()));
        }
        if !self.auto_inner_rounds && self.inner_rounds == 0 {
            return Err(RunError::InvalidParams(
                "inner_rounds must be >= 1 (or auto)".into(),
            ));
        }
        if fed.enforcement != crate::cluster::BudgetMode::Off
            && self.local_steps * self.batch > fed.budget
        {
            return Err(RunError::InvalidParams(format!(
                "K*b = {} exceeds the per-round budget {}",
                self.local_steps * self.batch,
                fed.budget
            )));
        }
        Ok(())
    }

    fn resolved_stages(&self) -> Result<u64, RunError> {
        if self.stages == 0 {
            Err(RunError::InvalidParams(
                "stage count not resolved; set stages >= 1".into(),
            ))
        } else {
            Ok(self.stages)
        }
    }
}

/// Final and sampled iterates of a run.
#[derive(Debug, Clone)]
pub struct AlgoOutput {
    /// The last synchronized model.
    pub final_iterate: ParamVector,
    /// The uniformly sampled candidate output, where the algorithm defines
    /// one.
    pub sampled_output: Option<ParamVector>,
}

/// A drawn minibatch; `Full` marks the deterministic full-support batch the
/// samplers switch to once the requested size reaches the support.
pub(crate) enum Batch {
    Full,
    Ids(Vec<u64>),
}

impl Batch {
    pub(crate) fn cost(&self, obj: &dyn LocalObjective) -> u64 {
        match self {
            Batch::Full => obj.support_size().expect("full batch on finite support"),
            Batch::Ids(ids) => ids.len() as u64,
        }
    }

    pub(crate) fn grad(&self, obj: &dyn LocalObjective, x: &ParamVector) -> ParamVector {
        match self {
            Batch::Full => obj.full_grad(x),
            Batch::Ids(ids) => obj.batch_grad(x, ids),
        }
    }
}

pub(crate) fn draw_batch(obj: &dyn LocalObjective, rng: &mut ChaCha8Rng, want: u64) -> Batch {
    match obj.support_size() {
        Some(m) if want >= m => Batch::Full,
        _ => Batch::Ids(obj.sample(rng, want as usize)),
    }
}

/// Step size from the convergence theory, with the explicit 1/(4L) descent
/// guard as the leading factor:
/// `eta = (1/4) min(1/L, 1/(K zeta), sqrt(b)/(sqrt(K) L), sqrt(P b)/(sqrt(K T) L))`.
pub fn theoretical_eta(
    smoothness: f64,
    hetero: f64,
    workers: usize,
    local_steps: u64,
    batch: u64,
    inner_rounds: u64,
) -> f64 {
    let l = smoothness;
    let k = local_steps as f64;
    let b = batch as f64;
    let p = workers as f64;
    let t = inner_rounds as f64;
    let mut eta = 1.0 / l;
    if hetero > 0.0 {
        eta = eta.min(1.0 / (k * hetero));
    }
    eta = eta.min(b.sqrt() / (k.sqrt() * l));
    eta = eta.min((p * b).sqrt() / ((k * t).sqrt() * l));
    0.25 * eta
}

/// Parameters for a given budget under the paper-style split (K = B/16,
/// b = 16 for local methods) with exact snapshots and the derived inner
/// round count; the step size follows [`theoretical_eta`].
pub fn budget_schedule(problem: &Problem, budget: u64) -> AlgoParams {
    let batch = budget.min(16);
    let local_steps = (budget / batch).max(1);
    let per_worker = problem
        .locals()
        .iter()
        .filter_map(|l| l.support_size())
        .max()
        .unwrap_or(budget);
    let snapshot_batch = per_worker;
    let mut params = AlgoParams {
        eta: 0.1,
        local_steps,
        batch,
        snapshot_batch,
        inner_rounds: 0,
        stages: 0,
        auto_inner_rounds: true,
    };
    params.eta = theoretical_eta(
        problem.meta.smoothness,
        problem.meta.hetero,
        problem.workers(),
        local_steps,
        batch,
        params.effective_inner_rounds(),
    );
    params
}

/// The snapshot branch condition: exact local gradients once the snapshot
/// batch reaches the mean local support size.
pub(crate) fn snapshot_uses_full(problem: &Problem, snapshot_batch: u64) -> bool {
    let mut total: u64 = 0;
    for local in problem.locals() {
        match local.support_size() {
            Some(m) => total += m,
            None => return false,
        }
    }
    snapshot_batch * problem.workers() as u64 >= total
}
