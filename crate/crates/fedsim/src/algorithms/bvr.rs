//! Bias-variance reduced local SGD, in its original form (every worker runs
//! the local routine, one worker's model is then picked uniformly at random)
//! and the practical form (the worker is picked first and runs the routine
//! alone, one aggregation plus one broadcast per round).
//!
//! Synchronization picks a single worker's model; it never averages models.
//! Per stage: one snapshot round where workers contribute (near-)exact local
//! gradients, then T inner rounds. Each inner round refreshes the per-worker
//! recursive estimator chains with a `K*b`-sample batch evaluated at the two
//! latest synchronized iterates, aggregates them, and runs the local
//! routine from the newest iterate.

use rand_chacha::ChaCha8Rng;

use super::driver::{RoundOutcome, Simulation};
use super::routine::local_routine;
use super::{draw_batch, snapshot_uses_full, AlgoOutput, AlgoParams};
use crate::cluster::{pick_uniform, EventKind, RunError};
use crate::rng::{purpose, SeedTree};
use crate::vector::ParamVector;

/// Per-worker snapshot gradients at `x`: exact local gradients when the
/// snapshot batch covers the mean local support, IID batches otherwise.
pub(crate) fn stage_snapshot(
    sim: &mut Simulation,
    stage: u64,
    x: &ParamVector,
    snapshot_batch: u64,
) -> Vec<ParamVector> {
    let full = snapshot_uses_full(sim.problem, snapshot_batch);
    let workers = sim.problem.workers();
    let mut grads = Vec::with_capacity(workers);
    for p in 0..workers {
        let local = sim.problem.local(p);
        let g = if full {
            let m = local.support_size().expect("full snapshot needs finite support");
            sim.fabric.charge_gradients(p, m, EventKind::SnapshotGrad);
            local.full_grad(x)
        } else {
            let mut rng: ChaCha8Rng = sim.seeds.stream(&[purpose::SNAPSHOT, stage, p as u64]);
            let ids = local.sample(&mut rng, snapshot_batch as usize);
            sim.fabric
                .charge_gradients(p, snapshot_batch, EventKind::SnapshotGrad);
            local.batch_grad(x, &ids)
        };
        grads.push(g);
    }
    grads
}

/// Advances each worker's recursive estimator chain with a fresh
/// `K*b`-sample batch evaluated at the two latest synchronized iterates,
/// then aggregates.
pub(crate) fn estimator_round(
    sim: &mut Simulation,
    chains: &mut [ParamVector],
    stage: u64,
    round: u64,
    batch_size: u64,
    x_prev: &ParamVector,
    x_prev2: &ParamVector,
) -> ParamVector {
    let workers = sim.problem.workers();
    for (p, chain) in chains.iter_mut().enumerate().take(workers) {
        let local = sim.problem.local(p);
        let mut rng = sim.seeds.stream(&[purpose::INNER, stage, round, p as u64]);
        let batch = draw_batch(local, &mut rng, batch_size);
        let g_curr = batch.grad(local, x_prev);
        let g_prev = batch.grad(local, x_prev2);
        sim.fabric
            .charge_gradients(p, 2 * batch.cost(local), EventKind::EstimatorGrad);
        *chain = ParamVector::recursion_update(&g_curr, &g_prev, chain);
    }
    let aggregated = sim.fabric.aggregate(chains);
    sim.fabric.broadcast(&aggregated);
    aggregated
}

enum Variant {
    /// Run the routine on every worker, pick afterwards, track candidate
    /// outputs.
    Original,
    /// Pick the worker first and run the routine only there.
    Practical,
}

fn run(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
    variant: Variant,
) -> Result<AlgoOutput, RunError> {
    params.validate(&sim.fabric.cfg)?;
    let stages = params.resolved_stages()?;
    let inner_rounds = match variant {
        // The practical schedule always derives T.
        Variant::Practical => {
            let kb = params.local_steps * params.batch;
            1 + params.snapshot_batch.div_ceil(kb)
        }
        Variant::Original => params.effective_inner_rounds(),
    };
    let workers = sim.problem.workers();
    let dim = sim.problem.dim();
    let seeds: SeedTree = sim.seeds;
    let estimator_batch = params.local_steps * params.batch;

    let mut x_tilde = x0.clone();
    let mut stage_candidates: Vec<ParamVector> = Vec::new();
    let mut stopped = false;

    'stages: for s in 1..=stages {
        let snaps = stage_snapshot(sim, s, &x_tilde, params.snapshot_batch);
        let v0 = sim.fabric.aggregate(&snaps);
        sim.fabric.broadcast(&v0);
        // Workers keep their own chains seeded from their own snapshot
        // gradients; the aggregate of the chains is the shared estimate.
        let mut chains = snaps;
        if sim.end_round(&x_tilde, "snapshot")? == RoundOutcome::Stop {
            stopped = true;
            break 'stages;
        }

        let mut x_prev = x_tilde.clone();
        let mut x_prev2 = x_tilde.clone();
        let mut round_candidates: Vec<ParamVector> = Vec::new();
        for t in 1..=inner_rounds {
            let v_t = estimator_round(sim, &mut chains, s, t, estimator_batch, &x_prev, &x_prev2);

            let (x_next, candidate) = match variant {
                Variant::Original => {
                    let mut results = Vec::with_capacity(workers);
                    for p in 0..workers {
                        let mut batch_rng = seeds.stream(&[purpose::ROUTINE, s, t, p as u64]);
                        let mut select_rng = seeds.stream(&[purpose::SELECT_STEP, s, t, p as u64]);
                        results.push(local_routine(
                            sim.problem.local(p),
                            &mut sim.fabric,
                            p,
                            &x_prev,
                            params.eta,
                            &v_t,
                            params.batch,
                            params.local_steps,
                            &mut batch_rng,
                            &mut select_rng,
                        )?);
                    }
                    // Models and candidate outputs ride the same barrier.
                    sim.fabric.transfer(2 * workers, dim);
                    let mut sel = seeds.stream(&[purpose::SELECT_WORKER, s, t]);
                    let picked = pick_uniform(workers, &mut sel);
                    if sim.opts.capture_iterates {
                        sim.worker_round_outputs
                            .push(results.iter().map(|r| r.final_iterate.clone()).collect());
                    }
                    let x_next = results[picked].final_iterate.clone();
                    let candidate = results[picked].sampled_iterate.clone();
                    (x_next, Some(candidate))
                }
                Variant::Practical => {
                    let mut sel = seeds.stream(&[purpose::SELECT_WORKER, s, t]);
                    let picked = pick_uniform(workers, &mut sel);
                    let mut batch_rng = seeds.stream(&[purpose::ROUTINE, s, t, picked as u64]);
                    let mut select_rng = seeds.stream(&[purpose::SELECT_STEP, s, t, picked as u64]);
                    let result = local_routine(
                        sim.problem.local(picked),
                        &mut sim.fabric,
                        picked,
                        &x_prev,
                        params.eta,
                        &v_t,
                        params.batch,
                        params.local_steps,
                        &mut batch_rng,
                        &mut select_rng,
                    )?;
                    // Route the picked model back through the coordinator.
                    sim.fabric.transfer(1, dim);
                    (result.final_iterate, None)
                }
            };
            sim.fabric.broadcast(&x_next);
            x_prev2 = x_prev;
            x_prev = x_next;
            if let Some(c) = candidate {
                round_candidates.push(c);
            }
            if sim.end_round(&x_prev, "inner")? == RoundOutcome::Stop {
                x_tilde = x_prev.clone();
                push_stage_candidate(&seeds, s, &round_candidates, &mut stage_candidates);
                stopped = true;
                break 'stages;
            }
        }
        x_tilde = x_prev.clone();
        push_stage_candidate(&seeds, s, &round_candidates, &mut stage_candidates);
    }
    let _ = stopped;

    let sampled_output = match variant {
        Variant::Practical => None,
        Variant::Original if stage_candidates.is_empty() => None,
        Variant::Original => {
            let mut sel = seeds.stream(&[purpose::SELECT_STAGE]);
            Some(stage_candidates[pick_uniform(stage_candidates.len(), &mut sel)].clone())
        }
    };
    Ok(AlgoOutput {
        final_iterate: x_tilde,
        sampled_output,
    })
}

fn push_stage_candidate(
    seeds: &SeedTree,
    stage: u64,
    round_candidates: &[ParamVector],
    stage_candidates: &mut Vec<ParamVector>,
) {
    if round_candidates.is_empty() {
        return;
    }
    let mut sel = seeds.stream(&[purpose::SELECT_ROUND, stage]);
    let t_hat = pick_uniform(round_candidates.len(), &mut sel);
    stage_candidates.push(round_candidates[t_hat].clone());
}

/// The original form: per inner round, every worker runs the local routine
/// and one worker's outputs are adopted.
pub fn bvr_l_sgd(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    run(sim, x0, params, Variant::Original)
}

/// The practical form: T is derived from the snapshot-to-batch ratio, the
/// worker is picked before its routine runs, and the final model is
/// returned without candidate tracking.
pub fn bvr_l_sgd_practical(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    run(sim, x0, params, Variant::Practical)
}
