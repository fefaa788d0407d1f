//! Minibatch SARAH over the federation: a periodic snapshot gradient and a
//! recursive estimator refreshed each round with one batch per worker,
//! evaluated at the two latest models.
//!
//! Workers keep their own recursion chains (seeded from their own snapshot
//! gradients); the server averages the chains, which in exact arithmetic is
//! the textbook recursion `v_t = mean_p(g_t^p(x_{t-1}) - g_t^p(x_{t-2})) +
//! v_{t-1}`. The fixed reduction order makes the K = 1 specialization of
//! BVR-L-SGD coincide with this implementation bit for bit under shared
//! sampling streams.

use super::bvr::{estimator_round, stage_snapshot};
use super::driver::{guard_iterate, RoundOutcome, Simulation};
use super::{AlgoOutput, AlgoParams};
use crate::cluster::RunError;
use crate::vector::ParamVector;

pub fn minibatch_sarah(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    params.validate(&sim.fabric.cfg)?;
    let stages = params.resolved_stages()?;
    let inner_rounds = params.effective_inner_rounds();
    let batch = params.batch;

    let mut x_tilde = x0.clone();
    'stages: for s in 1..=stages {
        let snaps = stage_snapshot(sim, s, &x_tilde, params.snapshot_batch);
        let v0 = sim.fabric.aggregate(&snaps);
        sim.fabric.broadcast(&v0);
        let mut chains = snaps;
        if sim.end_round(&x_tilde, "snapshot")? == RoundOutcome::Stop {
            break 'stages;
        }
        let mut x_prev = x_tilde.clone();
        let mut x_prev2 = x_tilde.clone();
        for t in 1..=inner_rounds {
            let v_t = estimator_round(sim, &mut chains, s, t, batch, &x_prev, &x_prev2);
            let x_next = x_prev.gd_step(params.eta, &v_t);
            guard_iterate(&x_next, sim.fabric.ledger.comm_rounds + 1, "sarah update")?;
            sim.fabric.broadcast(&x_next);
            x_prev2 = x_prev;
            x_prev = x_next;
            if sim.end_round(&x_prev, "update")? == RoundOutcome::Stop {
                x_tilde = x_prev;
                break 'stages;
            }
        }
        x_tilde = x_prev;
    }
    Ok(AlgoOutput {
        final_iterate: x_tilde,
        sampled_output: None,
    })
}
