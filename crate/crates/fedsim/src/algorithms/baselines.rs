//! Round-driven baselines: minibatch SGD, local SGD and SCAFFOLD.
//!
//! All three synchronize by averaging (the non-local method averages
//! gradients, the local methods average models), in contrast to the
//! random-pick synchronization of BVR-L-SGD.

use super::driver::{guard_iterate, RoundOutcome, Simulation};
use super::{draw_batch, AlgoOutput, AlgoParams};
use crate::cluster::{EventKind, RunError};
use crate::rng::purpose;
use crate::vector::ParamVector;

/// One global step per round from the average of per-worker batch
/// gradients; the batch size is the full per-round budget.
pub fn minibatch_sgd(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    params.validate(&sim.fabric.cfg)?;
    sim.require_round_limit()?;
    let workers = sim.problem.workers();
    let mut x = x0.clone();
    let mut round = 0u64;
    loop {
        round += 1;
        let mut grads = Vec::with_capacity(workers);
        for p in 0..workers {
            let local = sim.problem.local(p);
            let mut rng = sim.seeds.stream(&[purpose::INNER, 0, round, p as u64]);
            let batch = draw_batch(local, &mut rng, params.batch);
            sim.fabric
                .charge_gradients(p, batch.cost(local), EventKind::StepGrad);
            grads.push(batch.grad(local, &x));
        }
        let g = sim.fabric.aggregate(&grads);
        x = x.gd_step(params.eta, &g);
        guard_iterate(&x, round, "minibatch sgd update")?;
        sim.fabric.broadcast(&x);
        if sim.end_round(&x, "update")? == RoundOutcome::Stop {
            break;
        }
    }
    Ok(AlgoOutput {
        final_iterate: x,
        sampled_output: None,
    })
}

/// K local SGD steps per worker per round, synchronized by model averaging.
pub fn local_sgd(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    params.validate(&sim.fabric.cfg)?;
    sim.require_round_limit()?;
    let workers = sim.problem.workers();
    let mut x = x0.clone();
    let mut round = 0u64;
    loop {
        round += 1;
        let mut models = Vec::with_capacity(workers);
        for p in 0..workers {
            let local = sim.problem.local(p);
            let mut rng = sim.seeds.stream(&[purpose::ROUTINE, 0, round, p as u64]);
            let mut x_local = x.clone();
            for _ in 0..params.local_steps {
                let batch = draw_batch(local, &mut rng, params.batch);
                sim.fabric
                    .charge_gradients(p, batch.cost(local), EventKind::StepGrad);
                let g = batch.grad(local, &x_local);
                x_local = x_local.gd_step(params.eta, &g);
            }
            guard_iterate(&x_local, round, "local sgd worker")?;
            models.push(x_local);
        }
        x = sim.fabric.aggregate(&models);
        sim.fabric.broadcast(&x);
        if sim.end_round(&x, "sync")? == RoundOutcome::Stop {
            break;
        }
    }
    Ok(AlgoOutput {
        final_iterate: x,
        sampled_output: None,
    })
}

/// SCAFFOLD with the cheaper control-variate rule: workers correct each
/// local step by `-c_p + c` and refresh their control variate from the
/// distance traveled, `c_p <- c_p - c + (x - y_p)/(K eta)`.
pub fn scaffold(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    params.validate(&sim.fabric.cfg)?;
    sim.require_round_limit()?;
    let workers = sim.problem.workers();
    let dim = sim.problem.dim();
    let mut x = x0.clone();
    let mut c_local = vec![ParamVector::zeros(dim); workers];
    let mut c_global = ParamVector::zeros(dim);
    let mut round = 0u64;
    loop {
        round += 1;
        let mut models = Vec::with_capacity(workers);
        for p in 0..workers {
            let local = sim.problem.local(p);
            let mut rng = sim.seeds.stream(&[purpose::ROUTINE, 0, round, p as u64]);
            let mut y = x.clone();
            for _ in 0..params.local_steps {
                let batch = draw_batch(local, &mut rng, params.batch);
                sim.fabric
                    .charge_gradients(p, batch.cost(local), EventKind::StepGrad);
                let g = batch.grad(local, &y);
                // v = g - c_p + c
                let v = ParamVector::recursion_update(&g, &c_local[p], &c_global);
                y = y.gd_step(params.eta, &v);
            }
            guard_iterate(&y, round, "scaffold worker")?;
            let mut travel = x.sub(&y);
            travel.scale_assign(1.0 / (params.local_steps as f64 * params.eta));
            // c_p <- c_p - c + (x - y)/(K eta)
            c_local[p] = ParamVector::recursion_update(&c_local[p], &c_global, &travel);
            models.push(y);
        }
        x = sim.fabric.aggregate(&models);
        // Control variates ride the same barrier as the models.
        sim.fabric.transfer(workers, dim);
        c_global = sim.fabric.aggregate(&c_local);
        sim.fabric.broadcast(&x);
        if sim.end_round(&x, "sync")? == RoundOutcome::Stop {
            break;
        }
    }
    Ok(AlgoOutput {
        final_iterate: x,
        sampled_output: None,
    })
}
