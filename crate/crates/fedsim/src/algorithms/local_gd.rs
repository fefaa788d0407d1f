//! Deterministic local gradient descent: K exact local-gradient steps per
//! worker per round, synchronized by averaging the workers' iterates at one
//! shared uniformly drawn local step.

use super::driver::{guard_iterate, RoundOutcome, Simulation};
use super::{AlgoOutput, AlgoParams};
use crate::cluster::{pick_uniform, EventKind, RunError};
use crate::rng::purpose;
use crate::vector::ParamVector;

pub fn local_gd(
    sim: &mut Simulation,
    x0: &ParamVector,
    params: &AlgoParams,
) -> Result<AlgoOutput, RunError> {
    params.validate(&sim.fabric.cfg)?;
    sim.require_round_limit()?;
    let workers = sim.problem.workers();
    if sim
        .problem
        .locals()
        .iter()
        .any(|l| l.support_size().is_none())
    {
        return Err(RunError::Incompatible(
            "local GD needs finite supports for exact local gradients".into(),
        ));
    }
    let steps = params.local_steps;
    let mut x = x0.clone();
    let mut history: Vec<ParamVector> = Vec::new();
    let mut round = 0u64;
    loop {
        round += 1;
        // Each worker's full local trajectory; the sync point is drawn
        // after the fact, shared across workers.
        let mut trajectories = Vec::with_capacity(workers);
        for p in 0..workers {
            let local = sim.problem.local(p);
            let m = local.support_size().unwrap();
            let mut x_local = x.clone();
            let mut traj = Vec::with_capacity(steps as usize);
            for _ in 0..steps {
                sim.fabric.charge_gradients(p, m, EventKind::FullGrad);
                let g = local.full_grad(&x_local);
                x_local = x_local.gd_step(params.eta, &g);
                traj.push(x_local.clone());
            }
            guard_iterate(&x_local, round, "local gd worker")?;
            trajectories.push(traj);
        }
        let mut sel = sim.seeds.stream(&[purpose::SELECT_STEP, 0, round]);
        let k_hat = pick_uniform(steps as usize, &mut sel);
        let picked: Vec<ParamVector> = trajectories
            .iter()
            .map(|traj| traj[k_hat].clone())
            .collect();
        x = sim.fabric.aggregate(&picked);
        sim.fabric.broadcast(&x);
        history.push(x.clone());
        if sim.end_round(&x, "sync")? == RoundOutcome::Stop {
            break;
        }
    }
    let mut sel = sim.seeds.stream(&[purpose::SELECT_ROUND, 0]);
    let t_hat = pick_uniform(history.len(), &mut sel);
    Ok(AlgoOutput {
        final_iterate: x,
        sampled_output: Some(history[t_hat].clone()),
    })
}
