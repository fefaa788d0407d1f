//! The local worker routine: K steps of the recursive variance-reduced
//! update seeded by an aggregated estimate.
//!
//! Step k draws one fresh batch, evaluates it at both the current and the
//! previous iterate, and folds the difference into the running estimator:
//! `v_k = g_k(x_{k-1}) - g_k(x_{k-2}) + v_{k-1}`, then `x_k = x_{k-1} - eta
//! v_k`. The first step evaluates both points at the shared start iterate;
//! the difference cancels exactly, which keeps the code a direct
//! transcription at the cost of one extra batch evaluation.

use rand_chacha::ChaCha8Rng;

use super::driver::guard_iterate;
use super::{draw_batch, Batch};
use crate::cluster::{pick_uniform, EventKind, Fabric, RunError};
use crate::problems::LocalObjective;
use crate::vector::ParamVector;

#[derive(Debug, Clone)]
pub struct RoutineResult {
    /// x_K, the final local iterate.
    pub final_iterate: ParamVector,
    /// x_k for k drawn uniformly from 1..=K.
    pub sampled_iterate: ParamVector,
    /// Single-gradient evaluations consumed (2 per batch example per step).
    pub grads_used: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn local_routine(
    obj: &dyn LocalObjective,
    fabric: &mut Fabric,
    worker: usize,
    x0: &ParamVector,
    eta: f64,
    v0: &ParamVector,
    batch: u64,
    steps: u64,
    batch_rng: &mut ChaCha8Rng,
    select_rng: &mut ChaCha8Rng,
) -> Result<RoutineResult, RunError> {
    assert!(steps >= 1 && batch >= 1, "routine needs steps >= 1, batch >= 1");
    let picked_step = pick_uniform(steps as usize, select_rng) as u64 + 1;
    let mut x_prev2 = x0.clone();
    let mut x_prev = x0.clone();
    let mut v = v0.clone();
    let mut sampled = None;
    let mut grads_used = 0u64;
    let round = fabric.ledger.comm_rounds + 1;
    for k in 1..=steps {
        let b: Batch = draw_batch(obj, batch_rng, batch);
        let g_curr = b.grad(obj, &x_prev);
        let g_prev = b.grad(obj, &x_prev2);
        let cost = 2 * b.cost(obj);
        fabric.charge_gradients(worker, cost, EventKind::RoutineGrad);
        grads_used += cost;
        v = ParamVector::recursion_update(&g_curr, &g_prev, &v);
        let x = x_prev.gd_step(eta, &v);
        guard_iterate(&x, round, "local routine")?;
        x_prev2 = x_prev;
        x_prev = x;
        if k == picked_step {
            sampled = Some(x_prev.clone());
        }
    }
    Ok(RoutineResult {
        final_iterate: x_prev,
        sampled_iterate: sampled.expect("picked step within 1..=K"),
        grads_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::FederationConfig;
    use crate::problems::gen_quadratic_family;
    use crate::rng::{purpose, SeedTree};

    fn fresh_fabric(workers: usize) -> Fabric {
        Fabric::new(FederationConfig::new(workers, 1_000_000, 0))
    }

    #[test]
    fn single_step_reduces_to_one_gd_step_with_v0() {
        let problem = gen_quadratic_family(2, 6, 0.3, 1.0, 0.1, 4).unwrap();
        let tree = SeedTree::new(9);
        let mut fabric = fresh_fabric(2);
        let mut batch_rng = tree.stream(&[purpose::ROUTINE, 1, 1, 0]);
        let mut select_rng = tree.stream(&[purpose::SELECT_STEP, 1, 1, 0]);
        let x0 = ParamVector::new(vec![0.5; 6]);
        let v0 = problem.global_grad(&x0);
        let eta = 0.2;
        let result = local_routine(
            problem.local(0),
            &mut fabric,
            0,
            &x0,
            eta,
            &v0,
            4,
            1,
            &mut batch_rng,
            &mut select_rng,
        )
        .unwrap();
        // k = 1 evaluates the same batch at the same point twice, so
        // v_1 = v_0 and x_1 = x_0 - eta v_0 bit for bit.
        let expected = x0.gd_step(eta, &v0);
        assert!(result.final_iterate.bits_eq(&expected));
        assert!(result.sampled_iterate.bits_eq(&expected));
        assert_eq!(result.grads_used, 2 * 4);
    }

    #[test]
    fn full_batches_telescope_to_exact_local_gradients() {
        // With zeta = 0, full batches and v0 = grad f(x0), the estimator
        // tracks grad f(x_{k-1}) for every k.
        let problem = gen_quadratic_family(3, 5, 0.0, 1.0, 0.2, 11).unwrap();
        let local = problem.local(0);
        let m = local.support_size().unwrap();
        let tree = SeedTree::new(1);
        let mut fabric = fresh_fabric(3);
        let mut batch_rng = tree.stream(&[purpose::ROUTINE, 1, 1, 0]);
        let mut select_rng = tree.stream(&[purpose::SELECT_STEP, 1, 1, 0]);
        let x0 = ParamVector::new(vec![1.0, -0.5, 0.25, 2.0, 0.0]);
        let v0 = problem.global_grad(&x0);
        let eta = 0.3;
        let steps = 6;
        let result = local_routine(
            local, &mut fabric, 0, &x0, eta, &v0, m, steps, &mut batch_rng, &mut select_rng,
        )
        .unwrap();
        // With identical Hessians the recursion telescopes the local batch
        // differences onto the global gradient: v_k = grad f(x_{k-1}).
        let mut x = x0.clone();
        for _ in 0..steps {
            let g = problem.global_grad(&x);
            x = x.gd_step(eta, &g);
        }
        let rel = result.final_iterate.distance(&x) / x.norm().max(1e-300);
        assert!(rel <= 1e-12, "relative deviation {rel}");
        assert_eq!(result.grads_used, 2 * steps * m);
    }

    #[test]
    fn nan_learning_rate_blowup_aborts_with_divergence() {
        let problem = gen_quadratic_family(2, 4, 0.0, 1.0, 0.5, 2).unwrap();
        let tree = SeedTree::new(3);
        let mut fabric = fresh_fabric(2);
        let mut batch_rng = tree.stream(&[purpose::ROUTINE, 1, 1, 0]);
        let mut select_rng = tree.stream(&[purpose::SELECT_STEP, 1, 1, 0]);
        let x0 = ParamVector::new(vec![1e3; 4]);
        let v0 = problem.global_grad(&x0);
        let err = local_routine(
            problem.local(0),
            &mut fabric,
            0,
            &x0,
            1e6,
            &v0,
            2,
            64,
            &mut batch_rng,
            &mut select_rng,
        )
        .unwrap_err();
        assert!(matches!(err, RunError::Diverged { .. }));
    }

    #[test]
    fn expected_descent_is_bounded_by_the_estimator_error_term() {
        // Over repeated seeds, f(x_K) <= f(x_0) + 2.5 eta K ||v0 - grad
        // f(x0)||^2 in the mean: descent up to the variance-bias price of
        // the seed estimate.
        let problem = gen_quadratic_family(4, 8, 0.2, 1.0, 0.1, 21).unwrap();
        let eta = 0.1; // below the 1/(4L) guard with margin for sampling noise
        let steps = 8;
        let batch = 8;
        let x0 = ParamVector::new(vec![0.7; 8]);
        let exact = problem.global_grad(&x0);
        // Perturbed seed estimate with a known offset.
        let mut v0 = exact.clone();
        v0[0] += 0.3;
        v0[3] -= 0.2;
        let err2 = v0.distance(&exact).powi(2);
        let f0 = problem.train_metrics(&x0).loss;

        let mut mean_final = 0.0;
        let trials = 100;
        for seed in 0..trials {
            let tree = SeedTree::new(seed);
            let mut fabric = fresh_fabric(4);
            let worker = (seed % 4) as usize;
            let mut batch_rng = tree.stream(&[purpose::ROUTINE, 1, 1, worker as u64]);
            let mut select_rng = tree.stream(&[purpose::SELECT_STEP, 1, 1, worker as u64]);
            let result = local_routine(
                problem.local(worker),
                &mut fabric,
                worker,
                &x0,
                eta,
                &v0,
                batch,
                steps,
                &mut batch_rng,
                &mut select_rng,
            )
            .unwrap();
            mean_final += problem.train_metrics(&result.final_iterate).loss;
        }
        mean_final /= trials as f64;
        let bound = f0 + 2.5 * eta * steps as f64 * err2;
        assert!(
            mean_final <= bound,
            "mean f(x_K) = {mean_final} exceeds {bound}"
        );
    }
}
