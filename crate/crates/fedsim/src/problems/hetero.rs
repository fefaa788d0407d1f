//! Measurement of the second-order heterogeneity of a problem: the largest
//! pairwise spectral distance between local Hessians.
//!
//! Quadratic families are measured exactly by eigendecomposition of the
//! difference matrices. Everything else gets a lower bound from power
//! iteration on finite-difference Hessian-vector products.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::quadratic::spectral_norm_sym;
use super::{LocalObjective, Problem};
use crate::rng::{purpose, SeedTree};
use crate::vector::ParamVector;

/// Step used by the finite-difference Hessian-vector products.
const FD_EPS: f64 = 1e-4;

/// Power-iteration sweeps per (probe point, worker pair).
const POWER_ITERS: usize = 8;

/// Largest pairwise Hessian distance of `problem`: exact for quadratic
/// families, otherwise a probe-based lower bound over `probes` random
/// points. Returns 0 for a single worker.
pub fn estimate_heterogeneity(problem: &Problem, probes: usize, seed: u64) -> f64 {
    assert!(probes >= 1, "probes must be >= 1");
    let p = problem.workers();
    if p <= 1 {
        return 0.0;
    }

    if problem.locals().iter().all(|l| l.as_quadratic().is_some()) {
        let mut max = 0.0f64;
        for a in 0..p {
            for b in a + 1..p {
                let ha = problem.local(a).as_quadratic().unwrap().hessian();
                let hb = problem.local(b).as_quadratic().unwrap().hessian();
                max = max.max(spectral_norm_sym(&(ha - hb)));
            }
        }
        return max;
    }

    let tree = SeedTree::new(seed);
    let mut max = 0.0f64;
    for probe in 0..probes {
        let mut rng = tree.stream(&[purpose::PROBE, probe as u64]);
        let x = problem.sample_init(&mut rng);
        for a in 0..p {
            for b in a + 1..p {
                let est = probe_pair_hetero(
                    problem.local(a),
                    problem.local(b),
                    &x,
                    POWER_ITERS,
                    FD_EPS,
                    &mut rng,
                );
                max = max.max(est);
            }
        }
    }
    max
}

/// Lower bound on `||H_a(x) - H_b(x)||` by power iteration over directions,
/// applying the difference operator through finite differences of the full
/// local gradients.
pub(crate) fn probe_pair_hetero(
    a: &dyn LocalObjective,
    b: &dyn LocalObjective,
    x: &ParamVector,
    iters: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dim = x.dim();
    let mut u = ParamVector::new(
        (0..dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                g
            })
            .collect(),
    );
    let n = u.norm();
    if n == 0.0 {
        return 0.0;
    }
    u.scale_assign(1.0 / n);

    let ga0 = a.full_grad(x);
    let gb0 = b.full_grad(x);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let mut shifted = x.clone();
        shifted.axpy(eps, &u);
        let da = a.full_grad(&shifted).sub(&ga0);
        let db = b.full_grad(&shifted).sub(&gb0);
        let mut w = da.sub(&db);
        w.scale_assign(1.0 / eps);
        estimate = w.norm();
        if estimate <= 1e-15 {
            return 0.0;
        }
        w.scale_assign(1.0 / estimate);
        u = w;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::gen_quadratic_family;

    #[test]
    fn identical_objectives_have_zero_heterogeneity() {
        let problem = gen_quadratic_family(3, 6, 0.0, 1.0, 0.1, 5).unwrap();
        assert_eq!(estimate_heterogeneity(&problem, 1, 0), 0.0);
    }

    #[test]
    fn exact_path_recovers_the_declared_zeta() {
        let problem = gen_quadratic_family(4, 5, 0.5, 1.0, 0.1, 5).unwrap();
        let z = estimate_heterogeneity(&problem, 1, 0);
        assert!((z - 0.5).abs() <= 1e-10, "estimate {z}");
    }

    #[test]
    fn probe_estimate_lower_bounds_the_exact_value() {
        use rand::SeedableRng;
        let problem = gen_quadratic_family(3, 6, 0.7, 1.0, 0.1, 8).unwrap();
        let exact = estimate_heterogeneity(&problem, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = problem.sample_init(&mut rng);
        let mut probe = 0.0f64;
        for a in 0..3 {
            for b in a + 1..3 {
                probe = probe.max(probe_pair_hetero(
                    problem.local(a),
                    problem.local(b),
                    &x,
                    POWER_ITERS,
                    FD_EPS,
                    &mut rng,
                ));
            }
        }
        assert!(probe <= exact + 1e-6, "probe {probe} vs exact {exact}");
        // Power iteration on a constant Hessian difference should come close.
        assert!(probe >= 0.9 * exact, "probe {probe} too loose vs {exact}");
    }

    #[test]
    fn single_worker_returns_zero() {
        let problem = gen_quadratic_family(1, 4, 0.0, 1.0, 0.1, 5).unwrap();
        assert_eq!(estimate_heterogeneity(&problem, 2, 9), 0.0);
    }
}
