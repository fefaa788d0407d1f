//! The individual property checks.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CheckReport, CheckStatus};
use crate::algorithms::{
    bvr_l_sgd, minibatch_sarah, snapshot_uses_full, AlgoParams, SimOptions, Simulation,
};
use crate::cluster::FederationConfig;
use crate::problems::{
    gen_quadratic_family_with, PerturbationLayout, Problem, QuadraticFamilyConfig,
};
use crate::rng::{purpose, SeedTree};
use crate::vector::{tree_mean, ParamVector};

fn gaussian_point(dim: usize, rng: &mut ChaCha8Rng) -> ParamVector {
    ParamVector::new(
        (0..dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                g
            })
            .collect(),
    )
}

/// The bias term left after correcting a local gradient with a global one:
/// `grad f_p(x) - grad f_p(y) + grad f(y) - grad f(x)`.
fn bias_residual(problem: &Problem, worker: usize, x: &ParamVector, y: &ParamVector) -> ParamVector {
    let local_diff = problem.local(worker).full_grad(x).sub(&problem.local(worker).full_grad(y));
    let global_diff = problem.global_grad(y).sub(&problem.global_grad(x));
    local_diff.add(&global_diff)
}

/// Squared bias residual is bounded by `zeta^2 ||x - y||^2` on every random
/// triple. Needs a problem with exact heterogeneity (quadratic family).
pub fn check_bias_bound(problem: &Problem, trials: u64, seed: u64) -> CheckReport {
    let name = "bias_bound".to_string();
    if problem.locals().iter().any(|l| l.as_quadratic().is_none()) {
        return CheckReport {
            name,
            status: CheckStatus::Skipped,
            measured: vec![],
            bound: None,
            samples: 0,
            seed,
            notes: "needs a quadratic family with exact heterogeneity".into(),
        };
    }
    let zeta = problem.meta.hetero;
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream(&[purpose::PROBE, 0]);
    let dim = problem.dim();
    let workers = problem.workers();
    let tolerance = 1e-9;
    let mut violations = 0u64;
    let mut max_ratio = 0.0f64;
    let mut max_lhs_sq = 0.0f64;
    for t in 0..trials {
        let worker = (t % workers as u64) as usize;
        let x = gaussian_point(dim, &mut rng);
        let y = gaussian_point(dim, &mut rng);
        let lhs_sq = bias_residual(problem, worker, &x, &y).norm_sq();
        let rhs = zeta * zeta * x.distance(&y).powi(2);
        if lhs_sq > rhs + tolerance {
            violations += 1;
        }
        max_lhs_sq = max_lhs_sq.max(lhs_sq);
        if zeta > 0.0 {
            max_ratio = max_ratio.max((lhs_sq / rhs).sqrt());
        }
    }
    CheckReport {
        name,
        status: if violations == 0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: vec![
            ("violations".into(), violations as f64),
            ("max_ratio".into(), max_ratio),
            ("max_lhs_sq".into(), max_lhs_sq),
        ],
        bound: Some(tolerance),
        samples: trials,
        seed,
        notes: format!("zeta = {zeta}"),
    }
}

/// Near-tightness witness: on a star-layout family one worker sits
/// `(P-1)/P * zeta` from the mean Hessian, so a displacement along the top
/// eigendirection of the extreme pairwise difference drives the bias
/// residual to `(P-1)/P` of the bound.
pub fn check_bias_tightness(zeta: f64, seed: u64) -> CheckReport {
    let name = "bias_tightness".to_string();
    let workers = 200;
    let mut cfg = QuadraticFamilyConfig::new(workers, 6, zeta, 1.0, 0.05);
    cfg.layout = PerturbationLayout::Star;
    cfg.examples_per_worker = 2;
    let problem = match gen_quadratic_family_with(cfg, seed) {
        Ok(p) => p,
        Err(e) => {
            return CheckReport {
                name,
                status: CheckStatus::Fail,
                measured: vec![],
                bound: None,
                samples: 0,
                seed,
                notes: format!("generation failed: {e}"),
            }
        }
    };
    let h0 = problem.local(0).as_quadratic().unwrap().hessian();
    let h1 = problem.local(1).as_quadratic().unwrap().hessian();
    let eigen = (h0 - h1).symmetric_eigen();
    let (top, _) = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap();
    let direction = ParamVector::new(eigen.eigenvectors.column(top).as_slice().to_vec());

    let x = ParamVector::zeros(6);
    let y = x.add(&direction);
    let residual = bias_residual(&problem, 0, &x, &y).norm();
    let ratio = residual / (zeta * x.distance(&y));
    // Pairwise form of the same inequality attains the bound itself.
    let pairwise = problem
        .local(0)
        .full_grad(&x)
        .sub(&problem.local(0).full_grad(&y))
        .sub(&problem.local(1).full_grad(&x).sub(&problem.local(1).full_grad(&y)))
        .norm()
        / (zeta * x.distance(&y));
    CheckReport {
        name,
        status: if ratio >= 0.99 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: vec![
            ("ratio".into(), ratio),
            ("pairwise_ratio".into(), pairwise),
        ],
        bound: Some(0.99),
        samples: 1,
        seed,
        notes: format!("star layout, {workers} workers; expected (P-1)/P = {}", (workers - 1) as f64 / workers as f64),
    }
}

/// Runs BVR-L-SGD and minibatch SARAH under coupled sampling streams and
/// reports the largest per-round iterate distance. With one local step the
/// two specialize to the same recursion and the distance must be exactly
/// zero under the fixed reduction order.
pub fn check_sarah_equivalence(problem: &Problem, params: &AlgoParams, seed: u64) -> CheckReport {
    let name = "sarah_equivalence".to_string();
    let mut sarah_params = params.clone();
    sarah_params.batch = params.local_steps * params.batch;
    sarah_params.local_steps = 1;

    let opts = SimOptions {
        total_rounds: None,
        eval_every: 1_000_000,
        target_grad_norm2: None,
        capture_iterates: true,
    };
    let fed = FederationConfig::new(problem.workers(), u64::MAX / 4, seed);
    let mut init_rng = SeedTree::new(seed).stream(&[purpose::INIT]);
    let x0 = problem.sample_init(&mut init_rng);

    let mut sim_bvr = Simulation::new(problem, fed.clone(), opts.clone());
    let bvr = bvr_l_sgd(&mut sim_bvr, &x0, params);
    let mut sim_sarah = Simulation::new(problem, fed, opts);
    let sarah = minibatch_sarah(&mut sim_sarah, &x0, &sarah_params);
    if let Err(e) = bvr.and(sarah) {
        return CheckReport {
            name,
            status: CheckStatus::Fail,
            measured: vec![],
            bound: Some(0.0),
            samples: 0,
            seed,
            notes: format!("run failed: {e}"),
        };
    }
    if sim_bvr.iterates.len() != sim_sarah.iterates.len() {
        return CheckReport {
            name,
            status: CheckStatus::Fail,
            measured: vec![
                ("bvr_rounds".into(), sim_bvr.iterates.len() as f64),
                ("sarah_rounds".into(), sim_sarah.iterates.len() as f64),
            ],
            bound: Some(0.0),
            samples: 0,
            seed,
            notes: "round counts differ".into(),
        };
    }
    let max_distance = sim_bvr
        .iterates
        .iter()
        .zip(&sim_sarah.iterates)
        .map(|(a, b)| a.distance(b))
        .fold(0.0f64, f64::max);
    CheckReport {
        name,
        status: if max_distance == 0.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: vec![
            ("max_distance".into(), max_distance),
            ("rounds".into(), sim_bvr.iterates.len() as f64),
        ],
        bound: Some(0.0),
        samples: sim_bvr.iterates.len() as u64,
        seed,
        notes: format!("K = {}", params.local_steps),
    }
}

/// Monte-Carlo snapshot draw: per-worker batch gradients of size `b_tilde`,
/// tree-averaged, matching the algorithms' snapshot procedure.
fn draw_snapshot(problem: &Problem, x: &ParamVector, b_tilde: u64, rng: &mut ChaCha8Rng) -> ParamVector {
    let grads: Vec<ParamVector> = (0..problem.workers())
        .map(|p| {
            let local = problem.local(p);
            let ids = local.sample(rng, b_tilde as usize);
            local.batch_grad(x, &ids)
        })
        .collect();
    tree_mean(&grads)
}

/// The mean squared error of the snapshot estimate is bounded by
/// `sigma^2 / (P b_tilde)`; with a snapshot batch covering the support the
/// exact branch reproduces the global gradient to machine precision.
pub fn check_snapshot_variance(
    problem: &Problem,
    b_tilde: u64,
    reps: u64,
    seed: u64,
) -> CheckReport {
    let name = format!("snapshot_variance_b{b_tilde}");
    let sigma2 = problem.meta.grad_variance.unwrap_or(f64::NAN);
    let tree = SeedTree::new(seed);
    if snapshot_uses_full(problem, b_tilde) {
        let mut rng = tree.stream(&[purpose::PROBE, 1]);
        let mut max_err = 0.0f64;
        for _ in 0..5 {
            let x = gaussian_point(problem.dim(), &mut rng);
            let exact: Vec<ParamVector> = (0..problem.workers())
                .map(|p| problem.local(p).full_grad(&x))
                .collect();
            let v0 = tree_mean(&exact);
            let reference = problem.global_grad(&x);
            let rel = v0.distance(&reference) / reference.norm().max(1e-300);
            max_err = max_err.max(rel);
        }
        return CheckReport {
            name,
            status: if max_err <= 1e-12 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            measured: vec![("max_rel_error".into(), max_err)],
            bound: Some(1e-12),
            samples: 5,
            seed,
            notes: "exact branch (snapshot covers the support)".into(),
        };
    }

    let bound = sigma2 / (problem.workers() as u64 * b_tilde) as f64;
    let mut rng = tree.stream(&[purpose::PROBE, 2]);
    let mut worst_excess_se = f64::NEG_INFINITY;
    let mut worst_est = 0.0;
    for _ in 0..5 {
        let x = gaussian_point(problem.dim(), &mut rng);
        let reference = problem.global_grad(&x);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let err = draw_snapshot(problem, &x, b_tilde, &mut rng)
                .distance(&reference)
                .powi(2);
            sum += err;
            sum_sq += err * err;
        }
        let est = sum / reps as f64;
        let var = (sum_sq / reps as f64 - est * est).max(0.0);
        let se = (var / reps as f64).sqrt();
        let excess = (est - bound) / se.max(1e-300);
        if excess > worst_excess_se {
            worst_excess_se = excess;
            worst_est = est;
        }
    }
    CheckReport {
        name,
        status: if worst_excess_se <= 3.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: vec![
            ("worst_estimate".into(), worst_est),
            ("worst_excess_in_se".into(), worst_excess_se),
        ],
        bound: Some(bound),
        samples: reps * 5,
        seed,
        notes: "5 probe points; Bonferroni over 5 sub-tests".into(),
    }
}

/// Doubling the snapshot batch halves the estimated error, within combined
/// Monte-Carlo error.
pub fn check_snapshot_scaling(
    problem: &Problem,
    b_tilde: u64,
    reps: u64,
    seed: u64,
) -> CheckReport {
    let name = format!("snapshot_scaling_b{b_tilde}_to_{}", 2 * b_tilde);
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream(&[purpose::PROBE, 3]);
    let x = gaussian_point(problem.dim(), &mut rng);
    let reference = problem.global_grad(&x);
    let estimate = |b: u64, rng: &mut ChaCha8Rng| {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let err = draw_snapshot(problem, &x, b, rng).distance(&reference).powi(2);
            sum += err;
            sum_sq += err * err;
        }
        let est = sum / reps as f64;
        let var = (sum_sq / reps as f64 - est * est).max(0.0);
        (est, (var / reps as f64).sqrt())
    };
    let (est1, se1) = estimate(b_tilde, &mut rng);
    let (est2, se2) = estimate(2 * b_tilde, &mut rng);
    let gap = (est2 - est1 / 2.0).abs();
    let tolerance = 3.0 * (se2 * se2 + se1 * se1 / 4.0).sqrt();
    CheckReport {
        name,
        status: if gap <= tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: vec![
            ("estimate_b".into(), est1),
            ("estimate_2b".into(), est2),
            ("gap".into(), gap),
        ],
        bound: Some(tolerance),
        samples: 2 * reps,
        seed,
        notes: "halving test".into(),
    }
}

/// Batch gradients are unbiased for the local gradient: per-coordinate
/// 3-standard-error test at 5 probe points, plus the exact full-support
/// identity.
pub fn check_unbiasedness(problem: &Problem, batch: u64, reps: u64, seed: u64) -> CheckReport {
    let name = "estimator_unbiasedness".to_string();
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream(&[purpose::PROBE, 4]);
    let dim = problem.dim();
    let workers = problem.workers();

    // Exact identity when the batch is the full support.
    let mut exact_err = 0.0f64;
    for p in 0..workers {
        let local = problem.local(p);
        if let Some(m) = local.support_size() {
            let x = gaussian_point(dim, &mut rng);
            let all: Vec<u64> = (0..m).collect();
            let emp = local.batch_grad(&x, &all);
            let full = local.full_grad(&x);
            exact_err = exact_err.max(emp.distance(&full) / full.norm().max(1e-300));
        }
    }

    let mut worst_z = 0.0f64;
    for point in 0..5usize {
        let worker = point % workers;
        let local = problem.local(worker);
        let x = gaussian_point(dim, &mut rng);
        let full = local.full_grad(&x);
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for rep in 0..reps {
            let ids = local.sample(&mut rng, batch as usize);
            let g = local.batch_grad(&x, &ids);
            // Welford update per coordinate.
            let n = (rep + 1) as f64;
            for i in 0..dim {
                let delta = g[i] - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (g[i] - mean[i]);
            }
        }
        for i in 0..dim {
            let var = m2[i] / (reps as f64 - 1.0);
            let se = (var / reps as f64).sqrt();
            let dev = (mean[i] - full[i]).abs();
            if se > 0.0 {
                worst_z = worst_z.max(dev / se);
            } else if dev > 1e-12 {
                worst_z = f64::INFINITY;
            }
        }
    }
    CheckReport {
        name,
        status: if worst_z <= 3.0 && exact_err <= 1e-12 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: vec![
            ("worst_z".into(), worst_z),
            ("full_support_rel_err".into(), exact_err),
        ],
        bound: Some(3.0),
        samples: reps * 5,
        seed,
        notes: format!(
            "Bonferroni over {} coordinate sub-tests; batch = {batch}",
            5 * dim
        ),
    }
}

/// Gradient correctness: exact difference algebra against the Hessian for
/// quadratics, central finite differences for the MLP.
pub fn check_gradient(problem: &Problem, trials: u64, seed: u64) -> CheckReport {
    check_gradient_impl(problem, trials, seed, None)
}

/// `corrupt` shifts coordinate 0 of each computed gradient; the self-test
/// uses it to confirm the check can fail.
pub(crate) fn check_gradient_impl(
    problem: &Problem,
    trials: u64,
    seed: u64,
    corrupt: Option<f64>,
) -> CheckReport {
    let name = "gradient_correctness".to_string();
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream(&[purpose::PROBE, 5]);
    let mut init_rng = tree.stream(&[purpose::INIT]);
    let workers = problem.workers();
    let dim = problem.dim();
    let mut max_rel = 0.0f64;
    let mut bound = 0.0f64;
    use rand::Rng;
    for t in 0..trials {
        let worker = (t % workers as u64) as usize;
        let local = problem.local(worker);
        let m = local.support_size().expect("finite support");
        let example = rng.gen_range(0..m);
        let quadratic = local.as_quadratic().is_some();
        let (rel, tol) = if quadratic {
            // grad(x) - grad(y) must equal H (x - y) exactly.
            let x = gaussian_point(dim, &mut rng);
            let y = gaussian_point(dim, &mut rng);
            let mut diff = local.grad(&x, example);
            if let Some(c) = corrupt {
                diff[0] += c;
            }
            diff = diff.sub(&local.grad(&y, example));
            let h = local.as_quadratic().unwrap().hessian();
            let delta = nalgebra::DVector::from_column_slice(x.sub(&y).as_slice());
            let expected = ParamVector::new((h * delta).as_slice().to_vec());
            (
                diff.distance(&expected) / expected.norm().max(1e-300),
                1e-12,
            )
        } else {
            let x = problem.sample_init(&mut init_rng);
            let mut g = local.grad(&x, example);
            if let Some(c) = corrupt {
                g[0] += c;
            }
            let h = 1e-5;
            let mut fd = vec![0.0; dim];
            for i in 0..dim {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                fd[i] = (local.loss(&xp, example) - local.loss(&xm, example)) / (2.0 * h);
            }
            let fd = ParamVector::new(fd);
            (g.distance(&fd) / fd.norm().max(1e-300), 1e-5)
        };
        bound = tol;
        max_rel = max_rel.max(rel);
        if max_rel > tol {
            break;
        }
    }
    CheckReport {
        name,
        status: if max_rel <= bound {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: vec![("max_rel_error".into(), max_rel)],
        bound: Some(bound),
        samples: trials,
        seed,
        notes: if corrupt.is_some() {
            "negative control (corrupted gradient)".into()
        } else {
            String::new()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_quadratic_family, mlp_objective, ClassPartitionConfig};
    use crate::verify::CheckStatus;

    #[test]
    fn bias_bound_passes_on_generated_families() {
        for zeta in [0.0, 0.25, 1.0] {
            let problem = gen_quadratic_family(4, 6, zeta, 1.0, 0.1, 3).unwrap();
            let report = check_bias_bound(&problem, 300, 5);
            assert_eq!(report.status, CheckStatus::Pass, "{}", report.summary_line());
            if zeta == 0.0 {
                assert!(report.measured_value("max_lhs_sq").unwrap() <= 1e-18);
            }
        }
    }

    #[test]
    fn bias_bound_fails_against_an_understated_zeta() {
        // Negative control: lie about the heterogeneity and the bound breaks.
        let problem = gen_quadratic_family(4, 6, 0.8, 1.0, 0.1, 3).unwrap();
        let mut lying = problem.clone();
        lying.meta.hetero = 0.05;
        let report = check_bias_bound(&lying, 300, 5);
        assert_eq!(report.status, CheckStatus::Fail);
    }

    #[test]
    fn tightness_witness_reaches_the_bound() {
        let report = check_bias_tightness(0.5, 11);
        assert_eq!(report.status, CheckStatus::Pass, "{}", report.summary_line());
        let ratio = report.measured_value("ratio").unwrap();
        assert!(ratio >= 0.99 && ratio <= 1.0 + 1e-9, "ratio {ratio}");
        let pairwise = report.measured_value("pairwise_ratio").unwrap();
        assert!(pairwise >= 0.99, "pairwise {pairwise}");
    }

    #[test]
    fn sarah_equivalence_holds_at_k1_and_breaks_at_k2() {
        let problem = gen_quadratic_family(4, 6, 0.3, 1.0, 0.1, 7).unwrap();
        let params = AlgoParams {
            eta: 0.1,
            local_steps: 1,
            batch: 4,
            snapshot_batch: 64,
            inner_rounds: 3,
            stages: 4,
            auto_inner_rounds: false,
        };
        let report = check_sarah_equivalence(&problem, &params, 9);
        assert_eq!(report.status, CheckStatus::Pass, "{}", report.summary_line());

        let mut k2 = params.clone();
        k2.local_steps = 2;
        let control = check_sarah_equivalence(&problem, &k2, 9);
        assert_eq!(control.status, CheckStatus::Fail);
        assert!(control.measured_value("max_distance").unwrap() > 0.0);
    }

    #[test]
    fn snapshot_variance_bound_and_exact_branch() {
        let problem = gen_quadratic_family(10, 8, 0.2, 1.0, 0.1, 13).unwrap();
        let sampled = check_snapshot_variance(&problem, 2, 2000, 17);
        assert_eq!(sampled.status, CheckStatus::Pass, "{}", sampled.summary_line());
        let exact = check_snapshot_variance(&problem, 64, 1, 17);
        assert_eq!(exact.status, CheckStatus::Pass);
        assert!(exact.notes.contains("exact branch"));
    }

    #[test]
    fn snapshot_variance_fails_against_an_understated_sigma() {
        let problem = gen_quadratic_family(10, 8, 0.2, 1.0, 0.1, 13).unwrap();
        let mut lying = problem.clone();
        lying.meta.grad_variance = Some(0.05);
        let report = check_snapshot_variance(&lying, 2, 2000, 17);
        assert_eq!(report.status, CheckStatus::Fail);
    }

    #[test]
    fn unbiasedness_passes_on_quadratics() {
        let problem = gen_quadratic_family(5, 6, 0.2, 1.0, 0.1, 19).unwrap();
        let report = check_unbiasedness(&problem, 4, 3000, 23);
        assert_eq!(report.status, CheckStatus::Pass, "{}", report.summary_line());
    }

    #[test]
    fn gradient_check_passes_and_detects_corruption() {
        let cfg = ClassPartitionConfig {
            q: 0.5,
            num_classes: 4,
            samples_per_class: 10,
            feature_dim: 6,
            label_noise: 0.0,
        };
        let model = mlp_objective(5, 1e-3).unwrap();
        let (problem, _) = crate::problems::gen_classification(&cfg, &model, 29).unwrap();
        let report = check_gradient(&problem, 20, 31);
        assert_eq!(report.status, CheckStatus::Pass, "{}", report.summary_line());

        let corrupted = check_gradient_impl(&problem, 20, 31, Some(1e-3));
        assert_eq!(corrupted.status, CheckStatus::Fail);

        let quad = gen_quadratic_family(3, 5, 0.2, 1.0, 0.1, 37).unwrap();
        let report = check_gradient(&quad, 20, 41);
        assert_eq!(report.status, CheckStatus::Pass);
        let corrupted = check_gradient_impl(&quad, 20, 41, Some(1e-3));
        assert_eq!(corrupted.status, CheckStatus::Fail);
    }
}
