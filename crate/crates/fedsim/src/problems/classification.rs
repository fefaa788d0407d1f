//! Synthetic classification with a class-skewed partition.
//!
//! Gaussian clusters (one unit-norm random mean per class, isotropic noise)
//! stand in for image data. Worker p receives the fraction `q` of class p and
//! an equal share of every other class, which turns `q` into the
//! heterogeneity dial: `q = 1/P` gives uniform class histograms, `q = 1`
//! gives one class per worker. Features are normalized per coordinate to
//! mean 0 and standard deviation 0.5 using train-set statistics.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::hetero::probe_pair_hetero;
use super::mlp::{MlpFamily, MlpLocal, MlpSpec, WorkerData};
use super::{InitSpec, LocalObjective, Problem, ProblemError, ProblemMeta};
use crate::rng::{purpose, SeedTree};

/// Within-class standard deviation of the raw Gaussian clusters, before
/// normalization. Class means are unit vectors, so this fixes the task's
/// difficulty; heavy overlap keeps hundreds of optimization rounds in the
/// transient regime where algorithmic differences are visible.
const CLUSTER_STD: f64 = 1.0;

/// Scale of the normalized features.
const FEATURE_STD: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub struct ClassPartitionConfig {
    /// Fraction of class p assigned to worker p, in `[1/P, 1]`.
    pub q: f64,
    /// Number of classes; equals the worker count.
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Probability of replacing a train label with a uniform other class.
    pub label_noise: f64,
}

impl ClassPartitionConfig {
    fn validate(&self) -> Result<(), ProblemError> {
        let p = self.num_classes;
        if p == 0 || self.samples_per_class == 0 || self.feature_dim == 0 {
            return Err(ProblemError::InvalidConfig(
                "num_classes, samples_per_class and feature_dim must be positive".into(),
            ));
        }
        if self.q < 1.0 / p as f64 - 1e-12 {
            return Err(ProblemError::InvalidConfig(format!(
                "q = {} would under-assign the dominant class (minimum 1/P = {})",
                self.q,
                1.0 / p as f64
            )));
        }
        if self.q > 1.0 {
            return Err(ProblemError::InvalidConfig("q must be <= 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(ProblemError::InvalidConfig(
                "label_noise must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Integer outcome of the class partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSummary {
    /// Dominant-class examples per worker.
    pub dominant_per_worker: usize,
    /// Examples of each non-dominant class per worker.
    pub others_per_worker: usize,
    /// Total examples per worker after discarding remainders.
    pub per_worker: usize,
    /// Examples discarded by the integer split.
    pub discarded: usize,
}

/// The integer arithmetic of the split, without generating any data.
pub fn partition_summary(cfg: &ClassPartitionConfig) -> PartitionSummary {
    let p = cfg.num_classes;
    let spc = cfg.samples_per_class;
    let dominant = (cfg.q * spc as f64).floor() as usize;
    let dominant = dominant.min(spc);
    let others = if p > 1 { (spc - dominant) / (p - 1) } else { 0 };
    let used_per_class = dominant + (p - 1) * others;
    PartitionSummary {
        dominant_per_worker: dominant,
        others_per_worker: others,
        per_worker: dominant + (p - 1) * others,
        discarded: p * (spc - used_per_class),
    }
}

/// Generates the partitioned train problem plus a balanced IID test set of
/// the same size, bound to the given MLP family.
pub fn gen_classification(
    cfg: &ClassPartitionConfig,
    model: &MlpFamily,
    seed: u64,
) -> Result<(Problem, PartitionSummary), ProblemError> {
    cfg.validate()?;
    let p = cfg.num_classes;
    let d = cfg.feature_dim;
    let spc = cfg.samples_per_class;
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream(&[purpose::DATA]);

    // Unit-norm class means.
    let means: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= n);
            v
        })
        .collect();

    // Raw train pool, grouped by class.
    let mut features = vec![0.0; p * spc * d];
    let mut labels = vec![0u32; p * spc];
    for class in 0..p {
        for s in 0..spc {
            let row = class * spc + s;
            labels[row] = class as u32;
            for j in 0..d {
                let g: f64 = StandardNormal.sample(&mut rng);
                features[row * d + j] = means[class][j] + CLUSTER_STD * g;
            }
        }
    }

    // Per-coordinate normalization from train statistics, applied to train
    // and test alike: x -> FEATURE_STD * (x - mean) / std.
    let n_rows = p * spc;
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for row in 0..n_rows {
        for j in 0..d {
            mean[j] += features[row * d + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_rows as f64);
    for row in 0..n_rows {
        for j in 0..d {
            let c = features[row * d + j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n_rows as f64);
    let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-12)).collect();
    for row in 0..n_rows {
        for j in 0..d {
            features[row * d + j] = FEATURE_STD * (features[row * d + j] - mean[j]) / std[j];
        }
    }

    // Label noise on the train pool only.
    if cfg.label_noise > 0.0 && p > 1 {
        for label in labels.iter_mut() {
            if rng.gen::<f64>() < cfg.label_noise {
                let mut other = rng.gen_range(0..p as u32 - 1);
                if other >= *label {
                    other += 1;
                }
                *label = other;
            }
        }
    }

    // Class-skewed assignment: q of class c to worker c, equal shares of the
    // rest to everyone else, remainders discarded.
    let summary = partition_summary(cfg);
    let mut worker_rows: Vec<Vec<usize>> = vec![Vec::with_capacity(summary.per_worker); p];
    for class in 0..p {
        let mut idx: Vec<usize> = (class * spc..(class + 1) * spc).collect();
        idx.shuffle(&mut rng);
        let mut cursor = summary.dominant_per_worker;
        worker_rows[class].extend_from_slice(&idx[..cursor]);
        for other in 0..p {
            if other == class {
                continue;
            }
            worker_rows[other].extend_from_slice(&idx[cursor..cursor + summary.others_per_worker]);
            cursor += summary.others_per_worker;
        }
    }
    debug_assert!(worker_rows.iter().all(|w| w.len() == summary.per_worker));

    let spec = model.bind(d, p)?;
    let locals: Vec<Arc<dyn LocalObjective>> = worker_rows
        .iter()
        .map(|rows| {
            let mut f = Vec::with_capacity(rows.len() * d);
            let mut l = Vec::with_capacity(rows.len());
            for &r in rows {
                f.extend_from_slice(&features[r * d..(r + 1) * d]);
                l.push(labels[r]);
            }
            let data = Arc::new(WorkerData {
                feature_dim: d,
                features: f,
                labels: l,
            });
            Ok(Arc::new(MlpLocal::new(spec.clone(), data)?) as Arc<dyn LocalObjective>)
        })
        .collect::<Result<_, ProblemError>>()?;

    // Balanced IID test set with clean labels, same normalization.
    let mut test_rng = tree.stream(&[purpose::TEST_DATA]);
    let mut test_features = Vec::with_capacity(p * spc * d);
    let mut test_labels = Vec::with_capacity(p * spc);
    for class in 0..p {
        for _ in 0..spc {
            test_labels.push(class as u32);
            for j in 0..d {
                let g: f64 = StandardNormal.sample(&mut test_rng);
                let raw = means[class][j] + CLUSTER_STD * g;
                test_features.push(FEATURE_STD * (raw - mean[j]) / std[j]);
            }
        }
    }
    let test = Arc::new(MlpLocal::new(
        spec.clone(),
        Arc::new(WorkerData {
            feature_dim: d,
            features: test_features,
            labels: test_labels,
        }),
    )?);

    let meta = calibrate_meta(&spec, &locals, &tree)?;
    let problem = Problem::new(meta, locals, Some(test), InitSpec::Mlp(spec))?;
    Ok((problem, summary))
}

/// Empirical constants for a bound MLP problem: smoothness along short
/// training trajectories, gradient variance at representative points, and a
/// cheap probe of the Hessian heterogeneity.
pub(crate) fn calibrate_meta(
    spec: &Arc<MlpSpec>,
    locals: &[Arc<dyn LocalObjective>],
    tree: &SeedTree,
) -> Result<ProblemMeta, ProblemError> {
    let p = locals.len();
    let mut rng = tree.stream(&[purpose::PROBE, 0]);
    let dim = spec.param_count();

    // Short pooled SGD trajectory; probe points follow it so the recorded
    // constants hold at training scale.
    let mut x = spec.init(&mut rng);
    let mut trajectory = vec![x.clone()];
    for step in 0..60 {
        let worker = step % p;
        let ids = locals[worker].sample(&mut rng, 16);
        let g = locals[worker].batch_grad(&x, &ids);
        x = x.gd_step(0.1, &g);
        trajectory.push(x.clone());
    }

    // Smoothness: max per-example gradient-difference ratio over trajectory
    // pairs and init-scale perturbation pairs, with a safety factor.
    let mut max_ratio = 0.0f64;
    for w in trajectory.windows(2) {
        let dist = w[0].distance(&w[1]);
        if dist < 1e-12 {
            continue;
        }
        let worker = rng.gen_range(0..p);
        for &e in &locals[worker].sample(&mut rng, 3) {
            let dg = locals[worker].grad(&w[0], e).distance(&locals[worker].grad(&w[1], e));
            max_ratio = max_ratio.max(dg / dist);
        }
    }
    for _ in 0..120 {
        let a = spec.init(&mut rng);
        let mut b = a.clone();
        for i in 0..dim {
            let g: f64 = StandardNormal.sample(&mut rng);
            b[i] += 0.1 * g;
        }
        let dist = a.distance(&b);
        let worker = rng.gen_range(0..p);
        for &e in &locals[worker].sample(&mut rng, 2) {
            let dg = locals[worker].grad(&a, e).distance(&locals[worker].grad(&b, e));
            max_ratio = max_ratio.max(dg / dist);
        }
    }
    let smoothness = 2.0 * max_ratio;

    // Gradient variance: exact per-worker variance at trajectory points.
    let mut max_var = 0.0f64;
    for point in [&trajectory[0], &trajectory[30], &trajectory[60]] {
        for local in locals {
            let full = local.full_grad(point);
            let m = local.support_size().unwrap();
            let mut acc = 0.0;
            for e in 0..m {
                acc += local.grad(point, e).distance(&full).powi(2);
            }
            max_var = max_var.max(acc / m as f64);
        }
    }
    let grad_variance = 1.25 * max_var;

    // Heterogeneity: ring-pair probe at one trajectory point. A fuller
    // estimate is available through estimate_heterogeneity.
    let mut hetero = 0.0f64;
    if p > 1 {
        let probe_x = &trajectory[30];
        for worker in 0..p {
            let pair = (worker + 1) % p;
            let est = probe_pair_hetero(
                locals[worker].as_ref(),
                locals[pair].as_ref(),
                probe_x,
                4,
                1e-4,
                &mut rng,
            );
            hetero = hetero.max(est);
        }
    }
    let hetero = hetero.min(2.0 * smoothness);

    let total: u64 = locals.iter().map(|l| l.support_size().unwrap()).sum();
    Ok(ProblemMeta {
        workers: p,
        dim,
        smoothness,
        hetero,
        grad_variance: Some(grad_variance),
        total_examples: Some(total),
        optimum: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::mlp::mlp_objective;
    use crate::vector::ParamVector;

    fn small_cfg(q: f64) -> ClassPartitionConfig {
        ClassPartitionConfig {
            q,
            num_classes: 5,
            samples_per_class: 40,
            feature_dim: 8,
            label_noise: 0.0,
        }
    }

    #[test]
    fn partition_arithmetic_matches_hand_count() {
        let cfg = ClassPartitionConfig {
            q: 0.35,
            num_classes: 10,
            samples_per_class: 100,
            feature_dim: 4,
            label_noise: 0.0,
        };
        let s = partition_summary(&cfg);
        assert_eq!(s.dominant_per_worker, 35);
        assert_eq!(s.others_per_worker, 7);
        assert_eq!(s.per_worker, 98);
        assert_eq!(s.discarded, 10 * (100 - 35 - 63));
    }

    #[test]
    fn uniform_q_gives_uniform_class_histograms() {
        let model = mlp_objective(4, 0.0).unwrap();
        let (problem, summary) = gen_classification(&small_cfg(0.2), &model, 3).unwrap();
        assert_eq!(summary.dominant_per_worker, summary.others_per_worker);
        for worker in 0..5 {
            let mlp = problem.local(worker).as_mlp().unwrap();
            let mut histogram = [0usize; 5];
            for &l in &mlp.data().labels {
                histogram[l as usize] += 1;
            }
            assert!(histogram.iter().all(|&c| c == summary.per_worker / 5));
        }
    }

    #[test]
    fn q_one_gives_single_class_workers() {
        let model = mlp_objective(4, 0.0).unwrap();
        let (problem, summary) = gen_classification(&small_cfg(1.0), &model, 3).unwrap();
        assert_eq!(summary.others_per_worker, 0);
        for worker in 0..5 {
            let mlp = problem.local(worker).as_mlp().unwrap();
            assert!(mlp.data().labels.iter().all(|&l| l == worker as u32));
        }
    }

    #[test]
    fn rejects_q_below_uniform() {
        let model = mlp_objective(4, 0.0).unwrap();
        let err = gen_classification(&small_cfg(0.1), &model, 3).unwrap_err();
        assert!(matches!(err, ProblemError::InvalidConfig(_)));
    }

    #[test]
    fn test_set_is_balanced_and_same_size_as_train_pool() {
        let model = mlp_objective(4, 0.0).unwrap();
        let (problem, _) = gen_classification(&small_cfg(0.4), &model, 3).unwrap();
        let test = problem.test_set().unwrap();
        assert_eq!(test.support_size(), Some(200));
    }

    #[test]
    fn generation_is_deterministic() {
        let model = mlp_objective(4, 1e-3).unwrap();
        let (a, _) = gen_classification(&small_cfg(0.4), &model, 99).unwrap();
        let (b, _) = gen_classification(&small_cfg(0.4), &model, 99).unwrap();
        let x = ParamVector::zeros(a.dim());
        assert_eq!(a.train_metrics(&x), b.train_metrics(&x));
        assert!((a.meta.smoothness - b.meta.smoothness).abs() == 0.0);
    }
}
