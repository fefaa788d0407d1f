//! Problem generators and gradient oracles with measurable heterogeneity.
//!
//! A [`Problem`] bundles one local objective per worker plus metadata
//! (smoothness, heterogeneity, gradient variance, known optimum). Oracles are
//! immutable after construction and hold no RNG state; all randomness is
//! passed in by the caller.

mod classification;
mod hetero;
mod io;
mod mlp;
mod quadratic;

pub use classification::{gen_classification, partition_summary, ClassPartitionConfig, PartitionSummary};
pub use hetero::estimate_heterogeneity;
pub use io::{export_dataset, export_test_set, import_dataset, DATASET_MAGIC};
pub use mlp::{mlp_objective, MlpFamily, MlpLocal, MlpSpec, WorkerData, DEFAULT_L2};
pub use quadratic::{
    gen_quadratic_family, gen_quadratic_family_with, PerturbationLayout, QuadraticFamilyConfig,
    QuadraticLocal,
};

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::vector::{tree_mean, ParamVector};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem configuration: {0}")]
    InvalidConfig(String),
    #[error("heterogeneity {zeta} exceeds twice the smoothness {smoothness}")]
    HeterogeneityTooLarge { zeta: f64, smoothness: f64 },
    #[error("mean Hessian is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    MalformedDataset(String),
}

/// Known minimizer of the global objective, when the generator can solve for
/// it in closed form.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub point: ParamVector,
    pub value: f64,
}

/// Measured or declared constants of a generated problem.
#[derive(Debug, Clone)]
pub struct ProblemMeta {
    /// Worker count P.
    pub workers: usize,
    /// Model dimension d.
    pub dim: usize,
    /// Smoothness constant L of the per-example loss. Exact for quadratics;
    /// an empirical trajectory-scale estimate for the MLP.
    pub smoothness: f64,
    /// Second-order heterogeneity bound: the maximum pairwise spectral norm
    /// of local Hessian differences. Exact for quadratics, estimated
    /// otherwise.
    pub hetero: f64,
    /// Upper bound on the per-example gradient variance, when known.
    pub grad_variance: Option<f64>,
    /// Total number of samples across workers; `None` for online problems.
    pub total_examples: Option<u64>,
    /// Closed-form global minimizer, when available.
    pub optimum: Option<Optimum>,
}

impl ProblemMeta {
    fn validate(&self) -> Result<(), ProblemError> {
        if self.hetero > 2.0 * self.smoothness + 1e-12 {
            return Err(ProblemError::HeterogeneityTooLarge {
                zeta: self.hetero,
                smoothness: self.smoothness,
            });
        }
        Ok(())
    }
}

/// Full-support evaluation of an objective at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    /// Fraction of correctly classified examples; `None` for objectives
    /// without a classification readout.
    pub accuracy: Option<f64>,
}

/// One worker's data distribution with its sampling and gradient oracles.
///
/// Examples are addressed by opaque `u64` ids; for finite-support objectives
/// these are indices below `support_size`. Implementations must be
/// deterministic functions of `(x, example)`.
pub trait LocalObjective: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of examples in the support, or `None` for online settings.
    fn support_size(&self) -> Option<u64>;

    /// Draw `count` example ids IID with replacement.
    fn sample(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<u64>;

    fn loss(&self, x: &ParamVector, example: u64) -> f64;

    fn grad(&self, x: &ParamVector, example: u64) -> ParamVector;

    /// Mean gradient over a batch, accumulated in slice order.
    fn batch_grad(&self, x: &ParamVector, examples: &[u64]) -> ParamVector {
        assert!(!examples.is_empty(), "empty batch");
        let mut acc = self.grad(x, examples[0]);
        for &e in &examples[1..] {
            acc.add_assign(&self.grad(x, e));
        }
        acc.scale_assign(1.0 / examples.len() as f64);
        acc
    }

    /// Exact gradient of the local objective. Finite support only.
    fn full_grad(&self, x: &ParamVector) -> ParamVector;

    /// Loss (and accuracy where defined) over the full support.
    fn full_metrics(&self, x: &ParamVector) -> Metrics;

    /// Access to the quadratic oracle when this worker's objective is one,
    /// enabling exact Hessian-based property checks.
    fn as_quadratic(&self) -> Option<&QuadraticLocal> {
        None
    }

    /// Access to the MLP objective when this worker's objective is one,
    /// enabling dataset export and model-aware tooling.
    fn as_mlp(&self) -> Option<&mlp::MlpLocal> {
        None
    }
}

/// How initial iterates for this problem are drawn.
#[derive(Debug, Clone)]
pub enum InitSpec {
    /// IID Gaussian coordinates with the given scale.
    Gaussian { dim: usize, scale: f64 },
    /// Glorot-uniform layer-wise initialization of an MLP.
    Mlp(Arc<MlpSpec>),
}

impl InitSpec {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        match self {
            InitSpec::Gaussian { dim, scale } => ParamVector::new(
                (0..*dim)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(rng);
                        g * scale
                    })
                    .collect(),
            ),
            InitSpec::Mlp(spec) => spec.init(rng),
        }
    }
}

/// A P-worker problem: local objectives, metadata, optional held-out test
/// data and the initialization rule.
#[derive(Clone)]
pub struct Problem {
    pub meta: ProblemMeta,
    locals: Vec<Arc<dyn LocalObjective>>,
    test_set: Option<Arc<dyn LocalObjective>>,
    init: InitSpec,
}

impl Problem {
    pub fn new(
        meta: ProblemMeta,
        locals: Vec<Arc<dyn LocalObjective>>,
        test_set: Option<Arc<dyn LocalObjective>>,
        init: InitSpec,
    ) -> Result<Self, ProblemError> {
        meta.validate()?;
        if locals.len() != meta.workers {
            return Err(ProblemError::InvalidConfig(format!(
                "meta declares {} workers but {} objectives were supplied",
                meta.workers,
                locals.len()
            )));
        }
        let sizes: Vec<_> = locals.iter().map(|l| l.support_size()).collect();
        if meta.total_examples.is_some() && sizes.windows(2).any(|w| w[0] != w[1]) {
            return Err(ProblemError::InvalidConfig(
                "local datasets must have equal sizes".into(),
            ));
        }
        Ok(Problem {
            meta,
            locals,
            test_set,
            init,
        })
    }

    pub fn workers(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn local(&self, worker: usize) -> &dyn LocalObjective {
        self.locals[worker].as_ref()
    }

    pub fn locals(&self) -> &[Arc<dyn LocalObjective>] {
        &self.locals
    }

    pub fn test_set(&self) -> Option<&dyn LocalObjective> {
        self.test_set.as_deref()
    }

    pub fn init_spec(&self) -> &InitSpec {
        &self.init
    }

    pub fn sample_init(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        self.init.sample(rng)
    }

    /// Gradient of the global objective `f = (1/P) sum_p f_p`, reduced in
    /// the fixed tree order.
    pub fn global_grad(&self, x: &ParamVector) -> ParamVector {
        let grads: Vec<_> = self.locals.iter().map(|l| l.full_grad(x)).collect();
        tree_mean(&grads)
    }

    /// Train-side metrics: equally weighted mean over workers (local
    /// datasets have equal sizes, so this is the pooled value).
    pub fn train_metrics(&self, x: &ParamVector) -> Metrics {
        let per: Vec<_> = self.locals.iter().map(|l| l.full_metrics(x)).collect();
        let loss = per.iter().map(|m| m.loss).sum::<f64>() / per.len() as f64;
        let accuracy = if per.iter().all(|m| m.accuracy.is_some()) {
            Some(per.iter().map(|m| m.accuracy.unwrap()).sum::<f64>() / per.len() as f64)
        } else {
            None
        };
        Metrics { loss, accuracy }
    }

    pub fn test_metrics(&self, x: &ParamVector) -> Option<Metrics> {
        self.test_set.as_ref().map(|t| t.full_metrics(x))
    }
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("meta", &self.meta)
            .field("test_set", &self.test_set.is_some())
            .finish()
    }
}
