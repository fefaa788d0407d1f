//! One-hidden-layer MLP with softplus activation and softmax cross-entropy,
//! gradients by manual backpropagation.
//!
//! Parameters are packed flat: `W1` (hidden x input, row major), `b1`,
//! `W2` (classes x hidden, row major), `b2`. Every loss includes the
//! `l2/2 * ||x||^2` regularizer, so per-example gradients are unbiased for
//! the regularized local objectives.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{LocalObjective, Metrics, ProblemError};
use crate::vector::ParamVector;

/// Default regularization strength for generated classification problems.
pub const DEFAULT_L2: f64 = 5e-3;

/// Network family: structure fixed, input/output widths bound per dataset.
#[derive(Debug, Clone, Copy)]
pub struct MlpFamily {
    pub hidden: usize,
    pub l2: f64,
}

/// Builds an MLP objective family with `hidden` units and an `l2/2 ||x||^2`
/// regularizer, to be bound to a generated dataset.
pub fn mlp_objective(hidden: usize, l2: f64) -> Result<MlpFamily, ProblemError> {
    if hidden == 0 {
        return Err(ProblemError::InvalidConfig("hidden must be >= 1".into()));
    }
    if l2 < 0.0 {
        return Err(ProblemError::InvalidConfig("l2 must be >= 0".into()));
    }
    Ok(MlpFamily { hidden, l2 })
}

impl MlpFamily {
    pub fn bind(&self, input_dim: usize, classes: usize) -> Result<Arc<MlpSpec>, ProblemError> {
        if input_dim == 0 || classes < 2 {
            return Err(ProblemError::InvalidConfig(
                "need input_dim >= 1 and classes >= 2".into(),
            ));
        }
        Ok(Arc::new(MlpSpec {
            input_dim,
            hidden: self.hidden,
            classes,
            l2: self.l2,
        }))
    }
}

/// A bound network shape with its regularizer.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub l2: f64,
}

// softplus(z) = ln(1 + e^z), evaluated stably for large |z|.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpSpec {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input_dim + self.hidden + self.classes * self.hidden + self.classes
    }

    fn w1(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input_dim
    }

    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.input_dim;
        s..s + self.hidden
    }

    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.input_dim + self.hidden;
        s..s + self.classes * self.hidden
    }

    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.input_dim + self.hidden + self.classes * self.hidden;
        s..s + self.classes
    }

    /// Glorot-uniform initialization, `U[-sqrt(6/(n_in+n_out)), +...]`
    /// applied per layer (biases included in their layer's range).
    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let mut x = vec![0.0; self.param_count()];
        let r1 = (6.0 / (self.input_dim + self.hidden) as f64).sqrt();
        let r2 = (6.0 / (self.hidden + self.classes) as f64).sqrt();
        for i in self.w1() {
            x[i] = rng.gen_range(-r1..=r1);
        }
        for i in self.b1() {
            x[i] = rng.gen_range(-r1..=r1);
        }
        for i in self.w2() {
            x[i] = rng.gen_range(-r2..=r2);
        }
        for i in self.b2() {
            x[i] = rng.gen_range(-r2..=r2);
        }
        ParamVector::new(x)
    }

    fn check_dims(&self, x: &ParamVector, features: &[f64]) {
        assert_eq!(
            x.dim(),
            self.param_count(),
            "parameter vector does not match network shape"
        );
        assert_eq!(
            features.len(),
            self.input_dim,
            "feature vector does not match network input"
        );
    }

    /// Forward pass; fills `z1` (pre-activations), `a1` (hidden activations)
    /// and `logits`. Buffers must be correctly sized.
    fn forward(&self, x: &[f64], features: &[f64], z1: &mut [f64], a1: &mut [f64], logits: &mut [f64]) {
        let (h, d) = (self.hidden, self.input_dim);
        let w1 = &x[self.w1()];
        let b1 = &x[self.b1()];
        for j in 0..h {
            let row = &w1[j * d..(j + 1) * d];
            let mut acc = b1[j];
            for (w, f) in row.iter().zip(features) {
                acc += w * f;
            }
            z1[j] = acc;
            a1[j] = softplus(acc);
        }
        let w2 = &x[self.w2()];
        let b2 = &x[self.b2()];
        for c in 0..self.classes {
            let row = &w2[c * h..(c + 1) * h];
            let mut acc = b2[c];
            for (w, a) in row.iter().zip(a1.iter()) {
                acc += w * a;
            }
            logits[c] = acc;
        }
    }

    /// Cross-entropy of the softmax at `logits` against `label`, plus the
    /// softmax probabilities written into `probs`.
    fn ce_loss(&self, logits: &[f64], label: usize, probs: &mut [f64]) -> f64 {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &l) in probs.iter_mut().zip(logits) {
            let e = (l - max).exp();
            *p = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for p in probs.iter_mut() {
            *p *= inv;
        }
        sum.ln() + max - logits[label]
    }

    /// Per-example regularized loss.
    pub fn example_loss(&self, x: &ParamVector, features: &[f64], label: usize) -> f64 {
        self.check_dims(x, features);
        let mut z1 = vec![0.0; self.hidden];
        let mut a1 = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        let mut probs = vec![0.0; self.classes];
        self.forward(x.as_slice(), features, &mut z1, &mut a1, &mut logits);
        self.ce_loss(&logits, label, &mut probs) + 0.5 * self.l2 * x.norm_sq()
    }

    /// Accumulates the unregularized backprop gradient of one example into
    /// `acc` (the regularizer is added once per batch by the callers).
    fn accumulate_grad(&self, x: &[f64], features: &[f64], label: usize, acc: &mut [f64], scratch: &mut Scratch) {
        let (h, d, c_n) = (self.hidden, self.input_dim, self.classes);
        self.forward(x, features, &mut scratch.z1, &mut scratch.a1, &mut scratch.logits);
        self.ce_loss(&scratch.logits, label, &mut scratch.probs);
        // d loss / d logits
        for c in 0..c_n {
            scratch.dlogits[c] = scratch.probs[c] - if c == label { 1.0 } else { 0.0 };
        }
        let w2_off = self.w2().start;
        let b2_off = self.b2().start;
        let b1_off = self.b1().start;
        scratch.da1.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..c_n {
            let dl = scratch.dlogits[c];
            let w2_row = &x[w2_off + c * h..w2_off + (c + 1) * h];
            let acc_w2 = &mut acc[w2_off + c * h..w2_off + (c + 1) * h];
            for j in 0..h {
                acc_w2[j] += dl * scratch.a1[j];
                scratch.da1[j] += dl * w2_row[j];
            }
            acc[b2_off + c] += dl;
        }
        for j in 0..h {
            let dz = scratch.da1[j] * sigmoid(scratch.z1[j]);
            let acc_w1 = &mut acc[j * d..(j + 1) * d];
            for (a, f) in acc_w1.iter_mut().zip(features) {
                *a += dz * f;
            }
            acc[b1_off + j] += dz;
        }
    }

    pub fn predict(&self, x: &ParamVector, features: &[f64]) -> usize {
        self.check_dims(x, features);
        let mut z1 = vec![0.0; self.hidden];
        let mut a1 = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.classes];
        self.forward(x.as_slice(), features, &mut z1, &mut a1, &mut logits);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

struct Scratch {
    z1: Vec<f64>,
    a1: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    dlogits: Vec<f64>,
    da1: Vec<f64>,
}

impl Scratch {
    fn new(spec: &MlpSpec) -> Self {
        Scratch {
            z1: vec![0.0; spec.hidden],
            a1: vec![0.0; spec.hidden],
            logits: vec![0.0; spec.classes],
            probs: vec![0.0; spec.classes],
            dlogits: vec![0.0; spec.classes],
            da1: vec![0.0; spec.hidden],
        }
    }
}

/// One worker's share of a classification dataset.
#[derive(Debug, Clone)]
pub struct WorkerData {
    pub feature_dim: usize,
    /// Row-major features, `count x feature_dim`.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl WorkerData {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

/// MLP objective over one worker's dataset.
pub struct MlpLocal {
    pub(crate) spec: Arc<MlpSpec>,
    pub(crate) data: Arc<WorkerData>,
}

impl MlpLocal {
    pub fn new(spec: Arc<MlpSpec>, data: Arc<WorkerData>) -> Result<Self, ProblemError> {
        if data.feature_dim != spec.input_dim {
            return Err(ProblemError::DimensionMismatch {
                expected: spec.input_dim,
                got: data.feature_dim,
            });
        }
        if data.labels.iter().any(|&l| l as usize >= spec.classes) {
            return Err(ProblemError::InvalidConfig(
                "label outside the class range".into(),
            ));
        }
        Ok(MlpLocal { spec, data })
    }

    pub fn spec(&self) -> &Arc<MlpSpec> {
        &self.spec
    }

    pub fn data(&self) -> &Arc<WorkerData> {
        &self.data
    }
}

impl LocalObjective for MlpLocal {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn support_size(&self) -> Option<u64> {
        Some(self.data.count() as u64)
    }

    fn sample(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<u64> {
        let m = self.data.count() as u64;
        (0..count).map(|_| rng.gen_range(0..m)).collect()
    }

    fn loss(&self, x: &ParamVector, example: u64) -> f64 {
        let i = example as usize;
        self.spec
            .example_loss(x, self.data.row(i), self.data.labels[i] as usize)
    }

    fn grad(&self, x: &ParamVector, example: u64) -> ParamVector {
        let mut acc = vec![0.0; self.spec.param_count()];
        let mut scratch = Scratch::new(&self.spec);
        let i = example as usize;
        self.spec.accumulate_grad(
            x.as_slice(),
            self.data.row(i),
            self.data.labels[i] as usize,
            &mut acc,
            &mut scratch,
        );
        let mut g = ParamVector::new(acc);
        g.axpy(self.spec.l2, x);
        g
    }

    fn batch_grad(&self, x: &ParamVector, examples: &[u64]) -> ParamVector {
        assert!(!examples.is_empty(), "empty batch");
        let mut acc = vec![0.0; self.spec.param_count()];
        let mut scratch = Scratch::new(&self.spec);
        for &e in examples {
            let i = e as usize;
            self.spec.accumulate_grad(
                x.as_slice(),
                self.data.row(i),
                self.data.labels[i] as usize,
                &mut acc,
                &mut scratch,
            );
        }
        let mut g = ParamVector::new(acc);
        g.scale_assign(1.0 / examples.len() as f64);
        g.axpy(self.spec.l2, x);
        g
    }

    fn full_grad(&self, x: &ParamVector) -> ParamVector {
        let all: Vec<u64> = (0..self.data.count() as u64).collect();
        self.batch_grad(x, &all)
    }

    fn as_mlp(&self) -> Option<&MlpLocal> {
        Some(self)
    }

    fn full_metrics(&self, x: &ParamVector) -> Metrics {
        let mut z1 = vec![0.0; self.spec.hidden];
        let mut a1 = vec![0.0; self.spec.hidden];
        let mut logits = vec![0.0; self.spec.classes];
        let mut probs = vec![0.0; self.spec.classes];
        let mut loss = 0.0;
        let mut correct = 0usize;
        for i in 0..self.data.count() {
            let label = self.data.labels[i] as usize;
            self.spec
                .forward(x.as_slice(), self.data.row(i), &mut z1, &mut a1, &mut logits);
            loss += self.spec.ce_loss(&logits, label, &mut probs);
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(c, _)| c)
                .unwrap();
            if pred == label {
                correct += 1;
            }
        }
        let n = self.data.count() as f64;
        Metrics {
            loss: loss / n + 0.5 * self.spec.l2 * x.norm_sq(),
            accuracy: Some(correct as f64 / n),
        }
    }
}
