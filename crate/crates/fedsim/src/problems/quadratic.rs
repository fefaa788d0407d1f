//! Quadratic problem families with exactly controlled Hessian heterogeneity.
//!
//! Worker p minimizes `f_p(x) = 0.5 x'A_p x - b_p'x` where `A_p = A + D_p`.
//! The base `A` has spectrum inside `[mu, L - max_p ||D_p||]` and the
//! perturbations `D_p` are scaled random symmetric matrices arranged so that
//! the largest pairwise spectral distance `max ||A_p - A_q||` equals the
//! requested heterogeneity exactly, while summing to the zero matrix so the
//! mean Hessian stays `A`. Each worker carries a finite "dataset" whose
//! per-example gradients are `A_p x - b_p + n_j` with mean-zero offsets
//! `n_j` of mean squared norm equal to the declared gradient variance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{InitSpec, LocalObjective, Metrics, Optimum, Problem, ProblemError, ProblemMeta};
use crate::rng::SeedTree;
use crate::vector::ParamVector;

/// How the Hessian perturbations are assigned to workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationLayout {
    /// Perturbations come in `+/-` pairs of magnitude `zeta/2`. The mean
    /// perturbation cancels exactly and every worker stays `zeta/2` from the
    /// mean Hessian.
    OppositePairs,
    /// One worker takes `(P-1)/P * zeta` of the perturbation and the rest
    /// share the opposite sign. Pairwise distances still peak at `zeta`, but
    /// the hot worker sits almost `zeta` away from the mean Hessian, which
    /// makes the bias-reduction bound nearly tight.
    Star,
}

#[derive(Debug, Clone)]
pub struct QuadraticFamilyConfig {
    pub workers: usize,
    pub dim: usize,
    /// Target maximum pairwise Hessian distance.
    pub zeta: f64,
    /// Smoothness bound L for every per-example loss.
    pub smoothness: f64,
    /// Smallest eigenvalue of the mean Hessian.
    pub mu: f64,
    /// Per-example gradient variance around the local full gradient.
    pub sigma2: f64,
    /// Examples per worker; must be even so the gradient offsets cancel
    /// exactly in pairs.
    pub examples_per_worker: usize,
    pub layout: PerturbationLayout,
}

impl QuadraticFamilyConfig {
    pub fn new(workers: usize, dim: usize, zeta: f64, smoothness: f64, mu: f64) -> Self {
        QuadraticFamilyConfig {
            workers,
            dim,
            zeta,
            smoothness,
            mu,
            sigma2: 1.0,
            examples_per_worker: 64,
            layout: PerturbationLayout::OppositePairs,
        }
    }

    fn max_perturbation_norm(&self) -> f64 {
        match self.layout {
            PerturbationLayout::OppositePairs => self.zeta / 2.0,
            PerturbationLayout::Star => self.zeta * (self.workers - 1) as f64 / self.workers as f64,
        }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        if self.workers == 0 || self.dim == 0 {
            return Err(ProblemError::InvalidConfig(
                "workers and dim must be positive".into(),
            ));
        }
        if !(self.zeta >= 0.0) {
            return Err(ProblemError::InvalidConfig("zeta must be >= 0".into()));
        }
        if self.zeta > 2.0 * self.smoothness {
            return Err(ProblemError::HeterogeneityTooLarge {
                zeta: self.zeta,
                smoothness: self.smoothness,
            });
        }
        if !(self.mu > 0.0) {
            return Err(ProblemError::NotPositiveDefinite(format!(
                "mu = {} must be positive",
                self.mu
            )));
        }
        if self.mu > self.smoothness {
            return Err(ProblemError::InvalidConfig(
                "mu must not exceed the smoothness".into(),
            ));
        }
        if self.zeta > 0.0 && self.workers < 2 {
            return Err(ProblemError::InvalidConfig(
                "heterogeneity needs at least two workers".into(),
            ));
        }
        if self.mu > self.smoothness - self.max_perturbation_norm() {
            return Err(ProblemError::NotPositiveDefinite(format!(
                "base spectrum window [mu, L - {}] is empty",
                self.max_perturbation_norm()
            )));
        }
        if self.sigma2 < 0.0 {
            return Err(ProblemError::InvalidConfig("sigma2 must be >= 0".into()));
        }
        if self.examples_per_worker < 2 || self.examples_per_worker % 2 != 0 {
            return Err(ProblemError::InvalidConfig(
                "examples_per_worker must be even and >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// One worker's quadratic objective.
pub struct QuadraticLocal {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    /// Per-example gradient offsets; arranged in `+u, -u` pairs.
    noise: Vec<ParamVector>,
}

impl QuadraticLocal {
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// Deterministic part of the gradient, `A_p x - b_p`.
    fn affine_grad(&self, x: &ParamVector) -> ParamVector {
        let xv = DVector::from_column_slice(x.as_slice());
        let g = &self.hessian * xv - &self.linear;
        ParamVector::new(g.as_slice().to_vec())
    }
}

impl LocalObjective for QuadraticLocal {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn support_size(&self) -> Option<u64> {
        Some(self.noise.len() as u64)
    }

    fn sample(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<u64> {
        let m = self.noise.len() as u64;
        (0..count).map(|_| rng.gen_range(0..m)).collect()
    }

    fn loss(&self, x: &ParamVector, example: u64) -> f64 {
        let xv = DVector::from_column_slice(x.as_slice());
        let quad = 0.5 * (&self.hessian * &xv).dot(&xv) - self.linear.dot(&xv);
        quad + self.noise[example as usize].dot(x)
    }

    fn grad(&self, x: &ParamVector, example: u64) -> ParamVector {
        let mut g = self.affine_grad(x);
        g.add_assign(&self.noise[example as usize]);
        g
    }

    fn batch_grad(&self, x: &ParamVector, examples: &[u64]) -> ParamVector {
        assert!(!examples.is_empty(), "empty batch");
        // The affine part is shared; only the offsets vary per example.
        let mut offset = ParamVector::zeros(self.dim());
        for &e in examples {
            offset.add_assign(&self.noise[e as usize]);
        }
        offset.scale_assign(1.0 / examples.len() as f64);
        let mut g = self.affine_grad(x);
        g.add_assign(&offset);
        g
    }

    fn full_grad(&self, x: &ParamVector) -> ParamVector {
        self.affine_grad(x)
    }

    fn full_metrics(&self, x: &ParamVector) -> Metrics {
        // Offsets sum to zero exactly, so the full loss is the quadratic part.
        let xv = DVector::from_column_slice(x.as_slice());
        let loss = 0.5 * (&self.hessian * &xv).dot(&xv) - self.linear.dot(&xv);
        Metrics {
            loss,
            accuracy: None,
        }
    }

    fn as_quadratic(&self) -> Option<&QuadraticLocal> {
        Some(self)
    }
}

/// Spectral norm of a symmetric matrix via its eigenvalues.
pub(crate) fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// Random symmetric matrix normalized to unit spectral norm.
fn random_unit_symmetric(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let s = (&g + g.transpose()).scale(0.5);
    let norm = spectral_norm_sym(&s);
    s.scale(1.0 / norm)
}

/// Generate a quadratic family with the default variance (1.0), support size
/// (64 examples per worker) and opposite-pair perturbation layout.
pub fn gen_quadratic_family(
    workers: usize,
    dim: usize,
    zeta: f64,
    smoothness: f64,
    mu: f64,
    seed: u64,
) -> Result<Problem, ProblemError> {
    gen_quadratic_family_with(
        QuadraticFamilyConfig::new(workers, dim, zeta, smoothness, mu),
        seed,
    )
}

pub fn gen_quadratic_family_with(
    cfg: QuadraticFamilyConfig,
    seed: u64,
) -> Result<Problem, ProblemError> {
    cfg.validate()?;
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream(&[crate::rng::purpose::DATA]);
    let p = cfg.workers;
    let d = cfg.dim;

    // Base Hessian: spectrum spans [mu, L - max ||D_p||] with both endpoints
    // attained, so the mean Hessian's smallest eigenvalue is exactly mu.
    let top = cfg.smoothness - cfg.max_perturbation_norm();
    let mut eigs = vec![0.0; d];
    for (i, e) in eigs.iter_mut().enumerate() {
        *e = if d == 1 {
            cfg.mu
        } else if i == 0 {
            cfg.mu
        } else if i == d - 1 {
            top
        } else {
            rng.gen_range(cfg.mu..=top)
        };
    }
    let q = random_orthogonal(d, &mut rng);
    let lambda = DMatrix::from_diagonal(&DVector::from_vec(eigs));
    let base = &q * lambda * q.transpose();
    // Symmetrize away the factored-form rounding.
    let base = (&base + base.transpose()).scale(0.5);

    // Perturbations sum to (numerically) zero and realize the requested
    // maximum pairwise distance.
    let mut deltas: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); p];
    if cfg.zeta > 0.0 {
        match cfg.layout {
            PerturbationLayout::OppositePairs => {
                for pair in 0..p / 2 {
                    let r = random_unit_symmetric(d, &mut rng);
                    let plus = r.scale(cfg.zeta / 2.0);
                    deltas[2 * pair + 1] = plus.scale(-1.0);
                    deltas[2 * pair] = plus;
                }
                // Odd worker counts leave the last worker unperturbed.
            }
            PerturbationLayout::Star => {
                let r = random_unit_symmetric(d, &mut rng);
                let share = cfg.zeta / p as f64;
                for delta in deltas.iter_mut().skip(1) {
                    *delta = r.scale(-share);
                }
                deltas[0] = r.scale(cfg.zeta - share);
            }
        }
    }

    let linears: Vec<DVector<f64>> =
        (0..p)
            .map(|_| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)))
            .collect();

    let m = cfg.examples_per_worker;
    let locals: Vec<Arc<dyn LocalObjective>> = (0..p)
        .map(|worker| {
            let hessian = &base + &deltas[worker];
            let noise = gradient_offsets(d, m, cfg.sigma2, &mut rng);
            Arc::new(QuadraticLocal {
                hessian,
                linear: linears[worker].clone(),
                noise,
            }) as Arc<dyn LocalObjective>
        })
        .collect();

    // Closed-form optimum of the mean objective.
    let mut mean_hessian = DMatrix::zeros(d, d);
    for l in &locals {
        mean_hessian += l.as_quadratic().unwrap().hessian();
    }
    mean_hessian /= p as f64;
    let mut mean_linear = DVector::zeros(d);
    for l in &linears {
        mean_linear += l;
    }
    mean_linear /= p as f64;
    let lu = mean_hessian.clone().lu();
    let x_star = lu.solve(&mean_linear).ok_or_else(|| {
        ProblemError::NotPositiveDefinite("mean Hessian solve failed".to_string())
    })?;
    let value = 0.5 * (&mean_hessian * &x_star).dot(&x_star) - mean_linear.dot(&x_star);
    let optimum = Optimum {
        point: ParamVector::new(x_star.as_slice().to_vec()),
        value,
    };

    let meta = ProblemMeta {
        workers: p,
        dim: d,
        smoothness: cfg.smoothness,
        hetero: cfg.zeta,
        grad_variance: Some(cfg.sigma2),
        total_examples: Some((p * m) as u64),
        optimum: Some(optimum),
    };
    Problem::new(
        meta,
        locals,
        None,
        InitSpec::Gaussian { dim: d, scale: 1.0 },
    )
}

/// `m` gradient offsets in exact `+u, -u` pairs with mean squared norm
/// `sigma2`.
fn gradient_offsets(dim: usize, m: usize, sigma2: f64, rng: &mut ChaCha8Rng) -> Vec<ParamVector> {
    if sigma2 == 0.0 {
        return vec![ParamVector::zeros(dim); m];
    }
    let half: Vec<ParamVector> = (0..m / 2)
        .map(|_| {
            ParamVector::new(
                (0..dim)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(rng);
                        g
                    })
                    .collect(),
            )
        })
        .collect();
    let sq_sum: f64 = half.iter().map(|u| u.norm_sq()).sum();
    let scale = (sigma2 * m as f64 / (2.0 * sq_sum)).sqrt();
    let mut noise = Vec::with_capacity(m);
    for u in half {
        let plus = u.scale(scale);
        let minus = plus.scale(-1.0);
        noise.push(plus);
        noise.push(minus);
    }
    noise
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_heterogeneity_makes_all_hessians_identical() {
        let problem = gen_quadratic_family(4, 6, 0.0, 1.0, 0.1, 3).unwrap();
        let h0 = problem.local(0).as_quadratic().unwrap().hessian().clone();
        for p in 1..4 {
            let hp = problem.local(p).as_quadratic().unwrap().hessian();
            assert_eq!(&h0, hp);
        }
    }

    #[test]
    fn pairwise_distance_matches_declared_zeta() {
        let problem = gen_quadratic_family(2, 4, 0.5, 1.0, 0.1, 7).unwrap();
        let a = problem.local(0).as_quadratic().unwrap().hessian();
        let b = problem.local(1).as_quadratic().unwrap().hessian();
        let measured = spectral_norm_sym(&(a - b));
        assert!(
            (measured - 0.5).abs() <= 1e-10,
            "measured {measured} != 0.5"
        );
    }

    #[test]
    fn gradient_vanishes_at_the_closed_form_optimum() {
        for seed in [1u64, 9, 133] {
            let problem = gen_quadratic_family(5, 8, 0.3, 1.0, 0.2, seed).unwrap();
            let opt = problem.meta.optimum.as_ref().unwrap();
            let g = problem.global_grad(&opt.point);
            assert!(g.norm() <= 1e-9, "gradient norm {} at optimum", g.norm());
        }
    }

    #[test]
    fn per_example_gradients_average_to_the_full_gradient() {
        use rand::SeedableRng;
        let problem = gen_quadratic_family(3, 5, 0.4, 1.0, 0.1, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = problem.sample_init(&mut rng);
        for p in 0..3 {
            let local = problem.local(p);
            let m = local.support_size().unwrap();
            let mut acc = ParamVector::zeros(5);
            for e in 0..m {
                acc.add_assign(&local.grad(&x, e));
            }
            acc.scale_assign(1.0 / m as f64);
            let full = local.full_grad(&x);
            let rel = acc.distance(&full) / full.norm().max(1e-300);
            assert!(rel <= 1e-12, "relative error {rel}");
        }
    }

    #[test]
    fn declared_variance_is_attained_exactly() {
        let problem = gen_quadratic_family(2, 6, 0.2, 1.0, 0.1, 21).unwrap();
        for p in 0..2 {
            let q = problem.local(p).as_quadratic().unwrap();
            let m = q.noise.len();
            let mean_sq: f64 = q.noise.iter().map(|n| n.norm_sq()).sum::<f64>() / m as f64;
            assert!((mean_sq - 1.0).abs() <= 1e-12, "variance {mean_sq}");
        }
    }

    #[test]
    fn star_layout_keeps_pairwise_distance_and_centers_the_mean() {
        let mut cfg = QuadraticFamilyConfig::new(8, 4, 0.5, 1.0, 0.1);
        cfg.layout = PerturbationLayout::Star;
        let problem = gen_quadratic_family_with(cfg, 17).unwrap();
        let hot = problem.local(0).as_quadratic().unwrap().hessian();
        let other = problem.local(3).as_quadratic().unwrap().hessian();
        let measured = spectral_norm_sym(&(hot - other));
        assert!((measured - 0.5).abs() <= 1e-10);
        let g = problem.global_grad(&problem.meta.optimum.as_ref().unwrap().point);
        assert!(g.norm() <= 1e-9);
    }

    #[test]
    fn rejects_zeta_above_twice_smoothness() {
        let err = gen_quadratic_family(2, 4, 2.5, 1.0, 0.1, 1).unwrap_err();
        assert!(matches!(err, ProblemError::HeterogeneityTooLarge { .. }));
    }

    #[test]
    fn rejects_nonpositive_mu() {
        let err = gen_quadratic_family(2, 4, 0.5, 1.0, 0.0, 1).unwrap_err();
        assert!(matches!(err, ProblemError::NotPositiveDefinite(_)));
    }

    #[test]
    fn rejects_mu_inside_the_perturbation_band() {
        // L - zeta/2 = 0.25 < mu
        let err = gen_quadratic_family(2, 4, 1.5, 1.0, 0.3, 1).unwrap_err();
        assert!(matches!(err, ProblemError::NotPositiveDefinite(_)));
    }
}
