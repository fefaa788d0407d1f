//! Independent oracles and statistical tests for the estimator properties
//! the optimizers rely on: the bias-reduction bound, the SARAH
//! specialization equivalence, snapshot variance scaling, estimator
//! unbiasedness and gradient correctness.
//!
//! Statistical checks pass at 3 standard errors; reports carry a Bonferroni
//! note when a check aggregates several sub-tests. Every report is
//! reproducible from its (name, seed) pair.

mod checks;

pub use checks::{
    check_bias_bound, check_bias_tightness, check_gradient, check_sarah_equivalence,
    check_snapshot_scaling, check_snapshot_variance, check_unbiasedness,
};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

/// The outcome of one check: what was measured, against which bound, under
/// which seed.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub status: CheckStatus,
    /// Named measured values (max ratio, estimates, distances ...).
    pub measured: Vec<(String, f64)>,
    /// The bound or tolerance the measurement was held against.
    pub bound: Option<f64>,
    pub samples: u64,
    pub seed: u64,
    pub notes: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }

    pub fn measured_value(&self, key: &str) -> Option<f64> {
        self.measured
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
    }

    /// One human-readable summary line.
    pub fn summary_line(&self) -> String {
        let status = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        let measured = self
            .measured
            .iter()
            .map(|(k, v)| format!("{k}={v:.3e}"))
            .collect::<Vec<_>>()
            .join(" ");
        let bound = self
            .bound
            .map(|b| format!(" bound={b:.3e}"))
            .unwrap_or_default();
        format!(
            "{status}  {name:<28} {measured}{bound}  (n={n}, seed={seed})",
            name = self.name,
            n = self.samples,
            seed = self.seed
        )
    }
}

/// Runs the full check suite with seeds derived from `seed`. Deterministic;
/// runs in well under a minute.
pub fn run_suite(seed: u64) -> Vec<CheckReport> {
    use crate::problems::gen_quadratic_family;
    let mut reports = Vec::new();

    for (i, zeta) in [0.0, 0.5].into_iter().enumerate() {
        let problem = gen_quadratic_family(4, 8, zeta, 1.0, 0.1, seed ^ (i as u64 + 1)).unwrap();
        reports.push(check_bias_bound(&problem, 1000, seed + i as u64));
    }
    reports.push(check_bias_tightness(0.5, seed));

    {
        let problem = gen_quadratic_family(4, 10, 0.3, 1.0, 0.1, seed ^ 0x5a).unwrap();
        let params = crate::algorithms::AlgoParams {
            eta: 0.1,
            local_steps: 1,
            batch: 8,
            snapshot_batch: 64,
            inner_rounds: 4,
            stages: 10,
            auto_inner_rounds: false,
        };
        reports.push(check_sarah_equivalence(&problem, &params, seed));
    }

    {
        let problem = gen_quadratic_family(10, 12, 0.2, 1.0, 0.1, seed ^ 0x7c).unwrap();
        for b_tilde in [1, 4] {
            reports.push(check_snapshot_variance(&problem, b_tilde, 4000, seed));
        }
        reports.push(check_snapshot_variance(&problem, 64, 1, seed));
        reports.push(check_snapshot_scaling(&problem, 1, 4000, seed));
        reports.push(check_unbiasedness(&problem, 8, 4000, seed));
        reports.push(check_gradient(&problem, 50, seed));
    }

    {
        let cfg = crate::problems::ClassPartitionConfig {
            q: 0.5,
            num_classes: 4,
            samples_per_class: 30,
            feature_dim: 10,
            label_noise: 0.0,
        };
        let model = crate::problems::mlp_objective(8, crate::problems::DEFAULT_L2).unwrap();
        let (problem, _) = crate::problems::gen_classification(&cfg, &model, seed ^ 0x91).unwrap();
        reports.push(check_gradient(&problem, 40, seed));
    }

    reports
}
