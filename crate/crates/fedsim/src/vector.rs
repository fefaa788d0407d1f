//! Dense parameter vectors with fixed-order reductions.
//!
//! All model state in the simulator is a flat `f64` vector. Reductions over
//! workers use a fixed pairwise tree so that results are independent of
//! scheduling and reproducible bit for bit.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A point in parameter space: the model `x` of dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps raw coordinates. Panics on non-finite entries; every vector
    /// entering the simulator is finite by construction and the optimizer
    /// loops re-check at step boundaries.
    pub fn new(entries: Vec<f64>) -> Self {
        assert!(
            entries.iter().all(|v| v.is_finite()),
            "parameter vector must have finite entries"
        );
        ParamVector(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + other`.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        ParamVector(self.0.iter().map(|a| a * c).collect())
    }

    /// `self += other`, in place.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    /// `self += c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for a in self.0.iter_mut() {
            *a *= c;
        }
    }

    /// Gradient step `self - eta * dir`, the one update formula shared by
    /// every optimizer so that coupled runs agree bit for bit.
    pub fn gd_step(&self, eta: f64, dir: &Self) -> Self {
        assert_eq!(self.dim(), dir.dim(), "dimension mismatch");
        ParamVector(
            self.0
                .iter()
                .zip(&dir.0)
                .map(|(x, d)| x - eta * d)
                .collect(),
        )
    }

    /// Elementwise `a - b + c`, the recursive estimator update. One shared
    /// implementation keeps coupled algorithms bitwise identical.
    pub fn recursion_update(a: &Self, b: &Self, c: &Self) -> Self {
        assert_eq!(a.dim(), b.dim(), "dimension mismatch");
        assert_eq!(a.dim(), c.dim(), "dimension mismatch");
        ParamVector(
            a.0.iter()
                .zip(&b.0)
                .zip(&c.0)
                .map(|((x, y), z)| (x - y) + z)
                .collect(),
        )
    }

    /// Euclidean distance, `||self - other||`.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Bitwise equality (each coordinate has identical bits).
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.dim() == other.dim()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Sum of `vectors` with a fixed pairwise-tree order (split at the midpoint,
/// combine left then right). The order depends only on the slice length, so
/// any execution schedule produces identical bits.
pub fn tree_sum(vectors: &[ParamVector]) -> ParamVector {
    assert!(!vectors.is_empty(), "tree_sum of empty slice");
    fn go(vs: &[ParamVector]) -> ParamVector {
        match vs.len() {
            1 => vs[0].clone(),
            2 => vs[0].add(&vs[1]),
            n => {
                let mid = n / 2;
                go(&vs[..mid]).add(&go(&vs[mid..]))
            }
        }
    }
    go(vectors)
}

/// Mean of `vectors` under the fixed pairwise-tree order: tree sum, then a
/// single division by the count. Exact for equal inputs when the count is a
/// power of two; within a few ulps otherwise.
pub fn tree_mean(vectors: &[ParamVector]) -> ParamVector {
    let mut sum = tree_sum(vectors);
    sum.scale_assign(1.0 / vectors.len() as f64);
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Double-double accumulation used as the extended-precision oracle for
    /// the tree reduction. Independent of the pairwise-tree code path.
    fn dd_mean(vectors: &[ParamVector], coord: usize) -> f64 {
        let mut s = 0.0f64;
        let mut e = 0.0f64; // running compensation
        for v in vectors {
            let x = v[coord];
            let t = s + x;
            // Neumaier two-sum
            if s.abs() >= x.abs() {
                e += (s - t) + x;
            } else {
                e += (x - t) + s;
            }
            s = t;
        }
        (s + e) / vectors.len() as f64
    }

    fn ulp_distance(a: f64, b: f64) -> u64 {
        if a == b {
            return 0;
        }
        let (ia, ib) = (a.to_bits() as i64, b.to_bits() as i64);
        // Map to a monotone integer line (valid for same-sign finite values;
        // cross-sign distances are large and would fail the assertions anyway).
        let m = |i: i64| if i < 0 { i64::MIN - i } else { i };
        (m(ia) - m(ib)).unsigned_abs()
    }

    #[test]
    fn mean_of_equal_inputs_is_exact_for_power_of_two() {
        let v = ParamVector::new(vec![0.1, -1.7, 3.25, 1e-3]);
        let inputs: Vec<_> = (0..8).map(|_| v.clone()).collect();
        assert!(tree_mean(&inputs).bits_eq(&v));
    }

    #[test]
    fn mean_of_equal_inputs_is_within_one_ulp_generally() {
        let v = ParamVector::new(vec![0.1, -1.7, 3.25, 1e-3, 7.77]);
        for n in [3usize, 5, 7, 10, 13] {
            let inputs: Vec<_> = (0..n).map(|_| v.clone()).collect();
            let m = tree_mean(&inputs);
            for i in 0..v.dim() {
                assert!(
                    ulp_distance(m[i], v[i]) <= 1,
                    "n={n} coord {i}: {} vs {}",
                    m[i],
                    v[i]
                );
            }
        }
    }

    #[test]
    fn mean_of_basis_vectors_is_uniform() {
        let p = 6;
        let inputs: Vec<_> = (0..p)
            .map(|i| {
                let mut v = ParamVector::zeros(p);
                v[i] = 1.0;
                v
            })
            .collect();
        let m = tree_mean(&inputs);
        for i in 0..p {
            assert_eq!(m[i], 1.0 / p as f64);
        }
    }

    #[test]
    fn mean_with_large_magnitude_spread_matches_extended_precision() {
        // Magnitudes span nine decades; same-signed so the spread, not
        // cancellation, is what stresses the reduction.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let inputs: Vec<_> = (0..16)
            .map(|_| {
                ParamVector::new(
                    (0..8)
                        .map(|_| {
                            let mag = 10f64.powi(rng.gen_range(-3..=6));
                            (rng.gen::<f64>() + 0.5) * mag
                        })
                        .collect(),
                )
            })
            .collect();
        let m = tree_mean(&inputs);
        for i in 0..8 {
            let reference = dd_mean(&inputs, i);
            assert!(
                ulp_distance(m[i], reference) <= 4,
                "coord {i}: {} vs {}",
                m[i],
                reference
            );
        }
    }

    #[test]
    fn recursion_update_matches_componentwise_formula() {
        let a = ParamVector::new(vec![1.0, 2.0]);
        let b = ParamVector::new(vec![0.5, -1.0]);
        let c = ParamVector::new(vec![10.0, 20.0]);
        let r = ParamVector::recursion_update(&a, &b, &c);
        assert_eq!(r.as_slice(), &[(1.0 - 0.5) + 10.0, (2.0 - -1.0) + 20.0]);
    }

    #[test]
    #[should_panic(expected = "finite")]
    fn construction_rejects_nan() {
        ParamVector::new(vec![0.0, f64::NAN]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn permuting_inputs_moves_the_mean_by_at_most_four_ulps(
            seed in 0u64..1000,
            n in 2usize..12,
        ) {
            use rand::seq::SliceRandom;
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<_> = (0..n)
                .map(|_| ParamVector::new(
                    (0..4).map(|_| (rng.gen::<f64>() + 0.5) * 10f64.powi(rng.gen_range(-2..=6))).collect(),
                ))
                .collect();
            let mut shuffled = inputs.clone();
            shuffled.shuffle(&mut rng);
            let a = tree_mean(&inputs);
            let b = tree_mean(&shuffled);
            for i in 0..4 {
                prop_assert!(ulp_distance(a[i], b[i]) <= 4);
            }
        }

        #[test]
        fn gd_step_then_reverse_recovers_within_tolerance(
            x in prop::collection::vec(-1e3f64..1e3, 1..16),
            eta in 1e-6f64..1.0,
        ) {
            let v = ParamVector::new(x.clone());
            let dir = ParamVector::new(x.iter().map(|a| a * 0.5 + 1.0).collect());
            let stepped = v.gd_step(eta, &dir);
            let back = stepped.gd_step(-eta, &dir);
            for i in 0..v.dim() {
                prop_assert!((back[i] - v[i]).abs() <= 1e-9 * (1.0 + v[i].abs()));
            }
        }
    }
}
