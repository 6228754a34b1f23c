//! Sensitive-attribute vectors, collected datasets and the representativeness
//! objective.
//!
//! A dataset is representative of a target vector `v` when the mean of its
//! sensitive vectors is close to `v` under a chosen [`Metric`].

use serde::{Deserialize, Serialize};

use crate::error::{arg, state, Result};

/// One individual's sensitive attributes.
///
/// Binary-coded vectors hold exact 0/1 entries; continuous vectors may hold
/// any finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensitiveVector(Vec<f64>);

impl SensitiveVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return arg("sensitive vector entries must be finite");
        }
        Ok(Self(values))
    }

    /// Builds a binary-coded vector, rejecting anything other than 0 or 1.
    pub fn binary(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return arg("binary sensitive vector entries must be exactly 0 or 1");
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for SensitiveVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Desired mean of the sensitive vectors, each entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TargetVector(Vec<f64>);

impl TargetVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return arg("target vector must have at least one entry");
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return arg("target vector entries must lie in [0, 1]");
        }
        Ok(Self(values))
    }

    /// `d` copies of `value`.
    pub fn uniform(d: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for TargetVector {
    type Error = crate::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TargetVector> for Vec<f64> {
    fn from(v: TargetVector) -> Self {
        v.0
    }
}

/// A single individual: features, sensitive attributes and a binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub x: Vec<f64>,
    pub a: SensitiveVector,
    pub y: u8,
}

impl Record {
    pub fn new(x: Vec<f64>, a: SensitiveVector, y: u8) -> Result<Self> {
        if y > 1 {
            return arg(format!("label must be 0 or 1, got {y}"));
        }
        Ok(Self { x, a, y })
    }
}

/// Dissimilarity between a target vector and a dataset mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    L1,
    #[default]
    L2,
    /// Summed per-coordinate Bernoulli KL divergence `KL(v || u)`, both
    /// arguments clamped to `[epsilon, 1 - epsilon]`.
    Kl {
        #[serde(default = "default_kl_epsilon")]
        epsilon: f64,
    },
}

fn default_kl_epsilon() -> f64 {
    Metric::KL_EPSILON
}

impl Metric {
    pub const KL_EPSILON: f64 = 1e-6;

    pub fn kl() -> Self {
        Metric::Kl { epsilon: Self::KL_EPSILON }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Kl { .. } => "kl",
        }
    }

    /// Gradient of the distance with respect to `u`, used by the allocation
    /// optimizer and the scalarized baseline. For L1 this is a subgradient
    /// (zero on coordinates where `u == v`); for L2 it is zero at `u == v`.
    pub fn gradient(&self, v: &[f64], u: &[f64]) -> Vec<f64> {
        match *self {
            Metric::L1 => v
                .iter()
                .zip(u)
                .map(|(&a, &b)| {
                    if b > a {
                        1.0
                    } else if b < a {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Metric::L2 => {
                let norm = l2(v, u);
                if norm == 0.0 {
                    vec![0.0; v.len()]
                } else {
                    v.iter().zip(u).map(|(&a, &b)| (b - a) / norm).collect()
                }
            }
            Metric::Kl { epsilon } => v
                .iter()
                .zip(u)
                .map(|(&a, &b)| {
                    let p = a.clamp(epsilon, 1.0 - epsilon);
                    let q = b.clamp(epsilon, 1.0 - epsilon);
                    if b != q {
                        0.0
                    } else {
                        -p / q + (1.0 - p) / (1.0 - q)
                    }
                })
                .collect(),
        }
    }
}

fn l2(v: &[f64], u: &[f64]) -> f64 {
    v.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    (term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0)
}

/// Distance between target `v` and vector `u` under `metric`.
pub fn distance(metric: &Metric, v: &TargetVector, u: &[f64]) -> Result<f64> {
    distance_raw(metric, v.as_slice(), u)
}

/// [`distance`] on plain slices.
pub fn distance_raw(metric: &Metric, v: &[f64], u: &[f64]) -> Result<f64> {
    if v.len() != u.len() {
        return arg(format!("dimension mismatch: target has {}, vector has {}", v.len(), u.len()));
    }
    Ok(match *metric {
        Metric::L1 => v.iter().zip(u).map(|(a, b)| (a - b).abs()).sum(),
        Metric::L2 => l2(v, u),
        Metric::Kl { epsilon } => {
            if !(epsilon > 0.0 && epsilon < 0.5) {
                return arg("KL epsilon must lie in (0, 0.5)");
            }
            v.iter()
                .zip(u)
                .map(|(&a, &b)| {
                    bernoulli_kl(a.clamp(epsilon, 1.0 - epsilon), b.clamp(epsilon, 1.0 - epsilon))
                })
                .sum()
        }
    })
}

/// The union of per-step batches, with a running sum of sensitive vectors.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CollectedDataset {
    dim: usize,
    batches: Vec<Vec<Record>>,
    running_sum: Vec<f64>,
    count: usize,
}

impl CollectedDataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, batches: Vec::new(), running_sum: vec![0.0; dim], count: 0 }
    }

    /// Builds a dataset from already-formed batches.
    pub fn from_batches(dim: usize, batches: Vec<Vec<Record>>) -> Result<Self> {
        let mut ds = Self::new(dim);
        for b in batches {
            ds.push_batch(b)?;
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn batches(&self) -> &[Vec<Record>] {
        &self.batches
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> + '_ {
        self.batches.iter().flatten()
    }

    pub fn running_sum(&self) -> &[f64] {
        &self.running_sum
    }

    /// Appends one step's batch. Every record must have dimension `dim`.
    pub fn push_batch(&mut self, batch: Vec<Record>) -> Result<()> {
        if let Some(r) = batch.iter().find(|r| r.a.dim() != self.dim) {
            return arg(format!("record has dimension {}, dataset has {}", r.a.dim(), self.dim));
        }
        for r in &batch {
            for (s, v) in self.running_sum.iter_mut().zip(r.a.as_slice()) {
                *s += v;
            }
        }
        self.count += batch.len();
        self.batches.push(batch);
        Ok(())
    }

    /// Sum of all sensitive vectors computed from scratch, in insertion order.
    pub fn recompute_sum(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for r in self.records() {
            for (s, v) in sum.iter_mut().zip(r.a.as_slice()) {
                *s += v;
            }
        }
        sum
    }

    /// Mean sensitive vector.
    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return state("dataset is empty");
        }
        let n = self.count as f64;
        Ok(self.running_sum.iter().map(|s| s / n).collect())
    }
}

/// Distance from `v` to the dataset's mean sensitive vector.
pub fn representativeness_distance(ds: &CollectedDataset, v: &TargetVector, metric: &Metric) -> Result<f64> {
    let mean = ds.mean()?;
    distance(metric, v, &mean)
}

/// Mean of the per-step batch means, `(1/T) sum_t avg(A_t)`.
///
/// For equal batch sizes this equals the global mean; unequal batch sizes
/// are rejected since the identity no longer holds.
pub fn stepwise_mean_identity(ds: &CollectedDataset) -> Result<Vec<f64>> {
    let Some(first) = ds.batches.first() else {
        return state("dataset has no batches");
    };
    let k = first.len();
    if k == 0 || ds.batches.iter().any(|b| b.len() != k) {
        return state("stepwise mean requires every batch to have the same nonzero size");
    }
    let mut acc = vec![0.0; ds.dim];
    for batch in &ds.batches {
        let mut step = vec![0.0; ds.dim];
        for r in batch {
            for (s, v) in step.iter_mut().zip(r.a.as_slice()) {
                *s += v;
            }
        }
        for (a, s) in acc.iter_mut().zip(step) {
            *a += s / k as f64;
        }
    }
    let t = ds.batches.len() as f64;
    Ok(acc.into_iter().map(|a| a / t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(a: &[f64]) -> Record {
        Record::new(vec![], SensitiveVector::new(a.to_vec()).unwrap(), 0).unwrap()
    }

    fn tv(v: &[f64]) -> TargetVector {
        TargetVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn l1_worked_example() {
        let d = distance(&Metric::L1, &tv(&[0.3, 0.7]), &[0.25, 0.60]).unwrap();
        assert!((d - 0.15).abs() < 1e-15, "{d}");
    }

    #[test]
    fn l2_half_half_to_origin() {
        let d = distance(&Metric::L2, &tv(&[0.5, 0.5]), &[0.0, 0.0]).unwrap();
        assert_eq!(d, std::f64::consts::FRAC_1_SQRT_2);
    }

    #[test]
    fn identical_inputs_are_zero() {
        for m in [Metric::L1, Metric::L2, Metric::kl()] {
            assert_eq!(distance(&m, &tv(&[0.2, 0.9, 0.0]), &[0.2, 0.9, 0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_argument_error() {
        let err = distance(&Metric::L1, &tv(&[0.5]), &[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, crate::Error::Argument(_)));
    }

    #[test]
    fn kl_clamps_extremes() {
        let d = distance(&Metric::kl(), &tv(&[0.0]), &[1.0]).unwrap();
        assert!(d.is_finite() && d > 10.0);
    }

    #[test]
    fn empty_dataset_is_state_error() {
        let ds = CollectedDataset::new(2);
        let err = representativeness_distance(&ds, &tv(&[0.5, 0.5]), &Metric::L1).unwrap_err();
        assert!(matches!(err, crate::Error::State(_)));
    }

    #[test]
    fn representativeness_examples() {
        let v = tv(&[0.5, 0.5]);
        let ds = CollectedDataset::from_batches(2, vec![vec![rec(&[1.0, 0.0]), rec(&[0.0, 1.0])]]).unwrap();
        assert_eq!(representativeness_distance(&ds, &v, &Metric::L1).unwrap(), 0.0);

        let ds = CollectedDataset::from_batches(
            2,
            vec![vec![rec(&[1.0, 1.0]), rec(&[1.0, 1.0]), rec(&[1.0, 0.0]), rec(&[0.0, 0.0])]],
        )
        .unwrap();
        assert_eq!(representativeness_distance(&ds, &v, &Metric::L1).unwrap(), 0.25);
    }

    #[test]
    fn stepwise_mean_examples() {
        let ds = CollectedDataset::from_batches(1, vec![vec![rec(&[1.0]), rec(&[0.0])], vec![rec(&[1.0]), rec(&[1.0])]])
            .unwrap();
        assert_eq!(stepwise_mean_identity(&ds).unwrap(), vec![0.75]);
        assert_eq!(ds.mean().unwrap(), vec![0.75]);

        let single = CollectedDataset::from_batches(1, vec![vec![rec(&[1.0]), rec(&[0.0]), rec(&[0.0])]]).unwrap();
        assert_eq!(stepwise_mean_identity(&single).unwrap(), single.mean().unwrap());
    }

    #[test]
    fn unequal_batches_rejected() {
        let ds = CollectedDataset::from_batches(1, vec![vec![rec(&[1.0])], vec![rec(&[1.0]), rec(&[0.0])]]).unwrap();
        assert!(matches!(stepwise_mean_identity(&ds), Err(crate::Error::State(_))));
    }

    #[test]
    fn batch_dimension_checked() {
        let mut ds = CollectedDataset::new(2);
        assert!(ds.push_batch(vec![rec(&[1.0])]).is_err());
    }

    #[test]
    fn binary_constructor_rejects_fractions() {
        assert!(SensitiveVector::binary(vec![0.0, 1.0]).is_ok());
        assert!(SensitiveVector::binary(vec![0.5]).is_err());
    }

    fn history() -> impl Strategy<Value = (usize, Vec<Vec<Vec<f64>>>)> {
        (1usize..=4, 1usize..=10, 1usize..=20).prop_flat_map(|(d, k, t)| {
            let batch = prop::collection::vec(prop::collection::vec(0.0f64..=1.0, d), k);
            (Just(d), prop::collection::vec(batch, t))
        })
    }

    proptest! {
        #[test]
        fn stepwise_mean_matches_global_mean((d, hist) in history()) {
            let batches = hist.iter().map(|b| b.iter().map(|a| rec(a)).collect()).collect();
            let ds = CollectedDataset::from_batches(d, batches).unwrap();
            let step = stepwise_mean_identity(&ds).unwrap();
            let global = ds.mean().unwrap();
            for (a, b) in step.iter().zip(&global) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn running_sum_matches_recomputation((d, hist) in history()) {
            let mut ds = CollectedDataset::new(d);
            for b in &hist {
                ds.push_batch(b.iter().map(|a| rec(a)).collect()).unwrap();
            }
            let recomputed = ds.recompute_sum();
            prop_assert_eq!(ds.running_sum(), recomputed.as_slice());
            prop_assert_eq!(ds.count(), hist.iter().map(Vec::len).sum::<usize>());
        }

        #[test]
        fn distance_is_convex(
            v in prop::collection::vec(0.0f64..=1.0, 3),
            u in prop::collection::vec(0.01f64..=0.99, 3),
            w in prop::collection::vec(0.01f64..=0.99, 3),
            theta in 0.0f64..=1.0,
        ) {
            for m in [Metric::L1, Metric::L2, Metric::kl()] {
                let mix: Vec<f64> = u.iter().zip(&w).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
                let lhs = distance_raw(&m, &v, &mix).unwrap();
                let rhs = theta * distance_raw(&m, &v, &u).unwrap() + (1.0 - theta) * distance_raw(&m, &v, &w).unwrap();
                prop_assert!(lhs <= rhs + 1e-12, "{m:?}: {lhs} > {rhs}");
            }
        }

        #[test]
        fn l1_l2_symmetric_nonnegative(
            v in prop::collection::vec(0.0f64..=1.0, 4),
            u in prop::collection::vec(0.0f64..=1.0, 4),
        ) {
            for m in [Metric::L1, Metric::L2] {
                let a = distance_raw(&m, &v, &u).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert_eq!(a, distance_raw(&m, &u, &v).unwrap());
            }
            prop_assert!(distance_raw(&Metric::kl(), &v, &u).unwrap() >= 0.0);
        }
    }
}
