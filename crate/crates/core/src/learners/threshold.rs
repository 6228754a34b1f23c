use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

/// Predicts 1 iff `x >= threshold(g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdClassifier {
    pub thresholds: BTreeMap<usize, f64>,
    /// Mean over all training samples, used for groups never seen.
    pub pooled: f64,
}

impl ThresholdClassifier {
    pub fn threshold(&self, group: usize) -> f64 {
        self.thresholds.get(&group).copied().unwrap_or(self.pooled)
    }

    pub fn predict(&self, x: f64, group: usize) -> u8 {
        u8::from(x >= self.threshold(group))
    }
}

/// Sets each group's threshold to the mean of its `x` values.
pub fn fit_threshold(samples: &[(f64, usize, u8)]) -> Result<ThresholdClassifier> {
    if samples.is_empty() {
        return arg("no samples");
    }
    if samples.iter().any(|s| !s.0.is_finite()) {
        return arg("features must be finite");
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(x, g, _) in samples {
        let e = sums.entry(g).or_default();
        e.0 += x;
        e.1 += 1;
    }
    let pooled = samples.iter().map(|s| s.0).sum::<f64>() / samples.len() as f64;
    let thresholds = sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect();
    Ok(ThresholdClassifier { thresholds, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_means() {
        let c = fit_threshold(&[(0.0, 0, 0), (1.0, 0, 1), (1.0, 1, 0), (2.0, 1, 1), (3.0, 1, 0), (6.0, 1, 1)]).unwrap();
        assert_eq!(c.threshold(0), 0.5);
        assert_eq!(c.threshold(1), 3.0);
        assert_eq!(c.predict(3.0, 1), 1);
        assert_eq!(c.predict(2.999, 1), 0);
    }

    #[test]
    fn constant_samples() {
        let c = fit_threshold(&[(1.7, 0, 0); 5]).unwrap();
        assert_eq!(c.threshold(0), 1.7);
    }

    #[test]
    fn missing_group_uses_pooled_mean() {
        let c = fit_threshold(&[(1.0, 0, 0), (3.0, 0, 1)]).unwrap();
        assert_eq!(c.threshold(1), 2.0);
    }
}
