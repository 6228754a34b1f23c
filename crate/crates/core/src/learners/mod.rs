//! Downstream classifiers: per-group thresholds, logistic regression and
//! gradient-boosted trees.
//!
//! Feature matrices are row-major slices of rows. Every learner accepts
//! optional per-example weights; an integer weight behaves like that many
//! copies of the example.

mod gbdt;
mod logistic;
mod threshold;

use serde::{Deserialize, Serialize};

pub use gbdt::{fit_gbdt, GbdtConfig, GbdtModel, Tree, TreeNode};
pub use logistic::{fit_logistic, logistic_loss, logistic_loss_gradient, LinearModel, LogisticConfig};
pub use threshold::{fit_threshold, ThresholdClassifier};

use crate::error::{arg, Result};

/// A fitted model producing a real-valued score per row.
pub trait Classifier {
    fn n_features(&self) -> usize;

    /// Log-odds score for one row.
    fn score(&self, x: &[f64]) -> f64;
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability of the positive class for every row.
pub fn predict_proba<C: Classifier + ?Sized>(model: &C, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = model.n_features();
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return arg(format!("model expects {d} features, row has {}", row.len()));
    }
    Ok(x.iter().map(|r| sigmoid(model.score(r))).collect())
}

/// Learner choice as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    Logistic(LogisticConfig),
    Gbdt(GbdtConfig),
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::Logistic(LogisticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Gbdt(GbdtModel),
}

impl Classifier for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_features(),
            Model::Gbdt(m) => m.n_features(),
        }
    }

    fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::Linear(m) => m.score(x),
            Model::Gbdt(m) => m.score(x),
        }
    }
}

impl LearnerConfig {
    pub fn fit(&self, x: &[Vec<f64>], y: &[u8], weights: Option<&[f64]>) -> Result<Model> {
        Ok(match self {
            LearnerConfig::Logistic(c) => Model::Linear(fit_logistic(x, y, weights, c)?),
            LearnerConfig::Gbdt(c) => Model::Gbdt(fit_gbdt(x, y, weights, c)?),
        })
    }
}

/// Checks shapes and values shared by the fitters and returns the
/// effective weights, scaled by `N / (2 N_c)` when `class_balanced`. If one
/// class is absent the balancing factor is skipped.
pub(crate) fn prepare(x: &[Vec<f64>], y: &[u8], weights: Option<&[f64]>, class_balanced: bool) -> Result<Vec<f64>> {
    if x.is_empty() {
        return arg("training set is empty");
    }
    if x.len() != y.len() {
        return arg("features and labels differ in length");
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return arg("rows differ in length");
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return arg("features must be finite");
    }
    if y.iter().any(|&v| v > 1) {
        return arg("labels must be 0 or 1");
    }
    let mut w = match weights {
        Some(w) if w.len() != y.len() => return arg("weights and labels differ in length"),
        Some(w) if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => return arg("weights must be finite and nonnegative"),
        Some(w) => w.to_vec(),
        None => vec![1.0; y.len()],
    };
    if !(w.iter().sum::<f64>() > 0.0) {
        return arg("total weight must be positive");
    }
    if class_balanced {
        let total: f64 = w.iter().sum();
        let pos: f64 = w.iter().zip(y).filter(|(_, &l)| l == 1).map(|(w, _)| w).sum();
        let neg = total - pos;
        if pos > 0.0 && neg > 0.0 {
            let (wp, wn) = (total / (2.0 * pos), total / (2.0 * neg));
            for (wi, &l) in w.iter_mut().zip(y) {
                *wi *= if l == 1 { wp } else { wn };
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        for z in [-3.0, -0.5, 0.1, 2.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
            assert!(sigmoid(z) < sigmoid(z + 0.1));
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LinearModel { weights: vec![0.0, 0.0], bias: 0.0 };
        assert_eq!(predict_proba(&m, &[vec![1.0, -4.0], vec![3.0, 2.0]]).unwrap(), vec![0.5, 0.5]);
        let one = LinearModel { weights: vec![1.0], bias: 0.0 };
        assert_eq!(predict_proba(&one, &[vec![0.0]]).unwrap(), vec![0.5]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = LinearModel { weights: vec![0.0, 0.0], bias: 0.0 };
        assert!(predict_proba(&m, &[vec![1.0]]).is_err());
    }

    #[test]
    fn balancing_weights() {
        let x = vec![vec![0.0]; 4];
        let w = prepare(&x, &[1, 0, 0, 0], None, true).unwrap();
        assert_eq!(w, vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(prepare(&x, &[1, 1, 1, 1], None, true).unwrap(), vec![1.0; 4]);
        assert!(prepare(&[vec![f64::NAN]], &[1], None, false).is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = LearnerConfig::Gbdt(GbdtConfig { max_depth: 3, n_estimators: 20, ..GbdtConfig::default() });
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<LearnerConfig>(&s).unwrap(), c);
    }
}
