use serde::{Deserialize, Serialize};

use super::{prepare, sigmoid, Classifier};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Initial step; backtracking shrinks it as needed.
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Stop once the gradient's largest entry falls below this.
    pub tol: f64,
    pub class_balanced: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { learning_rate: 1.0, max_iter: 500, tol: 1e-6, class_balanced: true }
    }
}

/// Log-odds of probability 1 - 1e-6.
const SATURATED_LOG_ODDS: f64 = 13.815509557963773;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Classifier for LinearModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weighted mean logistic loss.
pub fn logistic_loss(model: &LinearModel, x: &[Vec<f64>], y: &[u8], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let mut loss = 0.0;
    for ((row, &label), &wi) in x.iter().zip(y).zip(w) {
        let z = model.score(row);
        loss += wi * if label == 1 { softplus(-z) } else { softplus(z) };
    }
    loss / total
}

/// Gradient of [`logistic_loss`]; the bias component comes last.
pub fn logistic_loss_gradient(model: &LinearModel, x: &[Vec<f64>], y: &[u8], w: &[f64]) -> Vec<f64> {
    let d = model.weights.len();
    let total: f64 = w.iter().sum();
    let mut g = vec![0.0; d + 1];
    for ((row, &label), &wi) in x.iter().zip(y).zip(w) {
        let r = wi * (sigmoid(model.score(row)) - label as f64);
        for (gj, v) in g.iter_mut().zip(row) {
            *gj += r * v;
        }
        g[d] += r;
    }
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Gradient descent with Armijo backtracking on the weighted logistic loss.
pub fn fit_logistic(x: &[Vec<f64>], y: &[u8], weights: Option<&[f64]>, config: &LogisticConfig) -> Result<LinearModel> {
    let w = prepare(x, y, weights, config.class_balanced)?;
    let d = x[0].len();
    // With a single class the likelihood has no maximizer; pin the bias.
    let pos: f64 = w.iter().zip(y).filter(|(_, &l)| l == 1).map(|(w, _)| w).sum();
    let total: f64 = w.iter().sum();
    if pos == 0.0 || pos == total {
        let bias = if pos == 0.0 { -SATURATED_LOG_ODDS } else { SATURATED_LOG_ODDS };
        return Ok(LinearModel { weights: vec![0.0; d], bias });
    }
    let mut model = LinearModel { weights: vec![0.0; d], bias: 0.0 };
    let mut loss = logistic_loss(&model, x, y, &w);
    let mut step = config.learning_rate;
    for _ in 0..config.max_iter {
        let g = logistic_loss_gradient(&model, x, y, &w);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < config.tol {
            break;
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = false;
        for _ in 0..50 {
            let trial = LinearModel {
                weights: model.weights.iter().zip(&g).map(|(a, b)| a - step * b).collect(),
                bias: model.bias - step * g[d],
            };
            let trial_loss = logistic_loss(&trial, x, y, &w);
            if trial_loss <= loss - 0.5 * step * g2 {
                model = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(config.learning_rate.max(step));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::predict_proba;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn accuracy(m: &LinearModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
        let p = predict_proba(m, x).unwrap();
        p.iter().zip(y).filter(|(p, &l)| u8::from(**p >= 0.5) == l).count() as f64 / y.len() as f64
    }

    #[test]
    fn separable_points() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = [0, 1];
        let m = fit_logistic(&x, &y, None, &LogisticConfig::default()).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn constant_labels() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let m = fit_logistic(&x, &[1, 1, 1], None, &LogisticConfig::default()).unwrap();
        assert!(predict_proba(&m, &[vec![-5.0], vec![0.5], vec![9.0]]).unwrap().iter().all(|&p| p > 0.5));
        let m = fit_logistic(&x, &[0, 0, 0], None, &LogisticConfig::default()).unwrap();
        assert!(predict_proba(&m, &[vec![-5.0], vec![9.0]]).unwrap().iter().all(|&p| p < 0.5));
    }

    fn noisy_data(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>()]).collect();
        let y = x.iter().map(|r| u8::from(r[0] + 0.5 * r[1] + rng.random::<f64>() - 0.7 > 0.0)).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = noisy_data(1, 200);
        let w: Vec<f64> = (0..200).map(|i| 0.5 + (i % 3) as f64).collect();
        for model in [
            LinearModel { weights: vec![0.3, -0.7], bias: 0.2 },
            fit_logistic(&x, &y, Some(&w), &LogisticConfig { max_iter: 2000, ..Default::default() }).unwrap(),
        ] {
            let g = logistic_loss_gradient(&model, &x, &y, &w);
            let h = 1e-5;
            for j in 0..3 {
                let shift = |delta: f64| {
                    let mut m = model.clone();
                    if j < 2 {
                        m.weights[j] += delta;
                    } else {
                        m.bias += delta;
                    }
                    logistic_loss(&m, &x, &y, &w)
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                let scale = g[j].abs().max(1e-3);
                assert!((fd - g[j]).abs() / scale < 1e-4, "coord {j}: fd {fd} analytic {}", g[j]);
            }
        }
    }

    #[test]
    fn loss_decreases_every_iteration() {
        let (x, y) = noisy_data(2, 150);
        let w = vec![1.0; 150];
        let mut last = f64::INFINITY;
        for iters in 0..40 {
            let cfg = LogisticConfig { max_iter: iters, class_balanced: false, ..Default::default() };
            let m = fit_logistic(&x, &y, None, &cfg).unwrap();
            let loss = logistic_loss(&m, &x, &y, &w);
            assert!(loss <= last + 1e-15, "iteration {iters}: {loss} > {last}");
            last = loss;
        }
    }

    #[test]
    fn integer_weights_equal_duplication() {
        let (x, y) = noisy_data(3, 40);
        let w: Vec<f64> = (0..40).map(|i| (1 + i % 2) as f64).collect();
        let mut xd = vec![];
        let mut yd = vec![];
        for i in 0..40 {
            for _ in 0..(1 + i % 2) {
                xd.push(x[i].clone());
                yd.push(y[i]);
            }
        }
        let cfg = LogisticConfig { max_iter: 50, ..Default::default() };
        let a = fit_logistic(&x, &y, Some(&w), &cfg).unwrap();
        let b = fit_logistic(&xd, &yd, None, &cfg).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(fit_logistic(&[vec![f64::INFINITY]], &[1], None, &LogisticConfig::default()).is_err());
    }
}
