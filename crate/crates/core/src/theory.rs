//! Closed forms relating group sample sizes to the accuracy gap of a
//! per-group threshold classifier, and a Monte Carlo estimate of the same
//! gap under the univariate model `y = 1[x + eps_g >= theta_g]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::learners::fit_threshold;
use crate::rng::{substream, STREAM_TRIAL};

fn check_positive(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(*v > 0.0 && v.is_finite()) {
            return arg(format!("{name} must be positive and finite, got {v}"));
        }
    }
    Ok(())
}

/// `sqrt(2/pi) * (sigma0 / sqrt(n0) - sigma1 / sqrt(n1))`.
pub fn expected_unfairness(sigma0: f64, sigma1: f64, n0: f64, n1: f64) -> Result<f64> {
    check_positive(&[("sigma0", sigma0), ("sigma1", sigma1), ("n0", n0), ("n1", n1)])?;
    Ok((2.0 / std::f64::consts::PI).sqrt() * (sigma0 / n0.sqrt() - sigma1 / n1.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBounds {
    /// Smallest `n0` keeping the gap within `delta` for the given `n1`.
    pub n0_min: f64,
    /// Smallest `n1` keeping the gap within `delta` for the given `n0`.
    pub n1_min: f64,
    pub feasible: bool,
}

/// Both lower bounds implied by `|expected_unfairness| <= delta`.
pub fn sample_bounds(sigma0: f64, sigma1: f64, n0: f64, n1: f64, delta: f64) -> Result<SampleBounds> {
    check_positive(&[("sigma0", sigma0), ("sigma1", sigma1), ("n0", n0), ("n1", n1)])?;
    if !(delta >= 0.0) {
        return arg("delta must be nonnegative");
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let n0_min = n1 * (sigma0 / (delta * (half_pi * n1).sqrt() + sigma1)).powi(2);
    let n1_min = n0 * (sigma1 / (delta * (half_pi * n0).sqrt() + sigma0)).powi(2);
    Ok(SampleBounds { n0_min, n1_min, feasible: n0 >= n0_min && n1 >= n1_min })
}

/// `n0 = (sigma0 / sigma1)^2 * n1`, the size at which the expected gap vanishes.
pub fn zero_unfairness_ratio(sigma0: f64, sigma1: f64, n1: f64) -> Result<f64> {
    check_positive(&[("sigma0", sigma0), ("sigma1", sigma1), ("n1", n1)])?;
    Ok((sigma0 * sigma0) / (sigma1 * sigma1) * n1)
}

/// One group of the univariate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    /// Label threshold.
    pub theta: f64,
    /// Noise mean.
    pub mu: f64,
    /// Noise standard deviation.
    pub sigma: f64,
    /// Feature mean; defaults to `theta`.
    #[serde(default)]
    pub feature_mean: Option<f64>,
    /// Feature standard deviation; defaults to `sigma`.
    #[serde(default)]
    pub feature_sd: Option<f64>,
}

impl GroupParams {
    pub fn new(theta: f64, mu: f64, sigma: f64) -> Self {
        Self { theta, mu, sigma, feature_mean: None, feature_sd: None }
    }

    fn feature(&self) -> (f64, f64) {
        (self.feature_mean.unwrap_or(self.theta), self.feature_sd.unwrap_or(self.sigma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnivariateGroupModel {
    pub groups: [GroupParams; 2],
}

impl UnivariateGroupModel {
    pub fn new(groups: [GroupParams; 2]) -> Result<Self> {
        for g in &groups {
            let (m, s) = g.feature();
            check_positive(&[("sigma", g.sigma), ("feature_sd", s)])?;
            if !(g.theta.is_finite() && g.mu.is_finite() && m.is_finite()) {
                return arg("model parameters must be finite");
            }
        }
        Ok(Self { groups })
    }

    /// `theta = mu = 0` in both groups, noise and feature spread `sigma_g`.
    pub fn centered(sigma0: f64, sigma1: f64) -> Result<Self> {
        Self::new([GroupParams::new(0.0, 0.0, sigma0), GroupParams::new(0.0, 0.0, sigma1)])
    }

    /// Draws `(x, y)` for group `g`.
    pub fn draw<R: Rng + ?Sized>(&self, g: usize, rng: &mut R) -> (f64, u8) {
        let p = &self.groups[g];
        let (m, s) = p.feature();
        let x = Normal::new(m, s).expect("validated").sample(rng);
        let eps = Normal::new(p.mu, p.sigma).expect("validated").sample(rng);
        (x, u8::from(x + eps >= p.theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    /// Mean of `error_0 - error_1` over trials.
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// One trial: fit per-group thresholds on `n0 + n1` draws and return the
/// difference of test error rates on `n_test` fresh draws per group.
pub fn unfairness_trial<R: Rng + ?Sized>(model: &UnivariateGroupModel, n: [usize; 2], n_test: usize, rng: &mut R) -> f64 {
    let mut train = Vec::with_capacity(n[0] + n[1]);
    for g in 0..2 {
        for _ in 0..n[g] {
            let (x, y) = model.draw(g, rng);
            train.push((x, g, y));
        }
    }
    let clf = fit_threshold(&train).expect("non-empty finite training set");
    let mut err = [0.0; 2];
    for g in 0..2 {
        let wrong = (0..n_test).filter(|_| {
            let (x, y) = model.draw(g, rng);
            clf.predict(x, g) != y
        });
        err[g] = wrong.count() as f64 / n_test as f64;
    }
    err[0] - err[1]
}

/// Mean and standard error of the error-rate gap over independent trials.
///
/// Trial `i` draws from its own substream of `seed`, and the reduction runs
/// in trial order, so the result does not depend on thread count.
pub fn monte_carlo_unfairness(
    model: &UnivariateGroupModel,
    n0: usize,
    n1: usize,
    n_test: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n0 == 0 || n1 == 0 || n_test == 0 {
        return arg("group sizes and n_test must be positive");
    }
    if trials < 2 {
        return arg("at least two trials are required");
    }
    let deltas: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| unfairness_trial(model, [n0, n1], n_test, &mut substream(seed, &[STREAM_TRIAL, i as u64])))
        .collect();
    let mean = deltas.iter().sum::<f64>() / trials as f64;
    let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (trials - 1) as f64;
    Ok(MonteCarloEstimate { mean, std_error: (var / trials as f64).sqrt(), trials })
}
