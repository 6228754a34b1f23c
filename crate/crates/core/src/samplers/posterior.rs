//! Conjugate posteriors over a site's demographic distribution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

/// Which value of a binary coordinate is currently under-represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Minority {
    One,
    Zero,
    Neither,
}

impl Minority {
    /// Compares the running dataset frequency with the target for one
    /// coordinate. An empty dataset has no minority.
    pub fn from_frequency(freq: Option<f64>, target: f64) -> Self {
        match freq {
            Some(f) if f < target => Minority::One,
            Some(f) if f > target => Minority::Zero,
            _ => Minority::Neither,
        }
    }
}

/// Independent Beta posteriors, one per binary coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    /// Pseudo-counts for value 1.
    pub alpha: Vec<f64>,
    /// Pseudo-counts for value 0.
    pub beta: Vec<f64>,
}

impl BetaPosterior {
    /// Centres the prior on `mean` with total pseudo-count `strength` per
    /// coordinate. Means are clamped away from 0 and 1 so every
    /// pseudo-count stays strictly positive.
    pub fn from_mean(mean: &[f64], strength: f64) -> Result<Self> {
        if !(strength > 0.0 && strength.is_finite()) {
            return arg("prior strength must be positive");
        }
        let eps = 1e-3;
        let p: Vec<f64> = mean.iter().map(|m| m.clamp(eps, 1.0 - eps)).collect();
        Ok(Self {
            alpha: p.iter().map(|p| strength * p).collect(),
            beta: p.iter().map(|p| strength * (1.0 - p)).collect(),
        })
    }

    /// `Beta(1, 1)` on every coordinate.
    pub fn uniform(d: usize) -> Self {
        Self { alpha: vec![1.0; d], beta: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a / (a + b)).collect()
    }

    /// One Thompson draw of the per-coordinate frequencies.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| Beta::new(a, b).expect("positive pseudo-counts").sample(rng))
            .collect()
    }

    /// Adds observed counts. Counts of the under-represented value on each
    /// coordinate are multiplied by `boost`.
    pub fn update(&mut self, batch: &[&[f64]], minority: &[Minority], boost: f64) {
        for l in 0..self.dim() {
            let ones: f64 = batch.iter().map(|a| a[l]).sum();
            let zeros = batch.len() as f64 - ones;
            let (w1, w0) = match minority.get(l).copied().unwrap_or(Minority::Neither) {
                Minority::One => (boost, 1.0),
                Minority::Zero => (1.0, boost),
                Minority::Neither => (1.0, 1.0),
            };
            self.alpha[l] += w1 * ones;
            self.beta[l] += w0 * zeros;
        }
    }
}

/// Normal-inverse-Wishart posterior over a site's mean and covariance:
/// `Sigma ~ IW(psi, nu)`, `theta | Sigma ~ N(mu, Sigma / kappa)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwPosterior {
    pub mu: DVector<f64>,
    pub kappa: f64,
    pub psi: DMatrix<f64>,
    pub nu: f64,
}

impl NiwPosterior {
    /// Prior centred on `mean` whose expected covariance is `cov`, with the
    /// site not yet visited: `kappa = 1`, `nu = d + 2`, `psi = (0 + 1) cov`.
    pub fn from_estimate(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return arg("prior covariance must be d x d");
        }
        if cov.clone().cholesky().is_none() {
            return arg("prior covariance must be symmetric positive definite");
        }
        Ok(Self { mu: DVector::from_column_slice(mean), kappa: 1.0, psi: cov.clone(), nu: d as f64 + 2.0 })
    }

    /// The default prior with zero mean and identity covariance.
    pub fn standard(d: usize) -> Self {
        Self::from_estimate(&vec![0.0; d], &DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Draws `(theta, Sigma)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DMatrix<f64>) {
        let sigma = sample_inverse_wishart(&self.psi, self.nu, rng);
        let scaled = &sigma / self.kappa;
        let l = cholesky_or_jitter(&scaled);
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        (&self.mu + l * z, sigma)
    }

    /// Weighted conjugate update. With unit weights this is the textbook
    /// update with `n` observations.
    pub fn update(&mut self, batch: &[&[f64]], weights: &[f64]) {
        let d = self.dim();
        let total: f64 = weights.iter().sum();
        if batch.is_empty() || total <= 0.0 {
            return;
        }
        let mut xbar = DVector::zeros(d);
        for (a, &w) in batch.iter().zip(weights) {
            xbar += DVector::from_column_slice(a) * w;
        }
        xbar /= total;
        let mut scatter = DMatrix::zeros(d, d);
        for (a, &w) in batch.iter().zip(weights) {
            let diff = DVector::from_column_slice(a) - &xbar;
            scatter += &diff * diff.transpose() * w;
        }
        let kappa_n = self.kappa + total;
        let shift = &xbar - &self.mu;
        self.psi += scatter + &shift * shift.transpose() * (self.kappa * total / kappa_n);
        self.mu = (&self.mu * self.kappa + &xbar * total) / kappa_n;
        self.kappa = kappa_n;
        self.nu += total;
    }
}

fn cholesky_or_jitter(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut jitter = 0.0;
    loop {
        let candidate = if jitter == 0.0 { m.clone() } else { m + DMatrix::identity(m.nrows(), m.ncols()) * jitter };
        if let Some(c) = candidate.cholesky() {
            return c.l();
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
    }
}

/// Draws from the inverse-Wishart `IW(psi, nu)` by inverting a Bartlett
/// draw from `Wishart(psi^-1, nu)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(psi: &DMatrix<f64>, nu: f64, rng: &mut R) -> DMatrix<f64> {
    let d = psi.nrows();
    let psi_inv = psi.clone().try_inverse().expect("scale matrix must be invertible");
    let l = cholesky_or_jitter(&psi_inv);
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let df = nu - i as f64;
        a[(i, i)] = ChiSquared::new(df).expect("degrees of freedom exceed dimension").sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    let inv = w.try_inverse().expect("Wishart draw is positive definite");
    (&inv + inv.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn beta_textbook_update() {
        let mut p = BetaPosterior::uniform(2);
        let batch: Vec<&[f64]> = vec![&[1.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]];
        p.update(&batch, &[Minority::One, Minority::Zero], 1.0);
        assert_eq!(p.alpha, vec![3.0, 2.0]);
        assert_eq!(p.beta, vec![2.0, 3.0]);
    }

    #[test]
    fn beta_minority_boost() {
        let mut p = BetaPosterior::uniform(1);
        let boost = 2f64.powf(1.0 - 0.5);
        p.update(&[&[1.0]], &[Minority::One], boost);
        assert!((p.alpha[0] - 1.0 - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(p.beta[0], 1.0);
    }

    #[test]
    fn beta_prior_from_target() {
        let p = BetaPosterior::from_mean(&[0.5, 0.0], 4.0).unwrap();
        assert_eq!(p.alpha[0], 2.0);
        assert!(p.alpha[1] > 0.0 && p.beta[1] < 4.0);
        assert!(BetaPosterior::from_mean(&[0.5], 0.0).is_err());
    }

    #[test]
    fn niw_textbook_update() {
        let mut p = NiwPosterior::from_estimate(&[0.2, 0.4], &DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3])).unwrap();
        let prior = p.clone();
        let data = [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.25, 0.75]];
        let batch: Vec<&[f64]> = data.iter().map(|a| a.as_slice()).collect();
        p.update(&batch, &[1.0; 4]);

        // Closed form with n = 4.
        let n = 4.0;
        let xbar = [(1.0 + 0.5 + 0.0 + 0.25) / n, (0.0 + 0.5 + 1.0 + 0.75) / n];
        let kappa_n = prior.kappa + n;
        assert_eq!(p.kappa, kappa_n);
        assert_eq!(p.nu, prior.nu + n);
        for i in 0..2 {
            let mu = (prior.kappa * prior.mu[i] + n * xbar[i]) / kappa_n;
            assert!((p.mu[i] - mu).abs() < 1e-14);
        }
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = data.iter().map(|a| (a[i] - xbar[i]) * (a[j] - xbar[j])).sum();
                let m = prior.kappa * n / kappa_n * (xbar[i] - prior.mu[i]) * (xbar[j] - prior.mu[j]);
                assert!((p.psi[(i, j)] - (prior.psi[(i, j)] + s + m)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_wishart_mean() {
        let psi = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let nu = 8.0;
        let mut rng = substream(21, &[]);
        let draws = 20_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..draws {
            acc += sample_inverse_wishart(&psi, nu, &mut rng);
        }
        acc /= draws as f64;
        let expected = &psi / (nu - 2.0 - 1.0);
        assert!((acc - expected).abs().max() < 0.02);
    }

    #[test]
    fn niw_sample_centres_on_mu() {
        let mut p = NiwPosterior::standard(2);
        let data: Vec<[f64; 2]> = (0..200).map(|i| [0.3 + 0.001 * (i % 5) as f64, 0.7]).collect();
        let batch: Vec<&[f64]> = data.iter().map(|a| a.as_slice()).collect();
        p.update(&batch, &vec![1.0; batch.len()]);
        let mut rng = substream(22, &[]);
        let mean0: f64 = (0..2000).map(|_| p.sample(&mut rng).0[0]).sum::<f64>() / 2000.0;
        assert!((mean0 - p.mu[0]).abs() < 0.01);
    }

    #[test]
    fn minority_from_frequency() {
        assert_eq!(Minority::from_frequency(Some(0.3), 0.5), Minority::One);
        assert_eq!(Minority::from_frequency(Some(0.7), 0.5), Minority::Zero);
        assert_eq!(Minority::from_frequency(Some(0.5), 0.5), Minority::Neither);
        assert_eq!(Minority::from_frequency(None, 0.5), Minority::Neither);
    }
}
