//! Closed-form unfairness next to Monte Carlo estimates for a list of
//! group sample sizes.

use serde::{Deserialize, Serialize};

use super::output::{fmt_num, fmt_opt, Table};
use crate::error::{arg, Result};
use crate::rng::derive_seed;
use crate::theory::{expected_unfairness, monte_carlo_unfairness, sample_bounds, UnivariateGroupModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    pub seed: u64,
    pub sigma0: f64,
    pub sigma1: f64,
    /// Overrides the centred model built from `sigma0` and `sigma1`.
    pub model: Option<UnivariateGroupModel>,
    pub pairs: Vec<(usize, usize)>,
    pub trials: usize,
    pub n_test: usize,
    pub delta: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sigma0: 2.0,
            sigma1: 1.0,
            model: None,
            pairs: vec![(100, 100), (400, 400), (200, 50)],
            trials: 100_000,
            n_test: 1000,
            delta: 0.05,
        }
    }
}

impl TheoryConfig {
    pub fn model(&self) -> Result<UnivariateGroupModel> {
        match self.model {
            Some(m) => UnivariateGroupModel::new(m.groups),
            None => UnivariateGroupModel::centered(self.sigma0, self.sigma1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub n0: usize,
    pub n1: usize,
    pub expected: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub n0_min: f64,
    pub n1_min: f64,
    pub feasible: bool,
    pub seed: u64,
}

impl TheoryRow {
    /// Monte Carlo estimate over closed form; undefined when the latter is 0.
    pub fn ratio(&self) -> Option<f64> {
        (self.expected != 0.0).then(|| self.mc_mean / self.expected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryOutput {
    pub config: TheoryConfig,
    pub rows: Vec<TheoryRow>,
}

impl TheoryOutput {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "n0", "n1", "expected", "mc_mean", "mc_se", "ratio", "n0_min", "n1_min", "feasible",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.n0.to_string(),
                r.n1.to_string(),
                fmt_num(r.expected),
                fmt_num(r.mc_mean),
                fmt_num(r.mc_se),
                fmt_opt(r.ratio()),
                fmt_num(r.n0_min),
                fmt_num(r.n1_min),
                r.feasible.to_string(),
            ]);
        }
        t
    }
}

/// Closed forms use `sigma0` and `sigma1`; the simulation uses `model()`.
/// Pair `i` is simulated from seed `derive_seed(seed, [i])`.
pub fn theory_table(cfg: &TheoryConfig) -> Result<TheoryOutput> {
    if cfg.pairs.is_empty() {
        return arg("at least one (n0, n1) pair is required");
    }
    let model = cfg.model()?;
    let rows = cfg
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &(n0, n1))| {
            let seed = derive_seed(cfg.seed, &[i as u64]);
            let mc = monte_carlo_unfairness(&model, n0, n1, cfg.n_test, cfg.trials, seed)?;
            let b = sample_bounds(cfg.sigma0, cfg.sigma1, n0 as f64, n1 as f64, cfg.delta)?;
            Ok(TheoryRow {
                n0,
                n1,
                expected: expected_unfairness(cfg.sigma0, cfg.sigma1, n0 as f64, n1 as f64)?,
                mc_mean: mc.mean,
                mc_se: mc.std_error,
                n0_min: b.n0_min,
                n1_min: b.n1_min,
                feasible: b.feasible,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoryOutput { config: cfg.clone(), rows })
}
