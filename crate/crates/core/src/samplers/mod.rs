//! Site-selection policies.
//!
//! Every policy maps the collection history to an [`Allocation`] of the
//! next step's budget over sites. Bayesian policies (PBRS, D-PBRS) keep a
//! conjugate posterior per site; the oracle policy knows each site's true
//! mean; the baselines work from empirical means of what they have seen.
//! All argmax/argmin ties resolve to the lowest site id.

mod baselines;
mod pbrs;
pub mod posterior;
pub mod simplex;

use serde::{Deserialize, Serialize};

pub use baselines::{baseline_select, BaselineKind, BaselinePolicy, BaselineState};
pub use pbrs::{
    dpbrs_allocate, opt_select, pbrs_select, update_priors, DpbrsOutcome, DpbrsPolicy, ImprovementMode, OptPolicy,
    PbrsPolicy, PolicyState, SitePrior,
};

use crate::demographics::{distance, CollectedDataset, Metric, Record, TargetVector};
use crate::error::{arg, Result};
use crate::rng::StreamRng;

/// Fractions of a step's budget assigned to each site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub rho: Vec<f64>,
    /// Site that receives the samples left over after flooring `rho * k`.
    pub remainder_site: usize,
}

impl Allocation {
    pub fn one_hot(m: usize, site: usize) -> Self {
        let mut rho = vec![0.0; m];
        rho[site] = 1.0;
        Self { rho, remainder_site: site }
    }

    /// The single selected site, for one-hot allocations.
    pub fn hot_site(&self) -> Option<usize> {
        let nonzero: Vec<usize> = (0..self.rho.len()).filter(|&j| self.rho[j] != 0.0).collect();
        match nonzero.as_slice() {
            [j] => Some(*j),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.iter().any(|&r| !(r >= 0.0)) {
            return arg("allocation entries must be nonnegative");
        }
        let total: f64 = self.rho.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return arg(format!("allocation sums to {total}, not 1"));
        }
        if self.remainder_site >= self.rho.len() {
            return arg("remainder site out of range");
        }
        Ok(())
    }

    /// Integer sample counts for a budget of `k`: each site gets
    /// `floor(rho_j k)` and the leftover goes to `remainder_site`.
    ///
    /// A slack of 1e-6 absorbs optimizer round-off so that 0.4999999 of 40
    /// still yields 20. The total can never exceed `k` while `m < 10^6`.
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut counts: Vec<usize> = self.rho.iter().map(|&r| (r * k as f64 + 1e-6).floor() as usize).collect();
        let used: usize = counts.iter().sum();
        counts[self.remainder_site] += k.saturating_sub(used);
        counts
    }
}

/// What a policy sees when deciding step `step` (1-based) of `horizon`.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub dataset: &'a CollectedDataset,
    pub target: &'a TargetVector,
    pub metric: &'a Metric,
    pub k: usize,
    pub step: usize,
    pub horizon: usize,
}

impl StepContext<'_> {
    /// Dataset mean after adding a batch of `k` records with mean `step_mean`.
    pub fn projected_mean(&self, step_mean: &[f64]) -> Vec<f64> {
        let n = self.dataset.count() as f64;
        let k = self.k as f64;
        self.dataset.running_sum().iter().zip(step_mean).map(|(s, m)| (s + k * m) / (n + k)).collect()
    }

    pub fn projected_distance(&self, step_mean: &[f64]) -> Result<f64> {
        distance(self.metric, self.target, &self.projected_mean(step_mean))
    }

    /// Current dataset mean, `None` while empty.
    pub fn frequencies(&self) -> Option<Vec<f64>> {
        self.dataset.mean().ok()
    }
}

/// A site-selection strategy driven step by step by the harness.
pub trait SamplerPolicy: Send {
    fn name(&self) -> String;

    /// Chooses the next allocation.
    fn allocate(&mut self, ctx: &StepContext<'_>, rng: &mut StreamRng) -> Result<Allocation>;

    /// Receives the records drawn from `site`, which was given fraction
    /// `rho` of the step. Called before the batch joins the dataset.
    fn observe(&mut self, ctx: &StepContext<'_>, site: usize, rho: f64, batch: &[Record]) -> Result<()>;

    /// Number of optimizer runs that stopped without converging.
    fn warnings(&self) -> usize {
        0
    }
}

/// Index of the smallest score; ties resolve to the lowest index.
pub(crate) fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = j;
        }
    }
    best
}
