//! Posterior-based representative sampling and the full-information oracle.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::posterior::{BetaPosterior, Minority, NiwPosterior};
use super::simplex::{minimize_on_simplex, SimplexOptions};
use super::{argmin, Allocation, SamplerPolicy, StepContext};
use crate::demographics::{distance_raw, Metric, Record};
use crate::error::{arg, state, Result};
use crate::rng::StreamRng;

/// How a posterior draw becomes a candidate step mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementMode {
    /// Use the drawn site mean as the batch mean.
    #[default]
    PlugIn,
    /// Simulate `k` individuals from the drawn distribution and average.
    Simulated,
}

/// Per-site belief about the demographic mean.
#[derive(Debug, Clone, PartialEq)]
pub enum SitePrior {
    Beta(BetaPosterior),
    Niw(NiwPosterior),
    /// Zero-variance belief; draws always return this mean.
    Known(Vec<f64>),
}

impl SitePrior {
    pub fn dim(&self) -> usize {
        match self {
            SitePrior::Beta(p) => p.dim(),
            SitePrior::Niw(p) => p.dim(),
            SitePrior::Known(m) => m.len(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            SitePrior::Beta(p) => p.mean(),
            SitePrior::Niw(p) => p.mu.iter().copied().collect(),
            SitePrior::Known(m) => m.clone(),
        }
    }

    /// One posterior draw turned into a candidate mean for a batch of `k`.
    pub fn draw_step_mean<R: Rng + ?Sized>(&self, k: usize, mode: ImprovementMode, rng: &mut R) -> Vec<f64> {
        match self {
            SitePrior::Known(m) => m.clone(),
            SitePrior::Beta(p) => {
                let probs = p.sample(rng);
                match mode {
                    ImprovementMode::PlugIn => probs,
                    ImprovementMode::Simulated => probs
                        .iter()
                        .map(|&q| (0..k).filter(|_| rng.random::<f64>() < q).count() as f64 / k as f64)
                        .collect(),
                }
            }
            SitePrior::Niw(p) => {
                let (theta, sigma) = p.sample(rng);
                match mode {
                    ImprovementMode::PlugIn => theta.iter().copied().collect(),
                    ImprovementMode::Simulated => {
                        let d = p.dim();
                        let l = sigma.cholesky().map(|c| c.l()).unwrap_or_else(|| nalgebra::DMatrix::zeros(d, d));
                        let mut acc = nalgebra::DVector::zeros(d);
                        for _ in 0..k {
                            let z = nalgebra::DVector::from_iterator(d, (0..d).map(|_| rng.sample(StandardNormal)));
                            acc += &theta + &l * z;
                        }
                        (acc / k as f64).iter().copied().collect()
                    }
                }
            }
        }
    }
}

/// Beliefs and bookkeeping shared by PBRS and D-PBRS.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub priors: Vec<SitePrior>,
    /// Accumulated allocation fraction per site.
    pub visits: Vec<f64>,
    /// Steps observed so far.
    pub t: usize,
    pub horizon: usize,
    /// Minority boost; 1 disables it.
    pub beta: f64,
    pub mode: ImprovementMode,
}

impl PolicyState {
    pub fn new(priors: Vec<SitePrior>, horizon: usize, beta: f64) -> Result<Self> {
        if priors.is_empty() {
            return arg("at least one site prior is required");
        }
        let d = priors[0].dim();
        if priors.iter().any(|p| p.dim() != d) {
            return arg("site priors disagree on dimension");
        }
        if horizon == 0 {
            return arg("horizon must be positive");
        }
        if !(beta >= 1.0 && beta.is_finite()) {
            return arg("minority boost must be at least 1");
        }
        let m = priors.len();
        Ok(Self { priors, visits: vec![0.0; m], t: 0, horizon, beta, mode: ImprovementMode::default() })
    }

    pub fn with_mode(mut self, mode: ImprovementMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn num_sites(&self) -> usize {
        self.priors.len()
    }

    fn check(&self, ctx: &StepContext<'_>) -> Result<()> {
        if self.priors.is_empty() {
            return state("priors are not initialized");
        }
        if self.priors[0].dim() != ctx.target.dim() {
            return arg("prior dimension differs from target dimension");
        }
        Ok(())
    }

    fn draw_all(&self, ctx: &StepContext<'_>, rng: &mut StreamRng) -> Vec<Vec<f64>> {
        self.priors.iter().map(|p| p.draw_step_mean(ctx.k, self.mode, rng)).collect()
    }
}

/// Thompson-style PBRS: draw a candidate batch mean per site and pick the
/// site whose batch brings the dataset closest to the target.
pub fn pbrs_select(state: &PolicyState, ctx: &StepContext<'_>, rng: &mut StreamRng) -> Result<Allocation> {
    state.check(ctx)?;
    let draws = state.draw_all(ctx, rng);
    let scores = draws.iter().map(|a| ctx.projected_distance(a)).collect::<Result<Vec<_>>>()?;
    Ok(Allocation::one_hot(state.num_sites(), argmin(&scores)))
}

/// D-PBRS step result.
#[derive(Debug, Clone, PartialEq)]
pub struct DpbrsOutcome {
    pub allocation: Allocation,
    /// Metric value at the chosen fractions under the drawn site means.
    pub objective: f64,
    pub converged: bool,
}

/// Splits the step across sites by minimizing the projected distance over
/// the simplex, using one posterior draw per site.
pub fn dpbrs_allocate(
    state: &PolicyState,
    ctx: &StepContext<'_>,
    opts: SimplexOptions,
    rng: &mut StreamRng,
) -> Result<DpbrsOutcome> {
    state.check(ctx)?;
    let m = state.num_sites();
    let draws = state.draw_all(ctx, rng);
    let v = ctx.target.as_slice();
    let mix = |rho: &[f64]| -> Vec<f64> {
        let mut a = vec![0.0; v.len()];
        for (r, draw) in rho.iter().zip(&draws) {
            for (al, dl) in a.iter_mut().zip(draw) {
                *al += r * dl;
            }
        }
        ctx.projected_mean(&a)
    };
    let vertex_scores = draws.iter().map(|a| ctx.projected_distance(a)).collect::<Result<Vec<_>>>()?;
    let best_vertex = argmin(&vertex_scores);
    let scale = ctx.k as f64 / (ctx.dataset.count() + ctx.k) as f64;

    // Chain rule through the mixed mean: d/d rho_j = scale * <grad, draw_j>.
    let pull_back = |g: Vec<f64>| -> Vec<f64> {
        draws.iter().map(|draw| scale * draw.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()).collect()
    };

    let start = Allocation::one_hot(m, best_vertex).rho;
    let (rho, converged) = match ctx.metric {
        Metric::L2 => {
            let f = |rho: &[f64]| -> f64 { mix(rho).iter().zip(v).map(|(u, t)| (u - t) * (u - t)).sum() };
            let grad = |rho: &[f64]| pull_back(mix(rho).iter().zip(v).map(|(u, t)| 2.0 * (u - t)).collect());
            let sol = minimize_on_simplex(f, grad, start, opts);
            (sol.x, sol.converged)
        }
        Metric::Kl { .. } => {
            let f = |rho: &[f64]| distance_raw(ctx.metric, v, &mix(rho)).unwrap_or(f64::INFINITY);
            let grad = |rho: &[f64]| pull_back(ctx.metric.gradient(v, &mix(rho)));
            let sol = minimize_on_simplex(f, grad, start, opts);
            (sol.x, sol.converged)
        }
        Metric::L1 => l1_allocation(&draws, &ctx.projected_mean(&vec![0.0; v.len()]), scale, v)
            .map_or_else(|| (start, false), |rho| (rho, true)),
    };

    let objective = distance_raw(ctx.metric, v, &mix(&rho))?;
    let (rho, objective) = if objective <= vertex_scores[best_vertex] {
        (rho, objective)
    } else {
        (Allocation::one_hot(m, best_vertex).rho, vertex_scores[best_vertex])
    };
    let allocation = Allocation { rho, remainder_site: best_vertex };
    Ok(DpbrsOutcome { allocation, objective, converged })
}

/// Exact L1 allocation: the mixed mean is `base + scale * sum_j rho_j draw_j`,
/// so minimizing its L1 distance to `v` over the simplex is a linear program
/// with one slack per coordinate.
fn l1_allocation(draws: &[Vec<f64>], base: &[f64], scale: f64, v: &[f64]) -> Option<Vec<f64>> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let rho: Vec<_> = draws.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    lp.add_constraint(rho.iter().map(|&r| (r, 1.0)).collect::<Vec<_>>().as_slice(), ComparisonOp::Eq, 1.0);
    for l in 0..v.len() {
        let e = lp.add_var(1.0, (0.0, f64::INFINITY));
        let terms = |sign: f64| {
            let mut t: Vec<_> = rho.iter().zip(draws).map(|(&r, d)| (r, sign * scale * d[l])).collect();
            t.push((e, 1.0));
            t
        };
        lp.add_constraint(terms(-1.0).as_slice(), ComparisonOp::Ge, base[l] - v[l]);
        lp.add_constraint(terms(1.0).as_slice(), ComparisonOp::Ge, v[l] - base[l]);
    }
    let sol = lp.solve().ok()?.into_solution().ok()?;
    let x: Vec<f64> = rho.iter().map(|&r| sol.var_value(r).max(0.0)).collect();
    let total: f64 = x.iter().sum();
    (total > 0.0).then(|| x.iter().map(|r| r / total).collect())
}

/// Folds a batch from `site` into its posterior.
///
/// The boost `beta^(1 - t/T)` uses the 1-based step `ctx.step`. Minority
/// values are judged against the dataset as it stood before this batch.
/// In continuous mode each observation is weighted by the boost raised to
/// the fraction of its coordinates on the under-represented side.
pub fn update_priors(
    state: &mut PolicyState,
    ctx: &StepContext<'_>,
    site: usize,
    rho: f64,
    batch: &[Record],
) -> Result<()> {
    if site >= state.num_sites() {
        return arg(format!("site {site} out of range"));
    }
    let exponent = (1.0 - ctx.step as f64 / state.horizon as f64).max(0.0);
    let boost = state.beta.powf(exponent);
    let freq = ctx.frequencies();
    let v = ctx.target.as_slice();
    let minority: Vec<Minority> =
        (0..v.len()).map(|l| Minority::from_frequency(freq.as_ref().map(|f| f[l]), v[l])).collect();
    let rows: Vec<&[f64]> = batch.iter().map(|r| r.a.as_slice()).collect();
    match &mut state.priors[site] {
        SitePrior::Beta(p) => p.update(&rows, &minority, boost),
        SitePrior::Niw(p) => {
            let weights: Vec<f64> = rows
                .iter()
                .map(|a| {
                    let hits = minority
                        .iter()
                        .enumerate()
                        .filter(|&(l, side)| {
                            let f = freq.as_ref().map_or(0.0, |f| f[l]);
                            match side {
                                Minority::One => a[l] > f,
                                Minority::Zero => a[l] < f,
                                Minority::Neither => false,
                            }
                        })
                        .count();
                    boost.powf(hits as f64 / a.len() as f64)
                })
                .collect();
            p.update(&rows, &weights);
        }
        SitePrior::Known(_) => {}
    }
    state.visits[site] += rho;
    Ok(())
}

/// Full-information choice: the site whose true mean, taken as the batch
/// mean, brings the dataset closest to the target.
pub fn opt_select(true_means: &[Vec<f64>], ctx: &StepContext<'_>) -> Result<Allocation> {
    if true_means.is_empty() {
        return arg("no sites");
    }
    let scores = true_means.iter().map(|a| ctx.projected_distance(a)).collect::<Result<Vec<_>>>()?;
    Ok(Allocation::one_hot(true_means.len(), argmin(&scores)))
}

#[derive(Debug, Clone)]
pub struct PbrsPolicy {
    pub state: PolicyState,
}

impl SamplerPolicy for PbrsPolicy {
    fn name(&self) -> String {
        "pbrs".into()
    }

    fn allocate(&mut self, ctx: &StepContext<'_>, rng: &mut StreamRng) -> Result<Allocation> {
        pbrs_select(&self.state, ctx, rng)
    }

    fn observe(&mut self, ctx: &StepContext<'_>, site: usize, rho: f64, batch: &[Record]) -> Result<()> {
        update_priors(&mut self.state, ctx, site, rho, batch)?;
        self.state.t = ctx.step;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DpbrsPolicy {
    pub state: PolicyState,
    pub options: SimplexOptions,
    pub nonconverged: usize,
}

impl DpbrsPolicy {
    pub fn new(state: PolicyState, options: SimplexOptions) -> Self {
        Self { state, options, nonconverged: 0 }
    }
}

impl SamplerPolicy for DpbrsPolicy {
    fn name(&self) -> String {
        "dpbrs".into()
    }

    fn allocate(&mut self, ctx: &StepContext<'_>, rng: &mut StreamRng) -> Result<Allocation> {
        let out = dpbrs_allocate(&self.state, ctx, self.options, rng)?;
        if !out.converged {
            self.nonconverged += 1;
        }
        Ok(out.allocation)
    }

    fn observe(&mut self, ctx: &StepContext<'_>, site: usize, rho: f64, batch: &[Record]) -> Result<()> {
        update_priors(&mut self.state, ctx, site, rho, batch)?;
        self.state.t = ctx.step;
        Ok(())
    }

    fn warnings(&self) -> usize {
        self.nonconverged
    }
}

#[derive(Debug, Clone)]
pub struct OptPolicy {
    pub true_means: Vec<Vec<f64>>,
}

impl SamplerPolicy for OptPolicy {
    fn name(&self) -> String {
        "opt".into()
    }

    fn allocate(&mut self, ctx: &StepContext<'_>, _rng: &mut StreamRng) -> Result<Allocation> {
        opt_select(&self.true_means, ctx)
    }

    fn observe(&mut self, _: &StepContext<'_>, _: usize, _: f64, _: &[Record]) -> Result<()> {
        Ok(())
    }
}
