//! Sites (arms) and the two bias mechanisms that distort what a site returns.
//!
//! A site is either *empirical*, a finite pool of records drawn with
//! probability proportional to per-record weights, or *synthetic*, a
//! parametric generator for sensitive vectors (independent Bernoulli
//! coordinates or a multivariate normal).
//!
//! Response bias multiplies each individual's selection weight by
//! `sum_l (b a_l + (1 - b)(1 - a_l))^2` with `b = lambda / (1 + lambda)`,
//! where `a` is majority-coded (1 marks the globally larger group).
//! Causal shift raises every selection probability to the power
//! `1 + alpha * rho` each time the site receives a fraction `rho` of a step's
//! budget. Because the same exponent is applied to every individual, the
//! compounded history is one cumulative exponent per site, and the current
//! selection probability of individual `i` is proportional to `p_i^E`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::demographics::{Record, SensitiveVector, TargetVector};
use crate::error::{arg, state, Result};

/// Response-bias parameters: majority members are `lambda` times more likely
/// to respond at `gamma` of the sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseBiasConfig {
    pub lambda: f64,
    pub gamma: usize,
}

impl ResponseBiasConfig {
    pub fn new(lambda: f64, gamma: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return arg("lambda must be positive and finite");
        }
        Ok(Self { lambda, gamma })
    }

    /// The proportion scaling factor `b = lambda / (1 + lambda)`.
    pub fn b(&self) -> f64 {
        self.lambda / (1.0 + self.lambda)
    }
}

/// Response bias bound to a site pool: the scaling factor plus the
/// per-coordinate majority recoding derived from global frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseBias {
    pub b: f64,
    /// `true` where value 0 is the globally more frequent one and so gets
    /// recoded to 1 before weighting.
    pub majority_flip: Vec<bool>,
}

impl ResponseBias {
    pub fn new(config: &ResponseBiasConfig, majority_flip: Vec<bool>) -> Self {
        Self { b: config.b(), majority_flip }
    }

    /// Derives the majority coding from the pooled frequency of each
    /// coordinate across `sites`.
    pub fn from_sites(config: &ResponseBiasConfig, sites: &[Site]) -> Result<Self> {
        Ok(Self::new(config, majority_flip(sites)?))
    }

    fn coded(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(l, &v)| {
                let v = v.clamp(0.0, 1.0);
                if self.majority_flip.get(l).copied().unwrap_or(false) {
                    1.0 - v
                } else {
                    v
                }
            })
            .collect()
    }

    /// Response weight of `a` after majority coding.
    pub fn weight(&self, a: &[f64]) -> f64 {
        response_weight_unchecked(&self.coded(a), self.b)
    }

    /// Largest attainable weight in dimension `d`.
    fn max_weight(&self, d: usize) -> f64 {
        d as f64 * self.b.max(1.0 - self.b).powi(2)
    }

    fn is_neutral(&self) -> bool {
        self.b == 0.5
    }
}

fn response_weight_unchecked(a: &[f64], b: f64) -> f64 {
    a.iter().map(|&al| (b * al + (1.0 - b) * (1.0 - al)).powi(2)).sum()
}

/// Response weight `sum_l (b a_l + (1 - b)(1 - a_l))^2` for a majority-coded
/// binary vector.
pub fn response_weight(a: &SensitiveVector, b: f64) -> Result<f64> {
    if !(b > 0.0 && b < 1.0) {
        return arg(format!("b must lie in (0, 1), got {b}"));
    }
    Ok(response_weight_unchecked(a.as_slice(), b))
}

/// Per-coordinate flags marking where value 0 is more frequent than value 1
/// across the pooled sites.
pub fn majority_flip(sites: &[Site]) -> Result<Vec<bool>> {
    let Some(first) = sites.first() else {
        return arg("no sites");
    };
    let d = first.dim();
    let mut sum = vec![0.0; d];
    let mut total = 0.0;
    for site in sites {
        match &site.source {
            SiteSource::Empirical(records) => {
                for r in records {
                    for (s, v) in sum.iter_mut().zip(r.a.as_slice()) {
                        *s += v;
                    }
                }
                total += records.len() as f64;
            }
            SiteSource::Binary { probs } => {
                for (s, p) in sum.iter_mut().zip(probs) {
                    *s += p;
                }
                total += 1.0;
            }
            SiteSource::Gaussian { mean, .. } => {
                for (s, p) in sum.iter_mut().zip(mean) {
                    *s += p;
                }
                total += 1.0;
            }
        }
    }
    Ok(sum.into_iter().map(|s| s / total < 0.5).collect())
}

/// Picks the `gamma` biased sites: the first `gamma` ids of a seeded shuffle,
/// returned sorted.
pub fn choose_biased_sites<R: Rng + ?Sized>(m: usize, gamma: usize, rng: &mut R) -> Result<Vec<usize>> {
    if gamma > m {
        return arg(format!("gamma ({gamma}) exceeds the number of sites ({m})"));
    }
    let mut ids: Vec<usize> = (0..m).collect();
    ids.shuffle(rng);
    let mut chosen = ids[..gamma].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Compounded causal-shift history of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalShiftState {
    pub alpha: f64,
    /// Product of `1 + alpha * rho` over every step so far; selection
    /// probabilities are the initial ones raised to this power.
    pub cumulative_exponent: f64,
    pub applications: usize,
}

impl Default for CausalShiftState {
    fn default() -> Self {
        Self { alpha: 0.0, cumulative_exponent: 1.0, applications: 0 }
    }
}

/// Generative model behind a site.
#[derive(Debug, Clone)]
pub enum SiteSource {
    Empirical(Vec<Record>),
    /// Independent Bernoulli coordinates with the given probabilities.
    Binary { probs: Vec<f64> },
    /// Multivariate normal sensitive vectors.
    Gaussian { mean: Vec<f64>, cov: DMatrix<f64>, chol: DMatrix<f64> },
}

/// Whether an empirical site draws with or without replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    #[default]
    With,
    Without,
}

/// A data source with its own demographic distribution.
#[derive(Debug, Clone)]
pub struct Site {
    pub id: usize,
    /// Location key for ingested sites.
    pub label: Option<String>,
    source: SiteSource,
    base_weights: Vec<f64>,
    /// Records already drawn, for sampling without replacement.
    drawn: Vec<bool>,
    pub replacement: Replacement,
    /// Whether response bias applies to this site.
    pub biased: bool,
    pub shift: CausalShiftState,
}

impl Site {
    /// An empirical site with unit base weights.
    pub fn empirical(id: usize, records: Vec<Record>) -> Result<Self> {
        let weights = vec![1.0; records.len()];
        Self::empirical_weighted(id, records, weights)
    }

    pub fn empirical_weighted(id: usize, records: Vec<Record>, base_weights: Vec<f64>) -> Result<Self> {
        if base_weights.len() != records.len() {
            return arg("one base weight per record is required");
        }
        if base_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return arg("base weights must be strictly positive");
        }
        if let Some(first) = records.first() {
            if records.iter().any(|r| r.a.dim() != first.a.dim()) {
                return arg("records within a site must share a sensitive dimension");
            }
        }
        let n = records.len();
        Ok(Self {
            id,
            label: None,
            source: SiteSource::Empirical(records),
            base_weights,
            drawn: vec![false; n],
            replacement: Replacement::With,
            biased: false,
            shift: CausalShiftState::default(),
        })
    }

    /// A synthetic binary site with per-coordinate probabilities of value 1.
    pub fn binary(id: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return arg("binary site probabilities must be in [0, 1]");
        }
        Ok(Self::synthetic(id, SiteSource::Binary { probs }))
    }

    /// A synthetic continuous site with the given mean and covariance.
    pub fn gaussian(id: usize, mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return arg("covariance must be d x d");
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 {
            return arg("covariance must be symmetric");
        }
        let chol = psd_factor(&cov)?;
        Ok(Self::synthetic(id, SiteSource::Gaussian { mean, cov, chol }))
    }

    fn synthetic(id: usize, source: SiteSource) -> Self {
        Self {
            id,
            label: None,
            source,
            base_weights: Vec::new(),
            drawn: Vec::new(),
            replacement: Replacement::With,
            biased: false,
            shift: CausalShiftState::default(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn source(&self) -> &SiteSource {
        &self.source
    }

    pub fn records(&self) -> Option<&[Record]> {
        match &self.source {
            SiteSource::Empirical(r) => Some(r),
            _ => None,
        }
    }

    pub fn len(&self) -> Option<usize> {
        self.records().map(<[Record]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.base_weights
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            SiteSource::Empirical(r) => r.first().map_or(0, |r| r.a.dim()),
            SiteSource::Binary { probs } => probs.len(),
            SiteSource::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Mean sensitive vector of the site's underlying population, ignoring
    /// response bias and causal shift.
    pub fn population_mean(&self) -> Result<Vec<f64>> {
        match &self.source {
            SiteSource::Empirical(records) => {
                if records.is_empty() {
                    return state("site has no records");
                }
                let d = self.dim();
                let mut sum = vec![0.0; d];
                let mut total = 0.0;
                for (r, w) in records.iter().zip(&self.base_weights) {
                    for (s, v) in sum.iter_mut().zip(r.a.as_slice()) {
                        *s += w * v;
                    }
                    total += w;
                }
                Ok(sum.into_iter().map(|s| s / total).collect())
            }
            SiteSource::Binary { probs } => Ok(probs.clone()),
            SiteSource::Gaussian { mean, .. } => Ok(mean.clone()),
        }
    }

    /// Current normalized selection probabilities of an empirical site,
    /// including response bias (when this site is biased) and causal shift.
    /// Returns `None` for synthetic sites.
    pub fn selection_probabilities(&self, bias: Option<&ResponseBias>) -> Option<Vec<f64>> {
        let log_w = self.log_weights(bias)?;
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Some(vec![0.0; log_w.len()]);
        }
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Some(w.into_iter().map(|x| x / total).collect())
    }

    fn log_weights(&self, bias: Option<&ResponseBias>) -> Option<Vec<f64>> {
        let SiteSource::Empirical(records) = &self.source else {
            return None;
        };
        let bias = bias.filter(|_| self.biased);
        let e = self.shift.cumulative_exponent;
        Some(
            records
                .iter()
                .zip(&self.base_weights)
                .zip(&self.drawn)
                .map(|((r, &w), &drawn)| {
                    if drawn {
                        return f64::NEG_INFINITY;
                    }
                    let resp = bias.map_or(1.0, |b| b.weight(r.a.as_slice()));
                    e * (w.ln() + resp.ln())
                })
                .collect(),
        )
    }

    /// Draws one record from a synthetic site with rejection weighting.
    fn draw_synthetic<R: Rng + ?Sized>(&self, bias: Option<&ResponseBias>, rng: &mut R) -> Result<Record> {
        let bias = bias.filter(|b| self.biased && !b.is_neutral());
        let e = self.shift.cumulative_exponent;
        loop {
            let a = match &self.source {
                SiteSource::Binary { probs } => probs
                    .iter()
                    .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                    .collect::<Vec<_>>(),
                SiteSource::Gaussian { mean, chol, .. } => {
                    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample(StandardNormal)));
                    let x = chol * z;
                    mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
                }
                SiteSource::Empirical(_) => unreachable!("empirical sites are drawn by index"),
            };
            let accept = match bias {
                None => true,
                Some(b) => {
                    let ratio = (b.weight(&a) / b.max_weight(a.len())).powf(e);
                    rng.random::<f64>() < ratio
                }
            };
            if accept {
                return Ok(Record { x: Vec::new(), a: SensitiveVector::new(a)?, y: 0 });
            }
        }
    }

    /// Draws `n` records from a synthetic generator into an empirical site
    /// with unit weights. Bias and shift state are not carried over.
    pub fn materialize<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Site> {
        if matches!(self.source, SiteSource::Empirical(_)) {
            return Ok(self.clone());
        }
        let unbiased = Site { biased: false, shift: CausalShiftState::default(), ..self.clone() };
        let records = (0..n).map(|_| unbiased.draw_synthetic(None, rng)).collect::<Result<Vec<_>>>()?;
        let mut site = Site::empirical(self.id, records)?;
        site.label = self.label.clone();
        Ok(site)
    }
}

/// Lower-triangular factor `L` with `L L^T = cov` for a positive
/// semidefinite matrix. Falls back to an eigendecomposition when Cholesky
/// fails on a singular matrix.
fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10) {
        return arg("covariance must be positive semidefinite");
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt)
}

/// Draws `k` records from `site`.
///
/// Empirical sites draw by index with probability proportional to
/// `(base_weight * response_weight)^E`, where the response weight applies
/// only when `bias` is given and the site is biased, and `E` is the site's
/// cumulative causal-shift exponent. When every weight is equal the draw is
/// a plain uniform index, so a neutral bias (`lambda = 1`) consumes the
/// random stream exactly like the unbiased path. Synthetic sites draw from
/// their generator and accept with probability `(w / w_max)^E`.
pub fn sample_batch<R: Rng + ?Sized>(
    site: &mut Site,
    k: usize,
    bias: Option<&ResponseBias>,
    rng: &mut R,
) -> Result<Vec<Record>> {
    if k == 0 {
        return arg("batch size must be positive");
    }
    if !matches!(site.source, SiteSource::Empirical(_)) {
        return (0..k).map(|_| site.draw_synthetic(bias, rng)).collect();
    }
    if site.is_empty() {
        return state(format!("site {} has no records", site.id));
    }
    let mut out = Vec::with_capacity(k);
    match site.replacement {
        Replacement::With => {
            let idx = weighted_indices(&site.log_weights(bias).unwrap(), k, rng)?;
            let records = site.records().unwrap();
            out.extend(idx.into_iter().map(|i| records[i].clone()));
        }
        Replacement::Without => {
            for _ in 0..k {
                let log_w = site.log_weights(bias).unwrap();
                if log_w.iter().all(|l| *l == f64::NEG_INFINITY) {
                    return state(format!("site {} is exhausted", site.id));
                }
                let i = weighted_indices(&log_w, 1, rng)?[0];
                site.drawn[i] = true;
                out.push(site.records().unwrap()[i].clone());
            }
        }
    }
    Ok(out)
}

fn weighted_indices<R: Rng + ?Sized>(log_w: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let finite: Vec<usize> = (0..log_w.len()).filter(|&i| log_w[i] > f64::NEG_INFINITY).collect();
    let first = log_w[finite[0]];
    if finite.len() == log_w.len() && log_w.iter().all(|&l| l == first) {
        return Ok((0..k).map(|_| rng.random_range(0..log_w.len())).collect());
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let dist = WeightedIndex::new(&w).map_err(|e| crate::Error::State(format!("invalid site weights: {e}")))?;
    Ok((0..k).map(|_| dist.sample(rng)).collect())
}

/// Records one step's causal shift for a site that received fraction `rho`
/// of the budget: every selection probability `p` becomes `p^(1 + alpha rho)`.
pub fn apply_causal_shift(site: &mut Site, rho: f64, alpha: f64) {
    site.shift.alpha = alpha;
    if alpha == 0.0 || rho == 0.0 {
        return;
    }
    site.shift.cumulative_exponent *= 1.0 + alpha * rho;
    site.shift.applications += 1;
}

/// Whether synthetic sites are binary or continuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteMode {
    #[default]
    Binary,
    Continuous,
}

/// How a synthetic pool spreads its site means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticPoolConfig {
    pub mode: SiteMode,
    /// Site means are drawn uniformly from `[mean_low, mean_high]` per coordinate.
    pub mean_low: f64,
    pub mean_high: f64,
    /// When set, sites come in pairs mirrored about this vector so an equal
    /// mix of any pair hits it exactly.
    pub straddle: Option<TargetVector>,
    /// Per-coordinate standard deviation of continuous sites.
    pub continuous_sd: f64,
}

impl Default for SyntheticPoolConfig {
    fn default() -> Self {
        Self { mode: SiteMode::Binary, mean_low: 0.1, mean_high: 0.9, straddle: None, continuous_sd: 0.15 }
    }
}

/// Builds `m` synthetic sites of dimension `d` with heterogeneous means.
pub fn make_synthetic_sites<R: Rng + ?Sized>(
    m: usize,
    d: usize,
    config: &SyntheticPoolConfig,
    rng: &mut R,
) -> Result<Vec<Site>> {
    if m < 2 || d < 1 {
        return arg("a synthetic pool needs m >= 2 and d >= 1");
    }
    let (lo, hi) = (config.mean_low, config.mean_high);
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return arg("mean range must satisfy 0 <= low <= high <= 1");
    }
    let means: Vec<Vec<f64>> = match &config.straddle {
        None => (0..m).map(|_| (0..d).map(|_| rng.random_range(lo..=hi)).collect()).collect(),
        Some(v) => {
            if v.dim() != d {
                return arg("straddle target dimension mismatch");
            }
            let half: Vec<f64> = v.as_slice().iter().map(|&c| (c - lo).min(hi - c)).collect();
            if half.iter().any(|&h| h < 0.0) {
                return arg("straddle target lies outside the mean range");
            }
            let mut means = Vec::with_capacity(m);
            while means.len() + 1 < m {
                let offset: Vec<f64> = half.iter().map(|&h| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 }).collect();
                means.push(v.as_slice().iter().zip(&offset).map(|(c, o)| c + o).collect());
                means.push(v.as_slice().iter().zip(&offset).map(|(c, o)| c - o).collect());
            }
            if means.len() < m {
                means.push((0..d).map(|_| rng.random_range(lo..=hi)).collect());
            }
            means
        }
    };
    means
        .into_iter()
        .enumerate()
        .map(|(id, mean)| match config.mode {
            SiteMode::Binary => Site::binary(id, mean),
            SiteMode::Continuous => {
                let sd2 = config.continuous_sd * config.continuous_sd;
                Site::gaussian(id, mean, DMatrix::from_diagonal_element(d, d, sd2))
            }
        })
        .collect()
}
