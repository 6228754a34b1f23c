//! The site-sampling loop and the `simulate` experiment.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::{fmt_num, mean_se, Table};
use crate::demographics::{distance, CollectedDataset, Metric, Record, TargetVector};
use crate::error::{arg, Result};
use crate::ingest::{partition_sites, preprocess, resize_arm_pool, DatasetSchema, RawTable};
use crate::population::{
    apply_causal_shift, choose_biased_sites, make_synthetic_sites, sample_batch, ResponseBias, ResponseBiasConfig,
    Site, SiteSource, SyntheticPoolConfig,
};
use crate::rng::{substream, StreamRng, STREAM_BIAS, STREAM_POLICY, STREAM_POOL, STREAM_SITE};
use crate::samplers::posterior::{BetaPosterior, NiwPosterior};
use crate::samplers::simplex::SimplexOptions;
use crate::samplers::{
    Allocation, BaselineKind, BaselinePolicy, DpbrsPolicy, ImprovementMode, OptPolicy, PbrsPolicy, PolicyState,
    SamplerPolicy, SitePrior, StepContext,
};

/// Policy choice as written in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Opt,
    /// Full-information budget split: D-PBRS with the true site means.
    OptMix,
    Pbrs,
    Dpbrs,
    Random,
    EpsGreedy { epsilon: f64 },
    UcbLcb,
    OlVec {
        #[serde(default = "default_ol_rate")]
        rate: f64,
    },
}

fn default_ol_rate() -> f64 {
    0.5
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Opt => "opt".into(),
            PolicySpec::OptMix => "opt_mix".into(),
            PolicySpec::Pbrs => "pbrs".into(),
            PolicySpec::Dpbrs => "dpbrs".into(),
            PolicySpec::Random => "random".into(),
            PolicySpec::EpsGreedy { epsilon } => format!("eps_greedy({})", fmt_num(*epsilon)),
            PolicySpec::UcbLcb => "ucb_lcb".into(),
            PolicySpec::OlVec { .. } => "ol_vec".into(),
        }
    }
}

/// How PBRS and D-PBRS priors are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// Every site starts at the target vector with `strength` pseudo-counts.
    Target { strength: f64 },
    /// `Beta(1, 1)` per coordinate, or zero mean and identity covariance.
    Uniform,
    /// Centred on each site's population mean, as an ingest summary would give.
    SiteMeans { strength: f64 },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Target { strength: 2.0 }
    }
}

impl PriorSpec {
    pub fn build(&self, sites: &[Site], target: &TargetVector) -> Result<Vec<SitePrior>> {
        let d = target.dim();
        sites
            .iter()
            .map(|site| {
                let continuous = matches!(site.source(), SiteSource::Gaussian { .. });
                let center = match self {
                    PriorSpec::Target { .. } => Some(target.as_slice().to_vec()),
                    PriorSpec::Uniform => None,
                    PriorSpec::SiteMeans { .. } => Some(site.population_mean()?),
                };
                let strength = match *self {
                    PriorSpec::Target { strength } | PriorSpec::SiteMeans { strength } => strength,
                    PriorSpec::Uniform => 2.0,
                };
                Ok(match (continuous, center) {
                    (false, None) => SitePrior::Beta(BetaPosterior::uniform(d)),
                    (false, Some(c)) => SitePrior::Beta(BetaPosterior::from_mean(&c, strength)?),
                    (true, None) => SitePrior::Niw(NiwPosterior::standard(d)),
                    (true, Some(c)) => {
                        SitePrior::Niw(NiwPosterior::from_estimate(&c, &DMatrix::from_diagonal_element(d, d, 0.25))?)
                    }
                })
            })
            .collect()
    }
}

/// Where a replicate's sites come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SiteSpec {
    Synthetic(SyntheticPoolConfig),
    /// Sites partitioned from a CSV by location and resized to `m`.
    Csv { data: PathBuf, schema: PathBuf },
}

impl Default for SiteSpec {
    fn default() -> Self {
        SiteSpec::Synthetic(SyntheticPoolConfig::default())
    }
}

/// Settings for the `simulate` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub seed: u64,
    pub replicates: usize,
    pub m: usize,
    pub d: usize,
    pub horizon: usize,
    pub k: usize,
    /// Defaults to 0.5 in every coordinate.
    pub target: Option<TargetVector>,
    pub metric: Metric,
    pub policies: Vec<PolicySpec>,
    pub sites: SiteSpec,
    pub bias: Option<ResponseBiasConfig>,
    /// Causal-shift strength; 0 disables it.
    pub alpha: f64,
    /// Minority boost for prior updates; 1 disables it.
    pub beta: f64,
    pub prior: PriorSpec,
    pub improvement: ImprovementMode,
    pub optimizer: SimplexOptions,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 100,
            m: 20,
            d: 3,
            horizon: 50,
            k: 40,
            target: None,
            metric: Metric::L2,
            policies: vec![PolicySpec::Opt, PolicySpec::Pbrs, PolicySpec::Dpbrs, PolicySpec::Random],
            sites: SiteSpec::default(),
            bias: None,
            alpha: 0.0,
            beta: 1.0,
            prior: PriorSpec::default(),
            improvement: ImprovementMode::default(),
            optimizer: SimplexOptions::default(),
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.k == 0 || self.replicates == 0 {
            return arg("horizon, k and replicates must be positive");
        }
        if self.m == 0 || self.d == 0 {
            return arg("m and d must be positive");
        }
        if let Some(v) = &self.target {
            if v.dim() != self.d {
                return arg("target dimension must equal d");
            }
        }
        if self.policies.is_empty() {
            return arg("at least one policy is required");
        }
        if !(self.alpha >= 0.0) {
            return arg("alpha must be nonnegative");
        }
        if !(self.beta >= 1.0) {
            return arg("beta must be at least 1");
        }
        Ok(())
    }

    pub fn target(&self) -> Result<TargetVector> {
        match &self.target {
            Some(v) => Ok(v.clone()),
            None => TargetVector::uniform(self.d, 0.5),
        }
    }
}

/// Step-level settings shared by every policy in a replicate.
#[derive(Debug, Clone, Copy)]
pub struct LoopSettings<'a> {
    pub target: &'a TargetVector,
    pub metric: &'a Metric,
    pub horizon: usize,
    pub k: usize,
    pub alpha: f64,
    pub bias: Option<&'a ResponseBias>,
}

#[derive(Debug, Clone)]
pub struct CollectionResult {
    pub dataset: CollectedDataset,
    /// Distance to the target after each step.
    pub trajectory: Vec<f64>,
    pub allocations: Vec<Allocation>,
    pub warnings: usize,
}

/// Runs `horizon` steps: allocate, draw each site's share, let the policy
/// observe each batch (against the dataset as it stood before the step),
/// append, then apply causal shift and record the distance.
pub fn run_collection(
    settings: LoopSettings<'_>,
    sites: &mut [Site],
    policy: &mut dyn SamplerPolicy,
    policy_rng: &mut StreamRng,
    site_rngs: &mut [StreamRng],
) -> Result<CollectionResult> {
    if sites.is_empty() || site_rngs.len() != sites.len() {
        return arg("one random stream per site is required");
    }
    let d = settings.target.dim();
    let mut dataset = CollectedDataset::new(d);
    let mut trajectory = Vec::with_capacity(settings.horizon);
    let mut allocations = Vec::with_capacity(settings.horizon);
    for step in 1..=settings.horizon {
        let ctx = StepContext {
            dataset: &dataset,
            target: settings.target,
            metric: settings.metric,
            k: settings.k,
            step,
            horizon: settings.horizon,
        };
        let alloc = policy.allocate(&ctx, policy_rng)?;
        alloc.validate()?;
        if alloc.rho.len() != sites.len() {
            return arg("allocation length differs from site count");
        }
        let counts = alloc.counts(settings.k);
        let mut step_records: Vec<Record> = Vec::with_capacity(settings.k);
        for (j, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let batch = sample_batch(&mut sites[j], c, settings.bias, &mut site_rngs[j])?;
            policy.observe(&ctx, j, alloc.rho[j], &batch)?;
            step_records.extend(batch);
        }
        dataset.push_batch(step_records)?;
        if settings.alpha > 0.0 {
            for (site, &r) in sites.iter_mut().zip(&alloc.rho) {
                if r > 0.0 {
                    apply_causal_shift(site, r, settings.alpha);
                }
            }
        }
        trajectory.push(distance(settings.metric, settings.target, &dataset.mean()?)?);
        allocations.push(alloc);
    }
    Ok(CollectionResult { dataset, trajectory, allocations, warnings: policy.warnings() })
}

/// Builds the policy object for one run.
pub fn build_policy(
    spec: &PolicySpec,
    sites: &[Site],
    target: &TargetVector,
    config: &SimulateConfig,
) -> Result<Box<dyn SamplerPolicy>> {
    let m = sites.len();
    let d = target.dim();
    let bayes_state = || -> Result<PolicyState> {
        Ok(PolicyState::new(config.prior.build(sites, target)?, config.horizon, config.beta)?.with_mode(config.improvement))
    };
    Ok(match *spec {
        PolicySpec::Opt => Box::new(OptPolicy {
            true_means: sites.iter().map(|s| s.population_mean()).collect::<Result<Vec<_>>>()?,
        }),
        PolicySpec::OptMix => {
            let known = sites.iter().map(|s| Ok(SitePrior::Known(s.population_mean()?))).collect::<Result<Vec<_>>>()?;
            Box::new(DpbrsPolicy::new(PolicyState::new(known, config.horizon, 1.0)?, config.optimizer))
        }
        PolicySpec::Pbrs => Box::new(PbrsPolicy { state: bayes_state()? }),
        PolicySpec::Dpbrs => Box::new(DpbrsPolicy::new(bayes_state()?, config.optimizer)),
        PolicySpec::Random => Box::new(BaselinePolicy::new(BaselineKind::Random, m, d)?),
        PolicySpec::EpsGreedy { epsilon } => Box::new(BaselinePolicy::new(BaselineKind::EpsGreedy { epsilon }, m, d)?),
        PolicySpec::UcbLcb => Box::new(BaselinePolicy::new(BaselineKind::UcbLcb, m, d)?),
        PolicySpec::OlVec { rate } => Box::new(BaselinePolicy::new(BaselineKind::OlVec { rate }, m, d)?),
    })
}

/// Loads and partitions a CSV into sites once, for reuse across replicates.
pub fn load_csv_sites(data: &PathBuf, schema: &PathBuf) -> Result<(Vec<Site>, usize)> {
    let schema = DatasetSchema::load(schema)?;
    let table = RawTable::load(data)?;
    let (_, pre) = preprocess(&table, &schema)?;
    let part = partition_sites(&pre.records, &pre.locations, schema.min_site_size)?;
    Ok((part.sites, part.excluded_records))
}

/// The replicate's site pool, with biased sites marked.
pub fn replicate_sites(config: &SimulateConfig, replicate: usize, base: Option<&[Site]>) -> Result<Vec<Site>> {
    let r = replicate as u64;
    let mut pool_rng = substream(config.seed, &[r, STREAM_POOL]);
    let mut sites = match (&config.sites, base) {
        (SiteSpec::Synthetic(pool), _) => make_synthetic_sites(config.m, config.d, pool, &mut pool_rng)?,
        (SiteSpec::Csv { .. }, Some(base)) => resize_arm_pool(base, config.m, &mut pool_rng)?,
        (SiteSpec::Csv { .. }, None) => return arg("CSV sites must be loaded before replicates run"),
    };
    if let Some(b) = &config.bias {
        if b.gamma > sites.len() {
            return arg("gamma exceeds the number of sites");
        }
        for j in choose_biased_sites(sites.len(), b.gamma, &mut substream(config.seed, &[r, STREAM_BIAS]))? {
            sites[j].biased = true;
        }
    }
    Ok(sites)
}

/// One replicate's outcome for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub replicate: usize,
    pub policy: String,
    pub trajectory: Vec<f64>,
    pub final_distance: f64,
    pub warnings: usize,
}

/// Runs every configured policy on one replicate. All policies see the
/// same site pool and the same per-site and policy random streams, so
/// comparisons between them are paired.
pub fn run_replicate(config: &SimulateConfig, replicate: usize, base: Option<&[Site]>) -> Result<Vec<PolicyRun>> {
    let target = config.target()?;
    let pool = replicate_sites(config, replicate, base)?;
    if pool.iter().any(|s| s.dim() != target.dim()) {
        return arg("site dimension differs from target dimension");
    }
    let bias = config.bias.as_ref().map(|b| ResponseBias::from_sites(b, &pool)).transpose()?;
    let r = replicate as u64;
    config
        .policies
        .iter()
        .map(|spec| {
            let mut sites = pool.clone();
            let mut policy = build_policy(spec, &sites, &target, config)?;
            let mut policy_rng = substream(config.seed, &[r, STREAM_POLICY]);
            let mut site_rngs: Vec<StreamRng> =
                (0..sites.len()).map(|j| substream(config.seed, &[r, STREAM_SITE, j as u64])).collect();
            let settings = LoopSettings {
                target: &target,
                metric: &config.metric,
                horizon: config.horizon,
                k: config.k,
                alpha: config.alpha,
                bias: bias.as_ref(),
            };
            let res = run_collection(settings, &mut sites, policy.as_mut(), &mut policy_rng, &mut site_rngs)?;
            Ok(PolicyRun {
                replicate,
                policy: spec.label(),
                final_distance: *res.trajectory.last().expect("horizon >= 1"),
                trajectory: res.trajectory,
                warnings: res.warnings,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub mean_final_distance: f64,
    pub std_error: f64,
    pub optimizer_warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub config: SimulateConfig,
    pub replicate_seeds: Vec<u64>,
    pub excluded_records: usize,
    pub policies: Vec<PolicySummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    /// Sorted by replicate, then policy order in the config.
    pub runs: Vec<PolicyRun>,
    pub summary: SimulateSummary,
}

impl SimulateOutput {
    /// Final distances of one policy, by replicate.
    pub fn finals(&self, policy: &str) -> Vec<f64> {
        self.runs.iter().filter(|r| r.policy == policy).map(|r| r.final_distance).collect()
    }

    pub fn trajectory_table(&self) -> Table {
        let mut t = Table::new(&["replicate", "policy", "step", "distance"]);
        for run in &self.runs {
            for (s, d) in run.trajectory.iter().enumerate() {
                t.push(vec![run.replicate.to_string(), run.policy.clone(), (s + 1).to_string(), fmt_num(*d)]);
            }
        }
        t
    }

    pub fn final_table(&self) -> Table {
        let mut t = Table::new(&["replicate", "policy", "distance"]);
        for run in &self.runs {
            t.push(vec![run.replicate.to_string(), run.policy.clone(), fmt_num(run.final_distance)]);
        }
        t
    }
}

/// Runs all replicates in parallel and assembles sorted results.
pub fn simulate(config: &SimulateConfig) -> Result<SimulateOutput> {
    config.validate()?;
    let (base, excluded) = match &config.sites {
        SiteSpec::Csv { data, schema } => {
            let (s, e) = load_csv_sites(data, schema)?;
            (Some(s), e)
        }
        SiteSpec::Synthetic(_) => (None, 0),
    };
    let per_rep: Vec<Vec<PolicyRun>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r, base.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<PolicyRun> = per_rep.into_iter().flatten().collect();
    let policies = config
        .policies
        .iter()
        .map(|p| {
            let label = p.label();
            let finals: Vec<f64> = runs.iter().filter(|r| r.policy == label).map(|r| r.final_distance).collect();
            let (mean, se) = mean_se(&finals);
            PolicySummary {
                policy: label.clone(),
                mean_final_distance: mean,
                std_error: se,
                optimizer_warnings: runs.iter().filter(|r| r.policy == label).map(|r| r.warnings).sum(),
            }
        })
        .collect();
    let summary = SimulateSummary {
        config: config.clone(),
        replicate_seeds: (0..config.replicates).map(|r| crate::rng::derive_seed(config.seed, &[r as u64])).collect(),
        excluded_records: excluded,
        policies,
    };
    Ok(SimulateOutput { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(policies: Vec<PolicySpec>) -> SimulateConfig {
        SimulateConfig { replicates: 3, m: 4, d: 2, horizon: 6, k: 10, policies, ..SimulateConfig::default() }
    }

    #[test]
    fn single_step_single_site() {
        let target = TargetVector::new(vec![0.5]).unwrap();
        let mut sites = vec![Site::binary(0, vec![0.3]).unwrap()];
        let mut policy = OptPolicy { true_means: vec![vec![0.3]] };
        let settings = LoopSettings { target: &target, metric: &Metric::L2, horizon: 1, k: 7, alpha: 0.0, bias: None };
        let res = run_collection(settings, &mut sites, &mut policy, &mut substream(1, &[]), &mut [substream(2, &[])]).unwrap();
        assert_eq!(res.trajectory.len(), 1);
        assert_eq!(res.dataset.count(), 7);
    }

    #[test]
    fn every_policy_collects_t_times_k() {
        let all = vec![
            PolicySpec::Opt,
            PolicySpec::OptMix,
            PolicySpec::Pbrs,
            PolicySpec::Dpbrs,
            PolicySpec::Random,
            PolicySpec::EpsGreedy { epsilon: 0.1 },
            PolicySpec::UcbLcb,
            PolicySpec::OlVec { rate: 0.5 },
        ];
        let cfg = small(all.clone());
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.runs.len(), 3 * all.len());
        for r in &out.runs {
            assert_eq!(r.trajectory.len(), 6);
        }
        let target = cfg.target().unwrap();
        let sites = replicate_sites(&cfg, 0, None).unwrap();
        for spec in &all {
            let mut s = sites.clone();
            let mut p = build_policy(spec, &s, &target, &cfg).unwrap();
            let mut rngs: Vec<StreamRng> = (0..4).map(|j| substream(1, &[j])).collect();
            let settings = LoopSettings { target: &target, metric: &cfg.metric, horizon: 6, k: 10, alpha: 0.0, bias: None };
            let res = run_collection(settings, &mut s, p.as_mut(), &mut substream(9, &[]), &mut rngs).unwrap();
            assert_eq!(res.dataset.count(), 60, "{spec:?}");
            assert_eq!(res.dataset.batches().len(), 6);
        }
    }

    #[test]
    fn same_seed_same_results() {
        let cfg = small(vec![PolicySpec::Pbrs, PolicySpec::Dpbrs, PolicySpec::Random]);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.final_table().to_csv_string().unwrap(), b.final_table().to_csv_string().unwrap());
        assert_eq!(a.trajectory_table(), b.trajectory_table());
    }

    #[test]
    fn replicates_are_independent() {
        let cfg = small(vec![PolicySpec::Pbrs, PolicySpec::Random]);
        let three = simulate(&cfg).unwrap();
        let five = simulate(&SimulateConfig { replicates: 5, ..cfg }).unwrap();
        assert_eq!(three.runs[..], five.runs[..three.runs.len()]);
    }

    #[test]
    fn opt_converges_on_symmetric_pair() {
        let target = TargetVector::new(vec![0.5]).unwrap();
        let mut finals = vec![];
        for rep in 0..100u64 {
            let mut sites = vec![Site::binary(0, vec![0.2]).unwrap(), Site::binary(1, vec![0.8]).unwrap()];
            let mut policy = OptPolicy { true_means: vec![vec![0.2], vec![0.8]] };
            let settings = LoopSettings { target: &target, metric: &Metric::L2, horizon: 50, k: 10, alpha: 0.0, bias: None };
            let mut rngs = vec![substream(rep, &[0]), substream(rep, &[1])];
            let res = run_collection(settings, &mut sites, &mut policy, &mut substream(rep, &[9]), &mut rngs).unwrap();
            finals.push(*res.trajectory.last().unwrap());
        }
        let (mean, _) = mean_se(&finals);
        assert!(mean < 0.05, "{mean}");
    }

    #[test]
    fn continuous_pool_runs() {
        let cfg = SimulateConfig {
            sites: SiteSpec::Synthetic(SyntheticPoolConfig { mode: crate::population::SiteMode::Continuous, ..Default::default() }),
            ..small(vec![PolicySpec::Pbrs, PolicySpec::Dpbrs, PolicySpec::Opt])
        };
        let out = simulate(&cfg).unwrap();
        assert!(out.runs.iter().all(|r| r.final_distance.is_finite()));
    }

    #[test]
    fn biased_run_with_shift() {
        let cfg = SimulateConfig {
            bias: Some(ResponseBiasConfig::new(4.0, 2).unwrap()),
            alpha: 0.5,
            ..small(vec![PolicySpec::Dpbrs, PolicySpec::Random])
        };
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.runs.len(), 6);
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg: SimulateConfig = serde_json::from_str(r#"{"m": 5, "policies": [{"kind": "eps_greedy", "epsilon": 0.2}]}"#).unwrap();
        assert_eq!(cfg.m, 5);
        assert_eq!(cfg.k, 40);
        assert_eq!(cfg.policies, vec![PolicySpec::EpsGreedy { epsilon: 0.2 }]);
    }
}
