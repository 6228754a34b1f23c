//! Group-proportion sweeps: stratified sampling, fair direct sampling,
//! fair arm-based sampling, and site samplers aimed at a group fraction.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collect::{run_collection, LoopSettings};
use super::output::{fmt_num, fmt_opt, mean_se, Table};
use crate::demographics::{Metric, Record, SensitiveVector, TargetVector};
use crate::error::{arg, Error, Result};
use crate::fairness::{group_report, worst_group, FairnessReport, GroupLoss};
use crate::learners::{LearnerConfig, Model};
use crate::population::{sample_batch, Site};
use crate::rng::{derive_seed, substream, StreamRng, STREAM_DATA, STREAM_POLICY, STREAM_SITE};
use crate::samplers::posterior::BetaPosterior;
use crate::samplers::simplex::SimplexOptions;
use crate::samplers::{DpbrsPolicy, OptPolicy, PolicyState, SitePrior};

/// Group of a record: 1 when sensitive coordinate `coord` is at least 0.5.
pub fn group_of(r: &Record, coord: usize) -> u8 {
    u8::from(r.a.as_slice()[coord] >= 0.5)
}

/// Feature matrix, labels and groups pulled out of records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub g: Vec<u8>,
}

impl Split {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a Record>, coord: usize) -> Self {
        let mut s = Split::default();
        for r in records {
            s.x.push(r.x.clone());
            s.y.push(r.y);
            s.g.push(group_of(r, coord));
        }
        s
    }

    pub fn fit(&self, learner: &LearnerConfig) -> Result<Model> {
        learner.fit(&self.x, &self.y, None)
    }

    pub fn g1_fraction(&self) -> f64 {
        self.g.iter().filter(|&&g| g == 1).count() as f64 / self.g.len().max(1) as f64
    }
}

/// A collected training set with anything worth reporting about how it was built.
#[derive(Debug, Clone)]
pub struct Collected {
    pub records: Vec<Record>,
    pub warnings: Vec<String>,
    /// Batches drawn from each site, for site-based samplers.
    pub site_visits: Vec<usize>,
}

fn check_coord(records: &[Record], coord: usize) -> Result<()> {
    if records.iter().any(|r| r.a.dim() <= coord) {
        return arg(format!("group coordinate {coord} is out of range"));
    }
    Ok(())
}

/// Draws `round(p * n)` records from group 1 and the rest from group 0,
/// uniformly without replacement. Short groups are capped with a warning.
pub fn srs_sample<R: Rng + ?Sized>(
    records: &[Record],
    coord: usize,
    p: f64,
    n: usize,
    rng: &mut R,
) -> Result<Collected> {
    if !(0.0..=1.0).contains(&p) {
        return arg("proportion must lie in [0, 1]");
    }
    check_coord(records, coord)?;
    let n1 = (p * n as f64).round() as usize;
    let want = [n - n1, n1];
    let mut out = Vec::with_capacity(n);
    let mut warnings = vec![];
    for g in 0u8..2 {
        let members: Vec<usize> = (0..records.len()).filter(|&i| group_of(&records[i], coord) == g).collect();
        let w = want[g as usize];
        if w == 0 {
            continue;
        }
        if members.is_empty() {
            return Err(Error::State(format!("group {g} is empty; proportion {p} is infeasible")));
        }
        let take = if members.len() < w {
            warnings.push(format!("group {g} has {} records, {w} requested", members.len()));
            members.len()
        } else {
            w
        };
        out.extend(sample_indices(rng, members.len(), take).into_iter().map(|i| records[members[i]].clone()));
    }
    Ok(Collected { records: out, warnings, site_visits: vec![] })
}

/// Fair direct sampling: one seed record per (group, label) cell, then
/// mini-batches from the group doing worse on `validation` until `budget`.
pub fn fair_direct_loop<R: Rng + ?Sized>(
    pool: &[Record],
    coord: usize,
    learner: &LearnerConfig,
    validation: &Split,
    batch: usize,
    budget: usize,
    loss: GroupLoss,
    rng: &mut R,
) -> Result<(Collected, Model)> {
    if batch == 0 {
        return arg("batch size must be positive");
    }
    if budget < 4 {
        return arg("budget must cover the four seed records");
    }
    check_coord(pool, coord)?;
    let mut remaining: [Vec<usize>; 2] = [vec![], vec![]];
    for (i, r) in pool.iter().enumerate() {
        remaining[group_of(r, coord) as usize].push(i);
    }
    let mut chosen = Vec::with_capacity(budget);
    for g in 0..2 {
        for y in 0u8..2 {
            let cell: Vec<usize> = (0..remaining[g].len()).filter(|&j| pool[remaining[g][j]].y == y).collect();
            if cell.is_empty() {
                return arg(format!("pool has no record with group {g} and label {y}"));
            }
            let j = cell[rng.random_range(0..cell.len())];
            chosen.push(remaining[g].swap_remove(j));
        }
    }
    let mut warnings = vec![];
    let mut exhausted = [false; 2];
    while chosen.len() < budget {
        let split = Split::from_records(chosen.iter().map(|&i| &pool[i]), coord);
        let model = split.fit(learner)?;
        let worst = worst_group(&model, &validation.x, &validation.y, &validation.g, loss)?.group as usize;
        let take = batch.min(budget - chosen.len());
        for _ in 0..take {
            let g = if remaining[worst].is_empty() {
                if !exhausted[worst] {
                    exhausted[worst] = true;
                    warnings.push(format!("group {worst} pool exhausted after {} records", chosen.len()));
                }
                1 - worst
            } else {
                worst
            };
            if remaining[g].is_empty() {
                warnings.push(format!("training pool exhausted at {} records", chosen.len()));
                break;
            }
            let j = rng.random_range(0..remaining[g].len());
            chosen.push(remaining[g].swap_remove(j));
        }
        if remaining.iter().all(|r| r.is_empty()) {
            break;
        }
    }
    let records: Vec<Record> = chosen.iter().map(|&i| pool[i].clone()).collect();
    let model = Split::from_records(&records, coord).fit(learner)?;
    Ok((Collected { records, warnings, site_visits: vec![] }, model))
}

/// Fair arm-based sampling. After `init_batches` batches from uniformly
/// chosen sites, each of `steps` rounds trains on everything collected,
/// finds the worst group on `validation`, and pulls `k` records from the
/// site with the largest smoothed share `(c + 1) / (n + 2)` of that group.
pub fn fair_arm_loop<R: Rng + ?Sized>(
    sites: &mut [Site],
    coord: usize,
    learner: &LearnerConfig,
    validation: &Split,
    init_batches: usize,
    steps: usize,
    k: usize,
    loss: GroupLoss,
    rng: &mut R,
) -> Result<(Collected, Model)> {
    if sites.is_empty() || k == 0 {
        return arg("fair arm sampling needs sites and a positive batch size");
    }
    if init_batches == 0 {
        return arg("at least one initial batch is required");
    }
    let m = sites.len();
    let mut counts = vec![[0usize; 2]; m];
    let mut visits = vec![0usize; m];
    let mut records: Vec<Record> = vec![];
    let mut pull = |j: usize, counts: &mut Vec<[usize; 2]>, records: &mut Vec<Record>, rng: &mut R| -> Result<()> {
        let batch = sample_batch(&mut sites[j], k, None, rng)?;
        check_coord(&batch, coord)?;
        for r in &batch {
            counts[j][group_of(r, coord) as usize] += 1;
        }
        visits[j] += 1;
        records.extend(batch);
        Ok(())
    };
    for _ in 0..init_batches {
        let j = rng.random_range(0..m);
        pull(j, &mut counts, &mut records, rng)?;
    }
    for _ in 0..steps {
        let model = Split::from_records(&records, coord).fit(learner)?;
        let g = worst_group(&model, &validation.x, &validation.y, &validation.g, loss)?.group as usize;
        let share = |c: &[usize; 2]| (c[g] as f64 + 1.0) / ((c[0] + c[1]) as f64 + 2.0);
        let mut best = 0;
        for j in 1..m {
            if share(&counts[j]) > share(&counts[best]) {
                best = j;
            }
        }
        pull(best, &mut counts, &mut records, rng)?;
    }
    let model = Split::from_records(&records, coord).fit(learner)?;
    Ok((Collected { records, warnings: vec![], site_visits: visits }, model))
}

/// Site-based collection aimed at group fraction `p` with OPT or D-PBRS.
/// Sites must carry a one-dimensional sensitive vector (the group).
pub fn arm_target_loop(
    sites: &mut [Site],
    p: f64,
    dpbrs: bool,
    steps: usize,
    k: usize,
    optimizer: SimplexOptions,
    policy_rng: &mut StreamRng,
    site_rngs: &mut [StreamRng],
) -> Result<Collected> {
    let target = TargetVector::new(vec![p])?;
    let settings = LoopSettings { target: &target, metric: &Metric::L2, horizon: steps, k, alpha: 0.0, bias: None };
    let res = if dpbrs {
        let priors = sites
            .iter()
            .map(|_| Ok(SitePrior::Beta(BetaPosterior::from_mean(&[p], 2.0)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut policy = DpbrsPolicy::new(PolicyState::new(priors, steps, 1.0)?, optimizer);
        run_collection(settings, sites, &mut policy, policy_rng, site_rngs)?
    } else {
        let true_means = sites.iter().map(|s| s.population_mean()).collect::<Result<Vec<_>>>()?;
        let mut policy = OptPolicy { true_means };
        run_collection(settings, sites, &mut policy, policy_rng, site_rngs)?
    };
    let mut site_visits = vec![0; sites.len()];
    for a in &res.allocations {
        for (j, &r) in a.rho.iter().enumerate() {
            if r > 0.0 {
                site_visits[j] += 1;
            }
        }
    }
    let warnings = if res.warnings > 0 { vec![format!("{} optimizer runs did not converge", res.warnings)] } else { vec![] };
    Ok(Collected { records: res.dataset.records().cloned().collect(), warnings, site_visits })
}

/// Synthetic two-group task. Group 0 labels follow `x0 + e >= 0`, group 1
/// labels follow `x1 + e' >= 0` with larger noise. Site `j` of `m` holds
/// group 1 at a share spread linearly over `[site_low, site_high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoGroupTask {
    pub minority_fraction: f64,
    pub noise: [f64; 2],
    pub sites: usize,
    pub site_size: usize,
    pub site_low: f64,
    pub site_high: f64,
    pub n_validation: usize,
    pub n_test: usize,
}

impl Default for TwoGroupTask {
    fn default() -> Self {
        Self {
            minority_fraction: 0.2,
            noise: [0.1, 0.6],
            sites: 10,
            site_size: 400,
            site_low: 0.0,
            site_high: 0.4,
            n_validation: 1000,
            n_test: 4000,
        }
    }
}

/// One draw of the task: per-site training records, plus held-out sets.
#[derive(Debug, Clone)]
pub struct TaskDraw {
    pub site_records: Vec<Vec<Record>>,
    pub validation: Vec<Record>,
    pub test: Vec<Record>,
}

impl TaskDraw {
    pub fn pool(&self) -> Vec<Record> {
        self.site_records.iter().flatten().cloned().collect()
    }

    pub fn sites(&self) -> Result<Vec<Site>> {
        self.site_records.iter().enumerate().map(|(j, r)| Site::empirical(j, r.clone())).collect()
    }
}

impl TwoGroupTask {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !frac_ok(self.minority_fraction) || !frac_ok(self.site_low) || !frac_ok(self.site_high) {
            return arg("group fractions must lie in [0, 1]");
        }
        if self.noise.iter().any(|s| !(*s > 0.0)) {
            return arg("label noise must be positive");
        }
        if self.sites == 0 || self.site_size == 0 || self.n_validation == 0 || self.n_test == 0 {
            return arg("task sizes must be positive");
        }
        Ok(())
    }

    pub fn record<R: Rng + ?Sized>(&self, g: u8, rng: &mut R) -> Record {
        let x0: f64 = rng.sample(rand_distr::StandardNormal);
        let x1: f64 = rng.sample(rand_distr::StandardNormal);
        let e = Normal::new(0.0, self.noise[g as usize]).expect("validated").sample(rng);
        let signal = if g == 0 { x0 } else { x1 };
        Record { x: vec![x0, x1], a: SensitiveVector::binary(vec![g as f64]).unwrap(), y: u8::from(signal + e >= 0.0) }
    }

    fn population<R: Rng + ?Sized>(&self, n: usize, frac: f64, rng: &mut R) -> Vec<Record> {
        (0..n).map(|_| self.record(u8::from(rng.random::<f64>() < frac), rng)).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TaskDraw> {
        self.validate()?;
        let m = self.sites;
        let site_records = (0..m)
            .map(|j| {
                let t = if m == 1 { 0.0 } else { j as f64 / (m - 1) as f64 };
                let frac = self.site_low + t * (self.site_high - self.site_low);
                self.population(self.site_size, frac, rng)
            })
            .collect();
        Ok(TaskDraw {
            site_records,
            validation: self.population(self.n_validation, self.minority_fraction, rng),
            test: self.population(self.n_test, self.minority_fraction, rng),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairSampler {
    Srs,
    FairDirect,
    FairArm,
    ArmOpt,
    ArmDpbrs,
}

impl FairSampler {
    pub fn name(&self) -> &'static str {
        match self {
            FairSampler::Srs => "srs",
            FairSampler::FairDirect => "fair_direct",
            FairSampler::FairArm => "fair_arm",
            FairSampler::ArmOpt => "arm_opt",
            FairSampler::ArmDpbrs => "arm_dpbrs",
        }
    }

    /// Whether the sampler is aimed at a group proportion.
    pub fn uses_proportion(&self) -> bool {
        matches!(self, FairSampler::Srs | FairSampler::ArmOpt | FairSampler::ArmDpbrs)
    }
}

/// Settings for the `fairness-sweep` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairnessSweepConfig {
    pub seed: u64,
    /// Independent draws of the task.
    pub folds: usize,
    pub task: TwoGroupTask,
    pub learner: LearnerConfig,
    pub samplers: Vec<FairSampler>,
    /// Sorted group 1 fractions for the proportion-aimed samplers.
    pub proportions: Vec<f64>,
    /// Training records collected by every sampler.
    pub budget: usize,
    /// Mini-batch size for fair direct sampling.
    pub direct_batch: usize,
    /// Batch size for site-based samplers.
    pub arm_batch: usize,
    pub loss: GroupLoss,
    pub optimizer: SimplexOptions,
}

impl Default for FairnessSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: 20,
            task: TwoGroupTask::default(),
            learner: LearnerConfig::default(),
            samplers: vec![
                FairSampler::Srs,
                FairSampler::FairDirect,
                FairSampler::FairArm,
                FairSampler::ArmOpt,
                FairSampler::ArmDpbrs,
            ],
            proportions: linspace(0.0, 1.0, 11),
            budget: 400,
            direct_batch: 5,
            arm_batch: 20,
            loss: GroupLoss::default(),
            optimizer: SimplexOptions::default(),
        }
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub(crate) fn check_proportions(p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return arg("proportions must lie in [0, 1]");
    }
    if p.windows(2).any(|w| w[0] > w[1]) {
        return arg("proportions must be sorted");
    }
    Ok(())
}

impl FairnessSweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        check_proportions(&self.proportions)?;
        if self.folds == 0 || self.samplers.is_empty() {
            return arg("folds and samplers must be non-empty");
        }
        if self.budget < 4 || self.direct_batch == 0 || self.arm_batch == 0 {
            return arg("budget must be at least 4 and batch sizes positive");
        }
        if self.samplers.iter().any(|s| !matches!(s, FairSampler::Srs | FairSampler::FairDirect))
            && self.budget < self.arm_batch
        {
            return arg("budget must cover at least one site batch");
        }
        Ok(())
    }
}

/// One sampler run on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub sampler: String,
    pub proportion: Option<f64>,
    pub fold: usize,
    pub n: usize,
    pub g1_fraction: f64,
    pub report: FairnessReport,
    pub warnings: Vec<String>,
}

fn run_cell(
    cfg: &FairnessSweepConfig,
    draw: &TaskDraw,
    validation: &Split,
    test: &Split,
    fold: usize,
    sampler: FairSampler,
    cell: usize,
    p: Option<f64>,
) -> Result<FairnessRow> {
    let f = fold as u64;
    let mut rng = substream(cfg.seed, &[f, STREAM_POLICY, cell as u64]);
    let steps = cfg.budget / cfg.arm_batch;
    let collected = match sampler {
        FairSampler::Srs => srs_sample(&draw.pool(), 0, p.expect("proportion"), cfg.budget, &mut rng)?,
        FairSampler::FairDirect => {
            fair_direct_loop(&draw.pool(), 0, &cfg.learner, validation, cfg.direct_batch, cfg.budget, cfg.loss, &mut rng)?.0
        }
        FairSampler::FairArm => {
            let mut sites = draw.sites()?;
            fair_arm_loop(&mut sites, 0, &cfg.learner, validation, 1, steps - 1, cfg.arm_batch, cfg.loss, &mut rng)?.0
        }
        FairSampler::ArmOpt | FairSampler::ArmDpbrs => {
            let mut sites = draw.sites()?;
            let mut site_rngs: Vec<StreamRng> = (0..sites.len())
                .map(|j| substream(cfg.seed, &[f, STREAM_SITE, cell as u64, j as u64]))
                .collect();
            arm_target_loop(
                &mut sites,
                p.expect("proportion"),
                sampler == FairSampler::ArmDpbrs,
                steps,
                cfg.arm_batch,
                cfg.optimizer,
                &mut rng,
                &mut site_rngs,
            )?
        }
    };
    let split = Split::from_records(&collected.records, 0);
    let model = split.fit(&cfg.learner)?;
    let report = group_report(&model, &test.x, &test.y, &test.g)?;
    Ok(FairnessRow {
        sampler: sampler.name().into(),
        proportion: p,
        fold,
        n: collected.records.len(),
        g1_fraction: split.g1_fraction(),
        report,
        warnings: collected.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessCellSummary {
    pub sampler: String,
    pub proportion: Option<f64>,
    pub mean_abs_delta_auc: f64,
    pub se_abs_delta_auc: f64,
    pub mean_population_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSweepSummary {
    pub config: FairnessSweepConfig,
    pub fold_seeds: Vec<u64>,
    pub cells: Vec<FairnessCellSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessSweepOutput {
    /// Ordered by sampler (config order), proportion, fold.
    pub rows: Vec<FairnessRow>,
    pub summary: FairnessSweepSummary,
}

/// Column set shared by the fairness and complexity tables.
pub(crate) const REPORT_COLUMNS: [&str; 10] =
    ["population_auc", "auc_g0", "auc_g1", "tpr_g0", "tpr_g1", "tnr_g0", "tnr_g1", "delta_auc", "delta_tpr", "delta_tnr"];

pub(crate) fn report_cells(r: &FairnessReport) -> Vec<String> {
    let [g0, g1] = &r.groups;
    [r.population_auc, g0.auc, g1.auc, g0.tpr, g1.tpr, g0.tnr, g1.tnr, r.delta_auc, r.delta_tpr, r.delta_tnr]
        .into_iter()
        .map(fmt_opt)
        .collect()
}

impl FairnessSweepOutput {
    pub fn table(&self) -> Table {
        let mut header = vec!["sampler", "proportion", "fold", "n", "g1_fraction"];
        header.extend(REPORT_COLUMNS);
        let mut t = Table::new(&header);
        for r in &self.rows {
            let mut row = vec![r.sampler.clone(), fmt_opt(r.proportion), r.fold.to_string(), r.n.to_string(), fmt_num(r.g1_fraction)];
            row.extend(report_cells(&r.report));
            t.push(row);
        }
        t
    }

    /// `|delta AUC|` per fold for one sampler and proportion.
    pub fn abs_delta_auc(&self, sampler: FairSampler, proportion: Option<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.sampler == sampler.name() && r.proportion == proportion)
            .filter_map(|r| r.report.delta_auc.map(f64::abs))
            .collect()
    }
}

pub fn fairness_sweep(cfg: &FairnessSweepConfig) -> Result<FairnessSweepOutput> {
    cfg.validate()?;
    let mut jobs = vec![];
    for (si, &s) in cfg.samplers.iter().enumerate() {
        let props: Vec<Option<f64>> =
            if s.uses_proportion() { cfg.proportions.iter().map(|&p| Some(p)).collect() } else { vec![None] };
        for (pi, p) in props.into_iter().enumerate() {
            for fold in 0..cfg.folds {
                jobs.push((s, si * 10_000 + pi, p, fold));
            }
        }
    }
    let draws: Vec<(TaskDraw, Split, Split)> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let d = cfg.task.draw(&mut substream(cfg.seed, &[f as u64, STREAM_DATA]))?;
            let v = Split::from_records(&d.validation, 0);
            let t = Split::from_records(&d.test, 0);
            Ok((d, v, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<FairnessRow> = jobs
        .into_par_iter()
        .map(|(s, cell, p, fold)| {
            let (d, v, t) = &draws[fold];
            run_cell(cfg, d, v, t, fold, s, cell, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cells = vec![];
    let mut keys: Vec<(String, Option<f64>)> = vec![];
    for r in &rows {
        if !keys.iter().any(|(s, p)| *s == r.sampler && *p == r.proportion) {
            keys.push((r.sampler.clone(), r.proportion));
        }
    }
    for (s, p) in keys {
        let sel: Vec<&FairnessRow> = rows.iter().filter(|r| r.sampler == s && r.proportion == p).collect();
        let deltas: Vec<f64> = sel.iter().filter_map(|r| r.report.delta_auc.map(f64::abs)).collect();
        let aucs: Vec<f64> = sel.iter().filter_map(|r| r.report.population_auc).collect();
        let (m, se) = mean_se(&deltas);
        cells.push(FairnessCellSummary {
            sampler: s,
            proportion: p,
            mean_abs_delta_auc: m,
            se_abs_delta_auc: se,
            mean_population_auc: mean_se(&aucs).0,
        });
    }
    let warnings = rows
        .iter()
        .flat_map(|r| r.warnings.iter().map(move |w| format!("{} fold {}: {w}", r.sampler, r.fold)))
        .collect();
    let summary = FairnessSweepSummary {
        config: cfg.clone(),
        fold_seeds: (0..cfg.folds).map(|f| derive_seed(cfg.seed, &[f as u64, STREAM_DATA])).collect(),
        cells,
        warnings,
    };
    Ok(FairnessSweepOutput { rows, summary })
}
