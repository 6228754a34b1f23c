//! Model complexity grid: GBDT depth and ensemble size against group
//! disparities, over stratified training sets at each group proportion.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fair::{check_proportions, group_of, linspace, report_cells, srs_sample, Split, REPORT_COLUMNS};
use super::output::{fmt_num, mean_se, Table};
use crate::demographics::{Record, SensitiveVector};
use crate::error::{arg, Result};
use crate::fairness::FairnessReport;
use crate::learners::{fit_gbdt, sigmoid, GbdtConfig};
use crate::rng::{derive_seed, substream, STREAM_DATA, STREAM_POOL};

/// Two uniform features and a group indicator. Group 0 labels are
/// `x0 > 0.5`; group 1 labels are `(x0 > 0.5) xor (x1 > 0.5)`, which no
/// sum of single-feature stumps can express.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XorGroupTask {
    pub n: usize,
    pub minority_fraction: f64,
    /// Probability of flipping each label.
    pub label_noise: f64,
}

impl Default for XorGroupTask {
    fn default() -> Self {
        Self { n: 4000, minority_fraction: 0.3, label_noise: 0.05 }
    }
}

impl XorGroupTask {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(0.0..=1.0).contains(&self.minority_fraction) || !(0.0..=0.5).contains(&self.label_noise) {
            return arg("task needs n > 0, a fraction in [0, 1] and label noise in [0, 0.5]");
        }
        Ok(())
    }

    pub fn record<R: Rng + ?Sized>(&self, g: u8, rng: &mut R) -> Record {
        let (x0, x1): (f64, f64) = (rng.random(), rng.random());
        let clean = if g == 0 { x0 > 0.5 } else { (x0 > 0.5) ^ (x1 > 0.5) };
        let flip = rng.random::<f64>() < self.label_noise;
        Record { x: vec![x0, x1, g as f64], a: SensitiveVector::binary(vec![g as f64]).unwrap(), y: u8::from(clean ^ flip) }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Record>> {
        self.validate()?;
        Ok((0..self.n).map(|_| self.record(u8::from(rng.random::<f64>() < self.minority_fraction), rng)).collect())
    }
}

/// Settings for the `complexity-sweep` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexitySweepConfig {
    pub seed: u64,
    pub folds: usize,
    pub task: XorGroupTask,
    pub depths: Vec<usize>,
    pub estimators: Vec<usize>,
    pub proportions: Vec<f64>,
    pub learning_rate: f64,
}

impl Default for ComplexitySweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: 10,
            task: XorGroupTask::default(),
            depths: vec![1, 2, 3],
            estimators: vec![10, 50, 100],
            proportions: linspace(0.0, 1.0, 21),
            learning_rate: 0.1,
        }
    }
}

impl ComplexitySweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        check_proportions(&self.proportions)?;
        if self.folds < 2 {
            return arg("at least two folds are required");
        }
        if self.depths.is_empty() || self.estimators.is_empty() || self.proportions.is_empty() {
            return arg("grid axes must be non-empty");
        }
        for &d in &self.depths {
            GbdtConfig { max_depth: d, n_estimators: 1, learning_rate: self.learning_rate, class_balanced: false }.validate()?;
        }
        for &e in &self.estimators {
            GbdtConfig { max_depth: 1, n_estimators: e, learning_rate: self.learning_rate, class_balanced: false }.validate()?;
        }
        Ok(())
    }
}

/// One grid cell on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub depth: usize,
    pub estimators: usize,
    pub proportion: f64,
    pub fold: usize,
    pub n_train: usize,
    pub report: FairnessReport,
}

/// Fold-averaged metrics for a cell; undefined fold values are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityCell {
    pub depth: usize,
    pub estimators: usize,
    pub proportion: f64,
    pub mean_population_auc: f64,
    pub mean_abs_delta_tpr: f64,
    pub se_abs_delta_tpr: f64,
    pub mean_abs_delta_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySummary {
    pub config: ComplexitySweepConfig,
    pub data_seed: u64,
    pub cells: Vec<ComplexityCell>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityOutput {
    /// Ordered by depth, estimators, proportion, fold.
    pub rows: Vec<ComplexityRow>,
    pub summary: ComplexitySummary,
}

impl ComplexityOutput {
    pub fn table(&self) -> Table {
        let mut header = vec!["depth", "estimators", "proportion", "fold", "n_train"];
        header.extend(REPORT_COLUMNS);
        let mut t = Table::new(&header);
        for r in &self.rows {
            let mut row = vec![
                r.depth.to_string(),
                r.estimators.to_string(),
                fmt_num(r.proportion),
                r.fold.to_string(),
                r.n_train.to_string(),
            ];
            row.extend(report_cells(&r.report));
            t.push(row);
        }
        t
    }

    pub fn cell(&self, depth: usize, estimators: usize, proportion: f64) -> Option<&ComplexityCell> {
        self.summary
            .cells
            .iter()
            .find(|c| c.depth == depth && c.estimators == estimators && c.proportion == proportion)
    }
}

/// Assigns records to `folds` folds after a seeded shuffle.
pub fn fold_assignment<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// For each fold and proportion, a stratified training set the size of the
/// smallest group in the training folds; every (depth, estimators) pair is
/// trained on that same set and scored on the held-out fold.
pub fn complexity_sweep(cfg: &ComplexitySweepConfig) -> Result<ComplexityOutput> {
    cfg.validate()?;
    let mut data_rng = substream(cfg.seed, &[STREAM_DATA]);
    let data = cfg.task.draw(&mut data_rng)?;
    let fold_of = fold_assignment(data.len(), cfg.folds, &mut data_rng);
    let max_est = *cfg.estimators.iter().max().expect("non-empty");
    let jobs: Vec<(usize, usize)> =
        (0..cfg.folds).flat_map(|f| (0..cfg.proportions.len()).map(move |p| (f, p))).collect();
    let results: Vec<(Vec<ComplexityRow>, Vec<String>)> = jobs
        .into_par_iter()
        .map(|(fold, pi)| {
            let train: Vec<Record> = (0..data.len()).filter(|&i| fold_of[i] != fold).map(|i| data[i].clone()).collect();
            let test = Split::from_records((0..data.len()).filter(|&i| fold_of[i] == fold).map(|i| &data[i]), 0);
            let g1 = train.iter().filter(|r| group_of(r, 0) == 1).count();
            let n = g1.min(train.len() - g1);
            if n == 0 {
                return arg("a group is missing from the training folds");
            }
            let p = cfg.proportions[pi];
            let mut rng = substream(cfg.seed, &[fold as u64, STREAM_POOL, pi as u64]);
            let sample = srs_sample(&train, 0, p, n, &mut rng)?;
            let split = Split::from_records(&sample.records, 0);
            let warnings = sample.warnings.iter().map(|w| format!("fold {fold} proportion {}: {w}", fmt_num(p))).collect();
            let mut rows = vec![];
            for &depth in &cfg.depths {
                let gbdt = GbdtConfig { max_depth: depth, n_estimators: max_est, learning_rate: cfg.learning_rate, class_balanced: false };
                let model = fit_gbdt(&split.x, &split.y, None, &gbdt)?;
                for &e in &cfg.estimators {
                    let scores: Vec<f64> = test.x.iter().map(|x| sigmoid(model.staged_score(x, e))).collect();
                    rows.push(ComplexityRow {
                        depth,
                        estimators: e,
                        proportion: p,
                        fold,
                        n_train: split.y.len(),
                        report: FairnessReport::from_scores(&scores, &test.y, &test.g, 0.5)?,
                    });
                }
            }
            Ok((rows, warnings))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = vec![];
    let mut rows = vec![];
    for (r, w) in results {
        rows.extend(r);
        warnings.extend(w);
    }
    let pos = |v: &[usize], x: usize| v.iter().position(|&y| y == x).expect("grid value");
    rows.sort_by_key(|r| {
        (pos(&cfg.depths, r.depth), pos(&cfg.estimators, r.estimators), cfg.proportions.iter().position(|&p| p == r.proportion), r.fold)
    });
    let mut cells = vec![];
    for &depth in &cfg.depths {
        for &e in &cfg.estimators {
            for &p in &cfg.proportions {
                let sel: Vec<&FairnessReport> = rows
                    .iter()
                    .filter(|r| r.depth == depth && r.estimators == e && r.proportion == p)
                    .map(|r| &r.report)
                    .collect();
                let col = |f: &dyn Fn(&FairnessReport) -> Option<f64>| -> Vec<f64> { sel.iter().filter_map(|r| f(r)).collect() };
                let (dt, dt_se) = mean_se(&col(&|r| r.delta_tpr.map(f64::abs)));
                cells.push(ComplexityCell {
                    depth,
                    estimators: e,
                    proportion: p,
                    mean_population_auc: mean_se(&col(&|r| r.population_auc)).0,
                    mean_abs_delta_tpr: dt,
                    se_abs_delta_tpr: dt_se,
                    mean_abs_delta_auc: mean_se(&col(&|r| r.delta_auc.map(f64::abs))).0,
                });
            }
        }
    }
    let summary = ComplexitySummary { config: cfg.clone(), data_seed: derive_seed(cfg.seed, &[STREAM_DATA]), cells, warnings };
    Ok(ComplexityOutput { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ComplexitySweepConfig {
        ComplexitySweepConfig {
            folds: 3,
            task: XorGroupTask { n: 900, ..Default::default() },
            depths: vec![1, 3],
            estimators: vec![10, 100],
            proportions: vec![0.5],
            ..Default::default()
        }
    }

    #[test]
    fn single_cell_grid() {
        let cfg = ComplexitySweepConfig { depths: vec![2], estimators: vec![5], ..tiny() };
        let out = complexity_sweep(&cfg).unwrap();
        assert_eq!(out.summary.cells.len(), 1);
        assert_eq!(out.rows.len(), 3);
    }

    #[test]
    fn report_count_is_grid_size() {
        let cfg = ComplexitySweepConfig { proportions: vec![0.2, 0.5, 0.8], ..tiny() };
        let out = complexity_sweep(&cfg).unwrap();
        assert_eq!(out.summary.cells.len(), 2 * 2 * 3);
        assert_eq!(out.rows.len(), 2 * 2 * 3 * 3);
    }

    #[test]
    fn deeper_trees_close_the_tpr_gap() {
        let out = complexity_sweep(&tiny()).unwrap();
        let shallow = out.cell(1, 10, 0.5).unwrap();
        let deep = out.cell(3, 100, 0.5).unwrap();
        assert!(shallow.mean_abs_delta_tpr > deep.mean_abs_delta_tpr, "{shallow:?} {deep:?}");
    }

    #[test]
    fn training_size_is_smallest_group() {
        let out = complexity_sweep(&tiny()).unwrap();
        let n_train = out.rows[0].n_train;
        assert!(n_train > 100 && n_train < 300, "{n_train}");
    }

    #[test]
    fn folds_partition_the_data() {
        let f = fold_assignment(10, 3, &mut substream(0, &[]));
        let counts: Vec<usize> = (0..3).map(|k| f.iter().filter(|&&x| x == k).count()).collect();
        assert_eq!(counts, vec![4, 3, 3]);
    }

    #[test]
    fn one_fold_is_rejected() {
        assert!(complexity_sweep(&ComplexitySweepConfig { folds: 1, ..tiny() }).is_err());
    }
}
