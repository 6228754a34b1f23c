//! Group-wise AUC, TPR and TNR, and the disparities between two groups.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::learners::{predict_proba, Classifier};

/// Rank-sum AUC: `P(s+ > s-) + P(s+ = s-) / 2`, exact via sorting.
///
/// The count of won and tied pairs is accumulated as an integer (ties
/// count one, wins two) so the result equals brute-force pairwise
/// comparison bit for bit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return arg("scores and labels differ in length");
    }
    if scores.iter().any(|s| s.is_nan()) {
        return arg("scores must not be NaN");
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice_u = 2 * (#wins) + (#ties) over positive/negative pairs.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let block = &order[i..j];
        let p = block.iter().filter(|&&k| labels[k] == 1).count() as u128;
        let n = block.len() as u128 - p;
        twice_u += p * (2 * negatives_below + n);
        negatives_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Counts behind TPR and TNR at a threshold; prediction is 1 iff
/// `score >= threshold`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn new(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (l == 1, s >= threshold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        c
    }

    pub fn tpr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    pub fn tnr(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }
}

/// `(TPR, TNR)`; either is `None` when its class is absent.
pub fn tpr_tnr(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(Option<f64>, Option<f64>)> {
    if scores.len() != labels.len() {
        return arg("scores and labels differ in length");
    }
    let c = Confusion::new(scores, labels, threshold);
    Ok((c.tpr(), c.tnr()))
}

/// Metrics for one group. `None` marks a metric undefined on that group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub size: usize,
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

impl GroupMetrics {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let c = Confusion::new(scores, labels, threshold);
        Self { size: labels.len(), auc: auc(scores, labels).ok(), tpr: c.tpr(), tnr: c.tnr() }
    }
}

/// Population and per-group metrics with `G0 - G1` disparities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub population_auc: Option<f64>,
    pub groups: [GroupMetrics; 2],
    pub delta_auc: Option<f64>,
    pub delta_tpr: Option<f64>,
    pub delta_tnr: Option<f64>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

impl FairnessReport {
    /// Builds a report from scores; `groups[i]` is 0 or 1.
    pub fn from_scores(scores: &[f64], labels: &[u8], groups: &[u8], threshold: f64) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != groups.len() {
            return arg("scores, labels and groups differ in length");
        }
        if scores.is_empty() {
            return arg("test set is empty");
        }
        if groups.iter().any(|&g| g > 1) {
            return arg("groups must be 0 or 1");
        }
        let split = |g: u8| -> (Vec<f64>, Vec<u8>) {
            (0..scores.len()).filter(|&i| groups[i] == g).map(|i| (scores[i], labels[i])).unzip()
        };
        let (s0, l0) = split(0);
        let (s1, l1) = split(1);
        let g0 = GroupMetrics::compute(&s0, &l0, threshold);
        let g1 = GroupMetrics::compute(&s1, &l1, threshold);
        Ok(Self {
            population_auc: auc(scores, labels).ok(),
            delta_auc: diff(g0.auc, g1.auc),
            delta_tpr: diff(g0.tpr, g1.tpr),
            delta_tnr: diff(g0.tnr, g1.tnr),
            groups: [g0, g1],
        })
    }
}

/// Evaluates `model` on `x` at threshold 0.5.
pub fn group_report<C: Classifier + ?Sized>(model: &C, x: &[Vec<f64>], labels: &[u8], groups: &[u8]) -> Result<FairnessReport> {
    let scores = predict_proba(model, x)?;
    FairnessReport::from_scores(&scores, labels, groups, 0.5)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLoss {
    #[default]
    OneMinusAuc,
    /// Class-balanced mean log loss within the group.
    WeightedLogLoss,
}

/// Outcome of a worst-group search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstGroup {
    pub group: u8,
    pub losses: [Option<f64>; 2],
    /// Groups left out because their loss was undefined.
    pub excluded: Vec<u8>,
}

fn group_loss(scores: &[f64], labels: &[u8], loss: GroupLoss) -> Option<f64> {
    match loss {
        GroupLoss::OneMinusAuc => auc(scores, labels).ok().map(|a| 1.0 - a),
        GroupLoss::WeightedLogLoss => {
            let pos = labels.iter().filter(|&&l| l == 1).count();
            let neg = labels.len() - pos;
            if pos == 0 || neg == 0 {
                return None;
            }
            let n = labels.len() as f64;
            let (wp, wn) = (n / (2.0 * pos as f64), n / (2.0 * neg as f64));
            let total: f64 = scores
                .iter()
                .zip(labels)
                .map(|(&p, &l)| {
                    let p = p.clamp(1e-15, 1.0 - 1e-15);
                    if l == 1 {
                        -wp * p.ln()
                    } else {
                        -wn * (1.0 - p).ln()
                    }
                })
                .sum();
            Some(total / n)
        }
    }
}

/// Group with the larger loss; ties go to group 0. Groups whose loss is
/// undefined are excluded and listed.
pub fn worst_group_from_scores(scores: &[f64], labels: &[u8], groups: &[u8], loss: GroupLoss) -> Result<WorstGroup> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return arg("scores, labels and groups differ in length");
    }
    let losses: [Option<f64>; 2] = [0u8, 1].map(|g| {
        let (s, l): (Vec<f64>, Vec<u8>) =
            (0..scores.len()).filter(|&i| groups[i] == g).map(|i| (scores[i], labels[i])).unzip();
        group_loss(&s, &l, loss)
    });
    let excluded: Vec<u8> = (0u8..2).filter(|&g| losses[g as usize].is_none()).collect();
    let group = match losses {
        [Some(a), Some(b)] => u8::from(b > a),
        [Some(_), None] => 0,
        [None, Some(_)] => 1,
        [None, None] => return Err(Error::UndefinedMetric("loss undefined for both groups".into())),
    };
    Ok(WorstGroup { group, losses, excluded })
}

pub fn worst_group<C: Classifier + ?Sized>(
    model: &C,
    x: &[Vec<f64>],
    labels: &[u8],
    groups: &[u8],
    loss: GroupLoss,
) -> Result<WorstGroup> {
    let scores = predict_proba(model, x)?;
    worst_group_from_scores(&scores, labels, groups, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut twice = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li == 1 {
                p += 1;
            } else {
                n += 1;
            }
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj == 0 {
                    twice += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
                }
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn tpr_tnr_examples() {
        assert_eq!(tpr_tnr(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), (Some(1.0), Some(1.0)));
        assert_eq!(tpr_tnr(&[0.9, 0.6, 0.7], &[1, 0, 0], 0.5).unwrap(), (Some(1.0), Some(0.0)));
        assert_eq!(tpr_tnr(&[0.6, 0.4, 0.7, 0.2], &[1, 1, 0, 0], 0.5).unwrap(), (Some(0.5), Some(0.5)));
        assert_eq!(tpr_tnr(&[0.5], &[1], 0.5).unwrap(), (Some(1.0), None));
    }

    #[test]
    fn identical_groups_have_zero_disparity() {
        let scores = [0.2, 0.7, 0.4, 0.9, 0.2, 0.7, 0.4, 0.9];
        let labels = [0, 1, 1, 0, 0, 1, 1, 0];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let r = FairnessReport::from_scores(&scores, &labels, &groups, 0.5).unwrap();
        assert_eq!((r.delta_auc, r.delta_tpr, r.delta_tnr), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn noisy_group_has_lower_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let (mut s, mut l, mut g) = (vec![], vec![], vec![]);
        for i in 0..n {
            let group = (i % 2) as u8;
            let label = u8::from(rng.random::<f64>() < 0.5);
            let score = if group == 0 { 0.25 + 0.5 * label as f64 } else { rng.random() };
            s.push(score);
            l.push(label);
            g.push(group);
        }
        let r = FairnessReport::from_scores(&s, &l, &g, 0.5).unwrap();
        let a0 = r.groups[0].auc.unwrap();
        assert_eq!(a0, 1.0);
        assert!((r.delta_auc.unwrap() - (a0 - 0.5)).abs() < 0.02);
    }

    #[test]
    fn undefined_metrics_are_flagged() {
        let r = FairnessReport::from_scores(&[0.2, 0.8, 0.6], &[0, 1, 1], &[0, 0, 1], 0.5).unwrap();
        assert_eq!(r.groups[1].auc, None);
        assert_eq!(r.groups[1].tnr, None);
        assert_eq!(r.delta_auc, None);
        assert_eq!(r.delta_tpr, Some(0.0));
    }

    #[test]
    fn worst_group_rules() {
        // Group 1 has a single class.
        let w = worst_group_from_scores(&[0.2, 0.8, 0.6], &[0, 1, 1], &[0, 0, 1], GroupLoss::OneMinusAuc).unwrap();
        assert_eq!((w.group, w.excluded.clone()), (0, vec![1]));
        let w = worst_group_from_scores(&[0.2, 0.8, 0.2, 0.8], &[0, 1, 0, 1], &[0, 0, 1, 1], GroupLoss::WeightedLogLoss)
            .unwrap();
        assert_eq!(w.group, 0);
        // Group 0 AUC 1.0, group 1 AUC 0.5.
        let w = worst_group_from_scores(&[0.2, 0.8, 0.5, 0.5], &[0, 1, 0, 1], &[0, 0, 1, 1], GroupLoss::OneMinusAuc).unwrap();
        assert_eq!(w.group, 1);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..=200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
                prop::collection::vec(0u8..=1, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn auc_equals_brute_force((s, l) in instance()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            prop_assert_eq!(auc(&s, &l).unwrap(), brute(&s, &l));
        }

        #[test]
        fn auc_complement_is_exact((s, l) in instance()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let flipped: Vec<u8> = l.iter().map(|v| 1 - v).collect();
            prop_assert_eq!(auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap(), 1.0);
        }

        #[test]
        fn auc_ignores_monotone_transforms((s, l) in instance()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }

        #[test]
        fn swapping_groups_negates_disparities((s, l) in instance(), g in prop::collection::vec(0u8..=1, 200)) {
            let g = &g[..s.len()];
            let swapped: Vec<u8> = g.iter().map(|v| 1 - v).collect();
            let a = FairnessReport::from_scores(&s, &l, g, 0.5).unwrap();
            let b = FairnessReport::from_scores(&s, &l, &swapped, 0.5).unwrap();
            prop_assert_eq!(a.delta_auc.map(|v| -v), b.delta_auc);
            prop_assert_eq!(a.delta_tpr.map(|v| -v), b.delta_tpr);
            prop_assert_eq!(a.delta_tnr.map(|v| -v), b.delta_tnr);
            if let (Some(d), Some(x), Some(y)) = (a.delta_auc, a.groups[0].auc, a.groups[1].auc) {
                prop_assert_eq!(d, x - y);
            }
        }
    }
}
