use serde::{Deserialize, Serialize};

use super::{prepare, sigmoid, Classifier};
use crate::error::{arg, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub max_depth: usize,
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub class_balanced: bool,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self { max_depth: 3, n_estimators: 100, learning_rate: 0.1, class_balanced: false }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.max_depth) {
            return arg("max_depth must lie in 1..=8");
        }
        if !(1..=500).contains(&self.n_estimators) {
            return arg("n_estimators must lie in 1..=500");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return arg("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub n_features: usize,
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl Classifier for GbdtModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

impl GbdtModel {
    /// Score using only the first `stages` trees.
    pub fn staged_score(&self, x: &[f64], stages: usize) -> f64 {
        self.init + self.learning_rate * self.trees.iter().take(stages).map(|t| t.predict(x)).sum::<f64>()
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    target: &'a [f64],
    w: &'a [f64],
    max_depth: usize,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let (s, w) = rows.iter().fold((0.0, 0.0), |(s, w), &i| (s + self.w[i] * self.target[i], w + self.w[i]));
        if w > 0.0 {
            s / w
        } else {
            0.0
        }
    }

    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let (total_s, total_w) =
            rows.iter().fold((0.0, 0.0), |(s, w), &i| (s + self.w[i] * self.target[i], w + self.w[i]));
        let parent = total_s * total_s / total_w;
        // Residuals are bounded by 1, so gains are at most `total_w`; a
        // relative margin keeps near-ties from flipping on round-off.
        let margin = 1e-9 * total_w;
        let mut best: Option<BestSplit> = None;
        let mut order = rows.to_vec();
        for f in 0..self.x[0].len() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let (mut ls, mut lw) = (0.0, 0.0);
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                ls += self.w[i] * self.target[i];
                lw += self.w[i];
                let (here, next) = (self.x[i][f], self.x[order[pos + 1]][f]);
                if here == next || lw <= 0.0 || total_w - lw <= 0.0 {
                    continue;
                }
                let rs = total_s - ls;
                let gain = ls * ls / lw + rs * rs / (total_w - lw) - parent;
                if best.as_ref().is_none_or(|b| gain > b.gain + margin) {
                    best = Some(BestSplit { gain, feature: f, threshold: here + (next - here) / 2.0 });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(self.leaf_value(&rows)));
        let first = self.target[rows[0]];
        let pure = rows.iter().all(|&i| self.target[i] == first);
        if depth >= self.max_depth || pure {
            return id;
        }
        // Zero-gain splits are kept: a parity pattern only pays off one level down.
        let Some(split) = self.best_split(&rows).filter(|s| s.gain >= -1e-12) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

fn fit_tree(x: &[Vec<f64>], target: &[f64], w: &[f64], max_depth: usize) -> Tree {
    let rows: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
    let mut b = Builder { x, target, w, max_depth, nodes: vec![] };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

/// Gradient boosting on the logistic loss. Each stage fits a weighted
/// least-squares tree to the residuals `y - p`.
pub fn fit_gbdt(x: &[Vec<f64>], y: &[u8], weights: Option<&[f64]>, config: &GbdtConfig) -> Result<GbdtModel> {
    config.validate()?;
    if x.len() < 2 {
        return arg("at least two training rows are required");
    }
    let w = prepare(x, y, weights, config.class_balanced)?;
    let total: f64 = w.iter().sum();
    let pos: f64 = w.iter().zip(y).filter(|(_, &l)| l == 1).map(|(w, _)| w).sum();
    let p0 = (pos / total).clamp(1e-6, 1.0 - 1e-6);
    let init = (p0 / (1.0 - p0)).ln();
    let mut model = GbdtModel { n_features: x[0].len(), init, learning_rate: config.learning_rate, trees: vec![] };
    let mut scores = vec![init; x.len()];
    let mut residual = vec![0.0; x.len()];
    for _ in 0..config.n_estimators {
        for i in 0..x.len() {
            residual[i] = y[i] as f64 - sigmoid(scores[i]);
        }
        let tree = fit_tree(x, &residual, &w, config.max_depth);
        for (s, row) in scores.iter_mut().zip(x) {
            *s += config.learning_rate * tree.predict(row);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::predict_proba;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xor() -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut x = vec![];
        let mut y = vec![];
        for a in 0..2 {
            for b in 0..2 {
                for _ in 0..5 {
                    x.push(vec![a as f64, b as f64]);
                    y.push((a ^ b) as u8);
                }
            }
        }
        (x, y)
    }

    fn accuracy(m: &GbdtModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
        let p = predict_proba(m, x).unwrap();
        p.iter().zip(y).filter(|(p, &l)| u8::from(**p >= 0.5) == l).count() as f64 / y.len() as f64
    }

    fn loss(m: &GbdtModel, x: &[Vec<f64>], y: &[u8], stages: usize) -> f64 {
        x.iter()
            .zip(y)
            .map(|(r, &l)| {
                let p = sigmoid(m.staged_score(r, stages)).clamp(1e-15, 1.0 - 1e-15);
                if l == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / x.len() as f64
    }

    #[test]
    fn single_stump_cannot_learn_xor() {
        let (x, y) = xor();
        let cfg = GbdtConfig { max_depth: 1, n_estimators: 1, ..Default::default() };
        assert!(accuracy(&fit_gbdt(&x, &y, None, &cfg).unwrap(), &x, &y) <= 0.75);
    }

    #[test]
    fn depth_two_learns_xor() {
        let (x, y) = xor();
        let cfg = GbdtConfig { max_depth: 2, n_estimators: 10, ..Default::default() };
        let m = fit_gbdt(&x, &y, None, &cfg).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    fn random_data(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| (rng.random::<f64>() * 8.0).floor()).collect()).collect();
        let y = x.iter().map(|r| u8::from(r.iter().sum::<f64>() + rng.random::<f64>() * 6.0 > 3.5 * d as f64 + 3.0)).collect();
        (x, y)
    }

    #[test]
    fn duplicating_rows_gives_the_same_model() {
        let (x, y) = random_data(7, 60, 3);
        let cfg = GbdtConfig { max_depth: 3, n_estimators: 15, ..Default::default() };
        let a = fit_gbdt(&x, &y, None, &cfg).unwrap();
        let xd: Vec<Vec<f64>> = x.iter().flat_map(|r| [r.clone(), r.clone()]).collect();
        let yd: Vec<u8> = y.iter().flat_map(|&l| [l, l]).collect();
        let b = fit_gbdt(&xd, &yd, None, &cfg).unwrap();
        assert_eq!(a.trees.len(), b.trees.len());
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            assert_eq!(ta.nodes.len(), tb.nodes.len());
            for (na, nb) in ta.nodes.iter().zip(&tb.nodes) {
                match (na, nb) {
                    (TreeNode::Leaf(u), TreeNode::Leaf(v)) => assert!((u - v).abs() < 1e-12),
                    (
                        TreeNode::Split { feature: fa, threshold: ha, .. },
                        TreeNode::Split { feature: fb, threshold: hb, .. },
                    ) => assert!(fa == fb && ha == hb),
                    _ => panic!("tree shapes differ"),
                }
            }
        }
    }

    #[test]
    fn loss_never_increases_with_stages() {
        for seed in 0..5 {
            let (x, y) = random_data(seed, 80, 2);
            let cfg = GbdtConfig { max_depth: 2, n_estimators: 60, ..Default::default() };
            let m = fit_gbdt(&x, &y, None, &cfg).unwrap();
            let mut last = loss(&m, &x, &y, 0);
            for s in 1..=60 {
                let l = loss(&m, &x, &y, s);
                assert!(l <= last + 1e-12, "seed {seed} stage {s}");
                last = l;
            }
        }
    }

    #[test]
    fn deeper_trees_fit_at_least_as_well() {
        for seed in 10..16 {
            let (x, y) = random_data(seed, 50, 3);
            let mut last = 0.0;
            for depth in 1..=5 {
                let cfg = GbdtConfig { max_depth: depth, n_estimators: 200, learning_rate: 0.3, ..Default::default() };
                let acc = accuracy(&fit_gbdt(&x, &y, None, &cfg).unwrap(), &x, &y);
                assert!(acc >= last, "seed {seed} depth {depth}: {acc} < {last}");
                last = acc;
            }
        }
    }

    #[test]
    fn config_ranges() {
        assert!(GbdtConfig { max_depth: 0, ..Default::default() }.validate().is_err());
        assert!(GbdtConfig { max_depth: 9, ..Default::default() }.validate().is_err());
        assert!(GbdtConfig { n_estimators: 501, ..Default::default() }.validate().is_err());
        assert!(fit_gbdt(&[vec![1.0]], &[1], None, &GbdtConfig::default()).is_err());
    }
}
