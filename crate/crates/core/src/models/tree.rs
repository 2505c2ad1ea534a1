//! CART classification trees with Gini impurity.
//!
//! Split candidates are midpoints between consecutive distinct values of a
//! feature; rows with `x <= threshold` go left. Split quality is compared in
//! exact integer arithmetic so ties resolve deterministically to the lowest
//! feature index, then the lowest threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{Dataset, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_samples_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Training rows reaching this node per class `[low, high]`.
        counts: [u64; 2],
    },
    Leaf {
        counts: [u64; 2],
    },
}

impl TreeNode {
    pub fn counts(&self) -> [u64; 2] {
        match self {
            TreeNode::Split { counts, .. } | TreeNode::Leaf { counts } => *counts,
        }
    }
}

/// Gini impurity of class counts.
pub fn gini(counts: [u64; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl DecisionTreeModel {
    pub fn leaf_counts(&self, x: &[f64]) -> [u64; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { counts } => return *counts,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Share of class-1 training rows in the reached leaf.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let c = self.leaf_counts(x);
        c[1] as f64 / (c[0] + c[1]) as f64
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// Score to maximize, as the fraction `num / den` with
/// `Σ_child Σ_k n_ck² / n_c = num / den`; larger means lower weighted Gini.
#[derive(Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(left: [u64; 2], right: [u64; 2]) -> Self {
        let sq = |c: [u64; 2]| (c[0] as u128).pow(2) + (c[1] as u128).pow(2);
        let nl = (left[0] + left[1]) as u128;
        let nr = (right[0] + right[1]) as u128;
        Self {
            num: sq(left) * nr + sq(right) * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: SplitScore,
}

fn count(data: &Dataset, idx: &[usize]) -> [u64; 2] {
    let mut c = [0u64; 2];
    for &i in idx {
        c[data.rows[i].label as usize] += 1;
    }
    c
}

fn best_split(data: &Dataset, idx: &[usize], min_leaf: usize) -> Option<BestSplit> {
    let total = count(data, idx);
    let n = idx.len();
    let mut best: Option<BestSplit> = None;
    let mut sorted = idx.to_vec();
    for f in 0..data.n_features() {
        sorted.sort_by(|&a, &b| {
            data.rows[a].features[f]
                .total_cmp(&data.rows[b].features[f])
                .then(a.cmp(&b))
        });
        let mut left = [0u64; 2];
        for k in 0..n - 1 {
            left[data.rows[sorted[k]].label as usize] += 1;
            let v = data.rows[sorted[k]].features[f];
            let next = data.rows[sorted[k + 1]].features[f];
            if v == next {
                continue;
            }
            let nl = k + 1;
            if nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = SplitScore::new(left, right);
            if best
                .as_ref()
                .is_none_or(|b| score.cmp(&b.score) == Ordering::Greater)
            {
                best = Some(BestSplit {
                    feature: f,
                    threshold: 0.5 * (v + next),
                    score,
                });
            }
        }
    }
    best
}

/// Greedy CART growth. A node becomes a leaf when it is pure, at
/// `max_depth`, or when no split leaves `min_samples_leaf` rows on each side.
pub fn train_tree(train: &Dataset, params: &TreeParams) -> Result<DecisionTreeModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let min_leaf = params.min_samples_leaf.max(1);
    let mut nodes = Vec::new();
    let all: Vec<usize> = (0..train.len()).collect();
    grow(train, all, 0, params.max_depth, min_leaf, &mut nodes);
    Ok(DecisionTreeModel {
        nodes,
        max_depth: params.max_depth,
        min_samples_leaf: min_leaf,
    })
}

fn grow(
    data: &Dataset,
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let counts = count(data, &idx);
    let me = nodes.len();
    nodes.push(TreeNode::Leaf { counts });
    if depth >= max_depth || counts[0] == 0 || counts[1] == 0 {
        return me;
    }
    let Some(split) = best_split(data, &idx, min_leaf) else {
        return me;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| data.rows[i].features[split.feature] <= split.threshold);
    let left = grow(data, l, depth + 1, max_depth, min_leaf, nodes);
    let right = grow(data, r, depth + 1, max_depth, min_leaf, nodes);
    nodes[me] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
        counts,
    };
    me
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(x: Vec<Vec<f64>>, y: Vec<u8>) -> Dataset {
        let n = x[0].len();
        Dataset::from_xy((0..n).map(|i| format!("f{i}")).collect(), x, y).unwrap()
    }

    #[test]
    fn one_threshold() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * 7 % 10) as f64]).collect();
        let y: Vec<u8> = (0..10).map(|i| u8::from(i >= 6)).collect();
        let t = train_tree(&ds(x, y), &TreeParams { max_depth: 8, min_samples_leaf: 1 }).unwrap();
        assert_eq!(t.depth(), 1);
        match &t.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 5.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn pure_input_is_a_leaf() {
        let t = train_tree(&ds(vec![vec![1.0], vec![2.0]], vec![1, 1]), &TreeParams::default()).unwrap();
        assert_eq!(t.nodes, vec![TreeNode::Leaf { counts: [0, 2] }]);
        assert_eq!(t.predict_proba(&[0.0]), 1.0);
    }

    #[test]
    fn leaf_fraction_probability() {
        let t = DecisionTreeModel {
            nodes: vec![TreeNode::Leaf { counts: [3, 1] }],
            max_depth: 0,
            min_samples_leaf: 1,
        };
        assert_eq!(t.predict_proba(&[0.0]), 0.25);
    }

    /// Exhaustive search: every feature and midpoint, scored from scratch.
    fn oracle_predict(data: &Dataset, idx: &[usize], depth: usize, x: &[f64]) -> f64 {
        let c = count(data, idx);
        let leaf = c[1] as f64 / (c[0] + c[1]) as f64;
        if depth == 0 || c[0] == 0 || c[1] == 0 {
            return leaf;
        }
        let mut best: Option<(u128, u128, usize, f64)> = None;
        for f in 0..data.n_features() {
            let mut vals: Vec<f64> = idx.iter().map(|&i| data.rows[i].features[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| data.rows[i].features[f] <= t);
                let (cl, cr) = (count(data, &l), count(data, &r));
                let s = |c: [u64; 2]| (c[0] * c[0] + c[1] * c[1]) as u128;
                let (nl, nr) = (l.len() as u128, r.len() as u128);
                let (num, den) = (s(cl) * nr + s(cr) * nl, nl * nr);
                if best.is_none_or(|(bn, bd, _, _)| num * bd > bn * den) {
                    best = Some((num, den, f, t));
                }
            }
        }
        let Some((_, _, f, t)) = best else { return leaf };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.rows[i].features[f] <= t);
        oracle_predict(data, if x[f] <= t { &l } else { &r }, depth - 1, x)
    }

    #[test]
    fn depth_two_matches_exhaustive_oracle() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(0..20) as f64).collect()).collect();
            let y: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
            let data = ds(x, y);
            let t = train_tree(&data, &TreeParams { max_depth: 2, min_samples_leaf: 1 }).unwrap();
            let all: Vec<usize> = (0..50).collect();
            for r in &data.rows {
                assert_eq!(t.predict_proba(&r.features), oracle_predict(&data, &all, 2, &r.features));
            }
        }
    }

    #[test]
    fn min_samples_leaf_respected_and_impurity_never_worsens() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        let y: Vec<u8> = x.iter().map(|v| u8::from(v[0] + 0.4 * v[1] + 0.3 * rng.random::<f64>() > 0.8)).collect();
        let data = ds(x, y);
        let t = train_tree(&data, &TreeParams { max_depth: 6, min_samples_leaf: 7 }).unwrap();
        assert!(t.depth() <= 6);
        for node in &t.nodes {
            match node {
                TreeNode::Leaf { counts } => assert!(counts[0] + counts[1] >= 7),
                TreeNode::Split { left, right, counts, threshold, .. } => {
                    assert!(threshold.is_finite());
                    let (cl, cr) = (t.nodes[*left].counts(), t.nodes[*right].counts());
                    assert_eq!([cl[0] + cr[0], cl[1] + cr[1]], *counts);
                    let n = (counts[0] + counts[1]) as f64;
                    let child = (cl[0] + cl[1]) as f64 / n * gini(cl) + (cr[0] + cr[1]) as f64 / n * gini(cr);
                    assert!(child <= gini(*counts) + 1e-12);
                }
            }
        }
        let again = train_tree(&data, &TreeParams { max_depth: 6, min_samples_leaf: 7 }).unwrap();
        assert_eq!(t, again);
    }
}
