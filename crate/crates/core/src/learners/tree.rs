//! Greedy CART regression trees and bootstrap-aggregated forests of them.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;

use super::Predictor;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// A split must lower the node's squared error by more than this fraction.
pub(crate) const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf { value: f64 },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
    n_features: usize,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn predict_row(&self, features: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if features[(row, feature)] <= threshold { left } else { right };
                }
            }
        }
    }
}

impl Predictor for RegressionTree {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::dimension(format!(
                "tree fit on {} features, asked to predict with {}",
                self.n_features,
                features.ncols()
            )));
        }
        Ok((0..features.nrows()).map(|i| self.predict_row(features, i)).collect())
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    features: &'a DMatrix<f64>,
    targets: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    rng: Option<Stream>,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let m = rows.len();
        let mean = rows.iter().map(|&i| self.targets[i]).sum::<f64>() / m as f64;
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: mean });

        if depth >= self.max_depth || m < 2 * self.min_leaf {
            return at;
        }
        let sse: f64 = rows.iter().map(|&i| (self.targets[i] - mean).powi(2)).sum();
        let constant = rows.iter().all(|&i| self.targets[i] == self.targets[rows[0]]);
        if constant || sse <= 0.0 {
            return at;
        }
        let Some(best) = self.best_split(rows, mean) else {
            return at;
        };
        // centred targets: the parent's own term sum^2/m is ~0, so score is the gain
        if best.score <= MIN_RELATIVE_GAIN * sse {
            return at;
        }

        let mut split = 0;
        for k in 0..m {
            if self.features[(rows[k], best.feature)] <= best.threshold {
                rows.swap(k, split);
                split += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[at] = TreeNode::Split { feature: best.feature, threshold: best.threshold, left, right };
        at
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.features.ncols();
        match self.rng.as_mut() {
            Some(rng) if self.mtry < p => {
                let mut f = index::sample(rng, p, self.mtry).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    /// Best split by squared-error reduction. Features are scanned in
    /// ascending order and thresholds ascending; only strictly better
    /// candidates replace the incumbent.
    fn best_split(&mut self, rows: &[usize], mean: f64) -> Option<Candidate> {
        let m = rows.len();
        let total: f64 = rows.iter().map(|&i| self.targets[i] - mean).sum();
        let mut best: Option<Candidate> = None;
        for feature in self.candidate_features() {
            self.scratch.clear();
            self.scratch
                .extend(rows.iter().map(|&i| (self.features[(i, feature)], self.targets[i] - mean)));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 1..m {
                left_sum += self.scratch[k - 1].1;
                if k < self.min_leaf || m - k < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.scratch[k - 1].0, self.scratch[k].0);
                if !(lo < hi) {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (m - k) as f64
                    - total * total / m as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Candidate { feature, threshold, score });
                }
            }
        }
        best
    }
}

fn check_inputs(features: &DMatrix<f64>, targets: &[f64], min_leaf: usize) -> Result<()> {
    let n = features.nrows();
    if n == 0 || targets.is_empty() {
        return Err(Error::domain("tree needs at least one row"));
    }
    if targets.len() != n {
        return Err(Error::dimension(format!("{n} feature rows, {} targets", targets.len())));
    }
    if min_leaf == 0 {
        return Err(Error::domain("min_leaf must be at least 1"));
    }
    if n < 2 * min_leaf {
        return Err(Error::domain(format!("{n} rows cannot hold two leaves of {min_leaf}")));
    }
    if features.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite feature or target"));
    }
    Ok(())
}

fn grow(
    features: &DMatrix<f64>,
    targets: &[f64],
    rows: &mut [usize],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    rng: Option<Stream>,
) -> RegressionTree {
    let mut builder = Builder {
        features,
        targets,
        max_depth,
        min_leaf,
        mtry,
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(rows.len()),
    };
    builder.build(rows, 0);
    RegressionTree { nodes: builder.nodes, n_features: features.ncols() }
}

/// Grow one tree on all rows, considering every feature at every node.
pub fn fit_regression_tree(
    features: &DMatrix<f64>,
    targets: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    check_inputs(features, targets, min_leaf)?;
    let mut rows: Vec<usize> = (0..features.nrows()).collect();
    Ok(grow(features, targets, &mut rows, max_depth, min_leaf, features.ncols(), None))
}

#[derive(Debug, Clone)]
pub struct BaggedTrees {
    trees: Vec<RegressionTree>,
}

impl BaggedTrees {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }
}

impl Predictor for BaggedTrees {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; features.nrows()];
        for tree in &self.trees {
            for (a, v) in acc.iter_mut().zip(tree.predict(features)?) {
                *a += v;
            }
        }
        let k = self.trees.len() as f64;
        Ok(acc.into_iter().map(|v| v / k).collect())
    }
}

/// Average of `n_trees` trees, each grown on a bootstrap resample (when
/// `bootstrap` is set) with `mtry` features drawn per node. Tree `t` draws
/// from its own substream of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn fit_bagged_trees(
    features: &DMatrix<f64>,
    targets: &[f64],
    n_trees: usize,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    bootstrap: bool,
    seed: u64,
) -> Result<BaggedTrees> {
    check_inputs(features, targets, min_leaf)?;
    let (n, p) = features.shape();
    if n_trees == 0 {
        return Err(Error::domain("n_trees must be at least 1"));
    }
    if mtry == 0 || mtry > p {
        return Err(Error::domain(format!("mtry {mtry} outside 1..={p}")));
    }
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng = rng::substream(seed, &[rng::label::TREE, t as u64]);
            let mut rows: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(features, targets, &mut rows, max_depth, min_leaf, mtry, Some(rng))
        })
        .collect();
    Ok(BaggedTrees { trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_is_global_mean() {
        let f = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let tree = fit_regression_tree(&f, &[1.0, 2.0, 3.0, 6.0], 0, 1).unwrap();
        assert_eq!(tree.predict(&f).unwrap(), vec![3.0; 4]);
        assert_eq!(tree.depth(), 0);
    }

    #[test]
    fn step_function_single_split() {
        let xs = [-2.0, -1.5, -0.3, 0.4, 1.0, 2.2];
        let f = DMatrix::from_column_slice(6, 1, &xs);
        let y: Vec<f64> = xs.iter().map(|&v| f64::from(u8::from(v > 0.0))).collect();
        let tree = fit_regression_tree(&f, &y, 1, 1).unwrap();
        assert_eq!(tree.predict(&f).unwrap(), y);
        match tree.nodes()[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!((threshold - 0.05).abs() < 1e-15);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn ties_go_to_lowest_feature() {
        // two identical columns: the split must use column 0
        let col = [0.0, 1.0, 2.0, 3.0];
        let f = DMatrix::from_fn(4, 2, |i, _| col[i]);
        let tree = fit_regression_tree(&f, &[0.0, 0.0, 5.0, 5.0], 1, 1).unwrap();
        assert!(matches!(tree.nodes()[0], TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn min_leaf_respected() {
        let f = DMatrix::from_column_slice(6, 1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let tree = fit_regression_tree(&f, &[9.0, 0.0, 0.0, 0.0, 0.0, 0.0], 3, 2).unwrap();
        if let TreeNode::Split { threshold, .. } = tree.nodes()[0] {
            assert!(threshold >= 1.0);
        }
        assert!(fit_regression_tree(&f, &[0.0; 6], 3, 4).is_err());
        let empty = DMatrix::<f64>::zeros(0, 1);
        assert!(fit_regression_tree(&empty, &[], 1, 1).is_err());
    }

    #[test]
    fn single_unbootstrapped_tree_matches_plain_tree() {
        let f = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 13) % 11) as f64 + 0.1 * j as f64);
        let y: Vec<f64> = (0..30).map(|i| ((i * 5) % 9) as f64).collect();
        let plain = fit_regression_tree(&f, &y, 4, 2).unwrap();
        let bag = fit_bagged_trees(&f, &y, 1, 4, 2, 3, false, 42).unwrap();
        assert_eq!(bag.trees()[0], plain);
        assert_eq!(bag.predict(&f).unwrap(), plain.predict(&f).unwrap());
    }

    #[test]
    fn bagged_constant_targets() {
        let f = DMatrix::from_fn(20, 2, |i, j| (i + j) as f64);
        let bag = fit_bagged_trees(&f, &[3.5; 20], 10, 5, 1, 1, true, 1).unwrap();
        assert!(bag.predict(&f).unwrap().iter().all(|&v| v == 3.5));
        assert!(fit_bagged_trees(&f, &[3.5; 20], 10, 5, 1, 3, true, 1).is_err());
        assert!(fit_bagged_trees(&f, &[3.5; 20], 0, 5, 1, 1, true, 1).is_err());
    }
}
