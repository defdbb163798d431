//! Reference implementations written independently of the library code.

#![allow(dead_code)]

use drbench::learners::TreeNode;
use nalgebra::DMatrix;

pub fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Step-by-step TMLE with the fluctuation solved by plain bisection.
/// Returns (psi, epsilon, mean updated g1, mean updated g0).
pub fn tmle_oracle(x: &[u8], y: &[f64], f: &[f64], g1: &[f64], g0: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len();
    let a = y.iter().copied().fold(f64::INFINITY, f64::min);
    let b = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = |v: f64| ((v - a) / (b - a)).clamp(0.005, 0.995);
    let ys: Vec<f64> = y.iter().map(|v| (v - a) / (b - a)).collect();
    let h: Vec<f64> = (0..n).map(|i| if x[i] == 1 { 1.0 / f[i] } else { -1.0 / (1.0 - f[i]) }).collect();
    let off: Vec<f64> = (0..n).map(|i| logit(scale(if x[i] == 1 { g1[i] } else { g0[i] }))).collect();
    let score = |e: f64| (0..n).map(|i| h[i] * (ys[i] - expit(off[i] + e * h[i]))).sum::<f64>();
    // score is decreasing in e
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let e = 0.5 * (lo + hi);
    let u1: Vec<f64> = (0..n).map(|i| a + (b - a) * expit(logit(scale(g1[i])) + e / f[i])).collect();
    let u0: Vec<f64> = (0..n).map(|i| a + (b - a) * expit(logit(scale(g0[i])) - e / (1.0 - f[i]))).collect();
    let d: Vec<f64> = (0..n).map(|i| u1[i] - u0[i]).collect();
    (mean(&d), e, mean(&u1), mean(&u0))
}

/// Sum of squared deviations from the mean.
pub fn sse(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Every split is the best admissible split of its node, and every leaf
/// is a node where splitting was not allowed or gained nothing.
pub fn check_tree(nodes: &[TreeNode], features: &DMatrix<f64>, targets: &[f64], depth: usize, min_leaf: usize) -> Result<(), String> {
    let rows: Vec<usize> = (0..targets.len()).collect();
    check_node(nodes, 0, features, targets, &rows, depth, min_leaf)
}

/// All admissible `(feature, threshold, reduction)` splits of a node.
pub fn all_splits(features: &DMatrix<f64>, targets: &[f64], rows: &[usize], min_leaf: usize) -> Vec<(usize, f64, f64)> {
    let parent: Vec<f64> = rows.iter().map(|&i| targets[i]).collect();
    let total = sse(&parent);
    let mut out = Vec::new();
    for j in 0..features.ncols() {
        let mut values: Vec<f64> = rows.iter().map(|&i| features[(i, j)]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let left: Vec<f64> = rows.iter().filter(|&&i| features[(i, j)] <= t).map(|&i| targets[i]).collect();
            let right: Vec<f64> = rows.iter().filter(|&&i| features[(i, j)] > t).map(|&i| targets[i]).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            out.push((j, t, total - sse(&left) - sse(&right)));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn check_node(
    nodes: &[TreeNode],
    at: usize,
    features: &DMatrix<f64>,
    targets: &[f64],
    rows: &[usize],
    depth_left: usize,
    min_leaf: usize,
) -> Result<(), String> {
    let local: Vec<f64> = rows.iter().map(|&i| targets[i]).collect();
    let total = sse(&local);
    let splits = all_splits(features, targets, rows, min_leaf);
    let best = splits.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (1.0 + total);
    match nodes[at] {
        TreeNode::Leaf { value } => {
            ensure((value - mean(&local)).abs() < 1e-9 * (1.0 + value.abs()), || format!("leaf value {value} is not the node mean"))?;
            let must_stop = depth_left == 0 || rows.len() < 2 * min_leaf || splits.is_empty() || best <= tol;
            ensure(must_stop, || format!("leaf with {} rows could still gain {best}", rows.len()))?;
        }
        TreeNode::Split { feature, threshold, left, right } => {
            ensure(depth_left > 0, || "split below the depth limit".to_string())?;
            let chosen = splits.iter().find(|s| s.0 == feature && (s.1 - threshold).abs() < 1e-12);
            ensure(chosen.is_some(), || format!("split ({feature}, {threshold}) is not an admissible midpoint"))?;
            ensure(chosen.unwrap().2 >= best - tol, || format!("chosen gain {} below best {best}", chosen.unwrap().2))?;
            let l: Vec<usize> = rows.iter().copied().filter(|&i| features[(i, feature)] <= threshold).collect();
            let r: Vec<usize> = rows.iter().copied().filter(|&i| features[(i, feature)] > threshold).collect();
            check_node(nodes, left, features, targets, &l, depth_left - 1, min_leaf)?;
            check_node(nodes, right, features, targets, &r, depth_left - 1, min_leaf)?;
        }
    }
    Ok(())
}
