use nalgebra::DMatrix;

use super::Predictor;
use crate::error::{Error, Result};

/// k-nearest-neighbour regression on standardised features.
#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
    /// Standardised training rows, row-major.
    train: Vec<f64>,
    targets: Vec<f64>,
}

/// Store the training set; prediction averages the `k` closest rows in
/// Euclidean distance after centring and scaling each feature by its
/// training mean and standard deviation. Equal distances are ordered by
/// training row index.
pub fn fit_knn(features: &DMatrix<f64>, targets: &[f64], k: usize) -> Result<KnnModel> {
    let (n, p) = features.shape();
    if targets.len() != n {
        return Err(Error::dimension(format!("{n} feature rows, {} targets", targets.len())));
    }
    if n == 0 || k == 0 || k > n {
        return Err(Error::domain(format!("k = {k} outside 1..={n}")));
    }
    if features.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite feature or target"));
    }
    let mut center = Vec::with_capacity(p);
    let mut scale = Vec::with_capacity(p);
    for j in 0..p {
        let col = features.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        center.push(mean);
        scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    let mut train = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            train.push((features[(i, j)] - center[j]) / scale[j]);
        }
    }
    Ok(KnnModel { k, center, scale, train, targets: targets.to_vec() })
}

impl Predictor for KnnModel {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.center.len();
        if features.ncols() != p {
            return Err(Error::dimension(format!("k-NN fit on {p} features, got {}", features.ncols())));
        }
        let n = self.targets.len();
        let mut query = vec![0.0; p];
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(features.nrows());
        for r in 0..features.nrows() {
            for j in 0..p {
                query[j] = (features[(r, j)] - self.center[j]) / self.scale[j];
            }
            dist.clear();
            dist.extend(self.train.chunks_exact(p.max(1)).take(n).enumerate().map(|(i, row)| {
                let d: f64 = if p == 0 { 0.0 } else { row.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum() };
                (d, i)
            }));
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if self.k < n {
                dist.select_nth_unstable_by(self.k - 1, by_dist);
            }
            let sum: f64 = dist[..self.k].iter().map(|&(_, i)| self.targets[i]).sum();
            out.push(sum / self.k as f64);
        }
        Ok(out)
    }
}
