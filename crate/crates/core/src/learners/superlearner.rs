//! Cross-validated stacking ("super learner").
//!
//! Every library member is scored by out-of-fold squared error. Meta-weights
//! minimise the squared error of the convex combination of out-of-fold
//! predictions; the members with positive weight are then refit on all rows.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Learner, Predictor, TargetKind};
use crate::error::{Error, Result};
use crate::glm;
use crate::rng;

pub const DEFAULT_FOLDS: usize = 10;

/// Fold label per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    labels: Vec<usize>,
    k: usize,
}

impl Folds {
    /// Assign rows round-robin along a seeded permutation, giving fold
    /// sizes that differ by at most one.
    pub fn seeded(n: usize, k: usize, seed: u64) -> Result<Folds> {
        if k < 2 {
            return Err(Error::domain(format!("need at least 2 folds, got {k}")));
        }
        if n < k {
            return Err(Error::domain(format!("{n} rows cannot fill {k} folds")));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::substream(seed, &[rng::label::FOLDS]));
        let mut labels = vec![0; n];
        for (pos, &row) in perm.iter().enumerate() {
            labels[row] = pos % k;
        }
        Ok(Folds { labels, k })
    }

    /// Explicit labels in `0..k`; every fold must be non-empty.
    pub fn from_labels(labels: Vec<usize>) -> Result<Folds> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::domain("need at least 2 folds"));
        }
        if (0..k).any(|f| !labels.contains(&f)) {
            return Err(Error::domain("empty fold"));
        }
        Ok(Folds { labels, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.labels.len()).partition(|&i| self.labels[i] != fold)
    }
}

#[derive(Debug, Clone)]
pub struct CvRisks {
    pub names: Vec<String>,
    /// Mean out-of-fold squared error; `+inf` for learners that failed.
    pub risks: Vec<f64>,
    /// `n x k` out-of-fold predictions (zero columns for failed learners).
    pub oof: DMatrix<f64>,
    pub failed: Vec<bool>,
}

fn learner_column(
    learner: &dyn Learner,
    j: usize,
    features: &DMatrix<f64>,
    targets: &[f64],
    kind: TargetKind,
    folds: &Folds,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut col = vec![0.0; targets.len()];
    for fold in 0..folds.k() {
        let (train, test) = folds.split(fold);
        let tf = features.select_rows(&train);
        let tt: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let s = rng::derive_seed(seed, &[rng::label::LEARNER, j as u64, fold as u64]);
        let model = learner.fit(&tf, &tt, kind, s)?;
        let pred = model.predict(&features.select_rows(&test))?;
        for (&i, v) in test.iter().zip(pred) {
            if !v.is_finite() {
                return Err(Error::domain(format!("non-finite prediction from {}", learner.name())));
            }
            col[i] = match kind {
                TargetKind::Probability => v.clamp(0.0, 1.0),
                TargetKind::Real => v,
            };
        }
    }
    Ok(col)
}

/// Out-of-fold risk of every library member.
pub fn cv_risks(
    library: &[Box<dyn Learner>],
    features: &DMatrix<f64>,
    targets: &[f64],
    kind: TargetKind,
    folds: &Folds,
    seed: u64,
) -> Result<CvRisks> {
    let n = targets.len();
    if features.nrows() != n || folds.labels().len() != n {
        return Err(Error::dimension("features, targets and folds differ in length"));
    }
    let columns: Vec<Result<Vec<f64>>> = library
        .par_iter()
        .enumerate()
        .map(|(j, l)| learner_column(l.as_ref(), j, features, targets, kind, folds, seed))
        .collect();
    let k = library.len();
    let mut oof = DMatrix::zeros(n, k);
    let mut risks = Vec::with_capacity(k);
    let mut failed = Vec::with_capacity(k);
    for (j, col) in columns.into_iter().enumerate() {
        match col {
            Ok(col) => {
                let risk = col.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64;
                oof.set_column(j, &DVector::from_vec(col));
                risks.push(risk);
                failed.push(false);
            }
            Err(e) => {
                log::warn!("learner {} failed during cross-validation: {e}", library[j].name());
                risks.push(f64::INFINITY);
                failed.push(true);
            }
        }
    }
    Ok(CvRisks { names: library.iter().map(|l| l.name()).collect(), risks, oof, failed })
}

/// Lawson-Hanson active-set solution of `min ||A x - b||` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let (m, k) = a.shape();
    let b = DVector::from_column_slice(b);
    let mut x = DVector::<f64>::zeros(k);
    let mut passive = vec![false; k];
    let tol = 10.0 * f64::EPSILON * a.norm().max(1.0) * (m.max(k) as f64);

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
        let mut z = DVector::zeros(k);
        if cols.is_empty() {
            return z;
        }
        let sub = a.select_columns(&cols);
        let (sol, _) = glm::solve_least_squares(&sub, b.as_slice(), None);
        for (c, &j) in cols.iter().enumerate() {
            z[j] = sol[c];
        }
        z
    };

    for _outer in 0..3 * k + 10 {
        let w = a.transpose() * (&b - a * &x);
        let candidate = (0..k)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
        let Some(t) = candidate else { break };
        passive[t] = true;
        for _inner in 0..3 * k + 10 {
            let z = solve_passive(&passive);
            if (0..k).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let alpha = (0..k)
                .filter(|&j| passive[j] && z[j] <= 0.0)
                .map(|j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (&z - &x) * alpha;
            for j in 0..k {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Convex weights minimising `||oof w - targets||^2` over usable columns.
///
/// On the simplex `oof w - y = (oof - y 1') w`, so with `B = oof - y 1'` the
/// problem is `min ||B w||` over `w >= 0, sum w = 1`. The non-negative
/// least-squares problem `min ||B u||^2 + (1'u - 1)^2` over `u >= 0` has its
/// minimiser on the ray through the simplex optimum, so normalising the NNLS
/// solution gives the exact convex weights.
pub fn meta_weights(oof: &DMatrix<f64>, targets: &[f64], usable: &[bool], risks: &[f64]) -> Vec<f64> {
    let (n, k) = oof.shape();
    let cols: Vec<usize> = (0..k).filter(|&j| usable[j]).collect();
    let mut weights = vec![0.0; k];
    if cols.is_empty() {
        return weights;
    }
    let mut aug = DMatrix::zeros(n + 1, cols.len());
    for (c, &j) in cols.iter().enumerate() {
        for i in 0..n {
            aug[(i, c)] = oof[(i, j)] - targets[i];
        }
    }
    // scale the residual block to O(1) so the sum-to-one row is not swamped
    let scale = (aug.norm_squared() / cols.len() as f64).sqrt();
    if scale > 0.0 {
        for c in 0..cols.len() {
            for i in 0..n {
                aug[(i, c)] /= scale;
            }
        }
    }
    for c in 0..cols.len() {
        aug[(n, c)] = 1.0;
    }
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = 1.0;
    let u = nnls(&aug, &rhs);
    let total: f64 = u.iter().sum();
    if total > 0.0 {
        for (c, &j) in cols.iter().enumerate() {
            weights[j] = u[c] / total;
        }
    } else {
        let best = cols.iter().copied().min_by(|&a, &b| risks[a].total_cmp(&risks[b]).then(a.cmp(&b))).unwrap();
        weights[best] = 1.0;
    }
    weights
}

/// A fitted stacked ensemble.
pub struct Ensemble {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
    pub cv_risks: Vec<f64>,
    /// Out-of-fold risk of the weighted combination.
    pub ensemble_risk: f64,
    pub kind: TargetKind,
    members: Vec<Option<Box<dyn Predictor>>>,
}

impl std::fmt::Debug for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ensemble")
            .field("names", &self.names)
            .field("weights", &self.weights)
            .field("cv_risks", &self.cv_risks)
            .field("ensemble_risk", &self.ensemble_risk)
            .finish()
    }
}

impl Predictor for Ensemble {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; features.nrows()];
        for (w, member) in self.weights.iter().zip(&self.members) {
            if let Some(m) = member {
                for (o, v) in out.iter_mut().zip(m.predict(features)?) {
                    *o += w * v;
                }
            }
        }
        if self.kind == TargetKind::Probability {
            out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        Ok(out)
    }
}

/// Fit the ensemble with `folds` seeded folds.
pub fn fit_superlearner(
    library: &[Box<dyn Learner>],
    features: &DMatrix<f64>,
    targets: &[f64],
    folds: usize,
    kind: TargetKind,
    seed: u64,
) -> Result<Ensemble> {
    let folds = Folds::seeded(targets.len(), folds, seed)?;
    fit_superlearner_with_folds(library, features, targets, &folds, kind, seed)
}

pub fn fit_superlearner_with_folds(
    library: &[Box<dyn Learner>],
    features: &DMatrix<f64>,
    targets: &[f64],
    folds: &Folds,
    kind: TargetKind,
    seed: u64,
) -> Result<Ensemble> {
    if library.is_empty() {
        return Err(Error::Ensemble("empty learner library".into()));
    }
    let cv = cv_risks(library, features, targets, kind, folds, seed)?;
    if cv.failed.iter().all(|&f| f) {
        return Err(Error::Ensemble("every learner failed during cross-validation".into()));
    }
    let usable: Vec<bool> = cv.failed.iter().map(|f| !f).collect();
    let weights = meta_weights(&cv.oof, targets, &usable, &cv.risks);
    let combined = &cv.oof * DVector::from_column_slice(&weights);
    let ensemble_risk =
        combined.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / targets.len() as f64;

    let full = folds.k() as u64;
    let members: Vec<Option<Box<dyn Predictor>>> = library
        .par_iter()
        .enumerate()
        .map(|(j, l)| {
            if weights[j] > 0.0 {
                let s = rng::derive_seed(seed, &[rng::label::LEARNER, j as u64, full]);
                l.fit(features, targets, kind, s).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()
        .map_err(|e| Error::Ensemble(format!("full-data refit failed: {e}")))?;

    Ok(Ensemble { names: cv.names, weights, cv_risks: cv.risks, ensemble_risk, kind, members })
}

/// `learner,cv_risk,weight` table.
pub fn write_risk_table<W: Write>(ensemble: &Ensemble, mut w: W) -> Result<()> {
    writeln!(w, "learner,cv_risk,weight")?;
    for ((name, risk), weight) in ensemble.names.iter().zip(&ensemble.cv_risks).zip(&ensemble.weights) {
        writeln!(w, "{name},{risk},{weight}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{default_library, MeanLearner};
    use super::*;

    struct Oracle(Vec<f64>);

    /// Predicts a fixed vector by row position of the full dataset.
    impl Learner for Oracle {
        fn name(&self) -> String {
            "oracle".into()
        }
        fn fit(&self, f: &DMatrix<f64>, _: &[f64], _: TargetKind, _: u64) -> Result<Box<dyn Predictor>> {
            let _ = f;
            Ok(Box::new(OraclePred(self.0.clone())))
        }
    }

    struct OraclePred(Vec<f64>);

    impl Predictor for OraclePred {
        fn predict(&self, f: &DMatrix<f64>) -> Result<Vec<f64>> {
            // first feature column carries the row id
            Ok((0..f.nrows()).map(|i| self.0[f[(i, 0)] as usize]).collect())
        }
    }

    struct Broken;

    impl Learner for Broken {
        fn name(&self) -> String {
            "broken".into()
        }
        fn fit(&self, _: &DMatrix<f64>, _: &[f64], _: TargetKind, _: u64) -> Result<Box<dyn Predictor>> {
            Err(Error::domain("always fails"))
        }
    }

    #[test]
    fn seeded_folds_are_balanced() {
        let f = Folds::seeded(23, 5, 1).unwrap();
        let mut sizes = vec![0; 5];
        for &l in f.labels() {
            sizes[l] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 4 || s == 5));
        assert_eq!(f, Folds::seeded(23, 5, 1).unwrap());
        assert!(Folds::seeded(3, 5, 1).is_err());
        assert!(Folds::seeded(10, 1, 1).is_err());
    }

    #[test]
    fn mean_learner_hand_case() {
        let lib: Vec<Box<dyn Learner>> = vec![Box::new(MeanLearner), Box::new(MeanLearner)];
        let f = DMatrix::zeros(4, 1);
        let folds = Folds::from_labels(vec![0, 0, 1, 1]).unwrap();
        let cv = cv_risks(&lib, &f, &[0.0, 0.0, 4.0, 4.0], TargetKind::Real, &folds, 0).unwrap();
        assert_eq!(cv.oof.column(0).iter().copied().collect::<Vec<_>>(), vec![4.0, 4.0, 0.0, 0.0]);
        assert_eq!(cv.risks, vec![16.0, 16.0]);
        let cv = cv_risks(&lib, &f, &[2.0; 4], TargetKind::Real, &folds, 0).unwrap();
        assert_eq!(cv.risks, vec![0.0, 0.0]);
    }

    #[test]
    fn exact_learner_takes_all_weight() {
        let n = 20;
        let targets: Vec<f64> = (0..n).map(|i| (i as f64).sin() * 3.0).collect();
        let f = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let lib: Vec<Box<dyn Learner>> = vec![Box::new(MeanLearner), Box::new(Oracle(targets.clone()))];
        let ens = fit_superlearner(&lib, &f, &targets, 5, TargetKind::Real, 3).unwrap();
        assert!((ens.weights[1] - 1.0).abs() < 1e-12);
        assert!(ens.weights[0].abs() < 1e-12);
        assert!(ens.ensemble_risk < 1e-20);
    }

    #[test]
    fn failed_learner_is_excluded() {
        let f = DMatrix::from_fn(12, 1, |i, _| i as f64);
        let t: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let lib: Vec<Box<dyn Learner>> = vec![Box::new(Broken), Box::new(MeanLearner)];
        let ens = fit_superlearner(&lib, &f, &t, 3, TargetKind::Real, 0).unwrap();
        assert_eq!(ens.cv_risks[0], f64::INFINITY);
        assert_eq!(ens.weights, vec![0.0, 1.0]);
        let only: Vec<Box<dyn Learner>> = vec![Box::new(Broken)];
        assert!(matches!(fit_superlearner(&only, &f, &t, 3, TargetKind::Real, 0), Err(Error::Ensemble(_))));
    }

    #[test]
    fn mean_only_library() {
        let f = DMatrix::from_fn(10, 2, |i, j| (i * j) as f64);
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let lib: Vec<Box<dyn Learner>> = vec![Box::new(MeanLearner)];
        let ens = fit_superlearner(&lib, &f, &t, 2, TargetKind::Real, 0).unwrap();
        assert_eq!(ens.weights, vec![1.0]);
        assert_eq!(ens.predict(&f).unwrap(), vec![4.5; 10]);
        let mut buf = Vec::new();
        write_risk_table(&ens, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("learner,cv_risk,weight\nmean,"));
    }

    #[test]
    fn nnls_small_cases() {
        // unconstrained optimum (1, -1) is infeasible; constrained optimum is (0.5, 0)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let x = nnls(&a, &[1.0, 0.0]);
        assert!((x[0] - 0.5).abs() < 1e-12 && x[1] == 0.0);
        let x = nnls(&DMatrix::identity(3, 3), &[1.0, -2.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1] == 0.0 && (x[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn default_library_probability_ensemble() {
        let n = 80;
        let f = DMatrix::from_fn(n, 2, |i, j| ((i * 31 + j * 17) % 23) as f64 / 23.0 - 0.5);
        let t: Vec<f64> = (0..n).map(|i| f64::from(u8::from(f[(i, 0)] + 0.3 * f[(i, 1)] > 0.0))).collect();
        let ens = fit_superlearner(&default_library(), &f, &t, 5, TargetKind::Probability, 9).unwrap();
        let s: f64 = ens.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-8);
        assert!(ens.weights.iter().all(|&w| w >= 0.0));
        let wild = DMatrix::from_fn(5, 2, |i, _| (i as f64 - 2.0) * 100.0);
        assert!(ens.predict(&wild).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
