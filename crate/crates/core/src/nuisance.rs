//! Propensity and outcome surfaces from either a parametric GLM or the
//! stacked ensemble.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{truncate_propensity, NuisanceFit};
use crate::glm::{self, PREDICT_CLAMP};
use crate::inference::Resample;
use crate::learners::{
    build_library, default_library_specs, fit_superlearner, interaction_design, main_effects_design, Ensemble,
    LearnerSpec, Predictor, TargetKind, DEFAULT_FOLDS,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateSet {
    /// The raw confounders `C`.
    Correct,
    /// Only the distorted confounders `Z`.
    Transformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Parametric,
    Nonparametric,
}

/// Covariate terms of a parametric model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTerms {
    MainEffects,
    FullInteraction,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $text),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!("unknown {} {other:?}", stringify!($ty)))),
                }
            }
        }
    };
}

text_enum!(CovariateSet { CovariateSet::Correct => "correct", CovariateSet::Transformed => "transformed" });
text_enum!(FitMode { FitMode::Parametric => "parametric", FitMode::Nonparametric => "nonparametric" });
text_enum!(ModelTerms { ModelTerms::MainEffects => "main-effects", ModelTerms::FullInteraction => "full-interaction" });

/// Exposure, outcome and whichever covariates the analyst is allowed to use.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    pub x: Vec<u8>,
    pub y: Vec<f64>,
    pub covariates: DMatrix<f64>,
}

impl ObservedData {
    pub fn new(x: Vec<u8>, y: Vec<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::domain("no observations"));
        }
        if y.len() != x.len() || covariates.nrows() != x.len() {
            return Err(Error::dimension("exposure, outcome and covariates differ in length"));
        }
        if x.iter().any(|&v| v > 1) {
            return Err(Error::Data("exposure must be 0 or 1".into()));
        }
        Ok(ObservedData { x, y, covariates })
    }

    pub fn from_dataset(d: &Dataset, set: CovariateSet) -> Self {
        let covariates = match set {
            CovariateSet::Correct => d.c.clone(),
            CovariateSet::Transformed => d.z.clone(),
        };
        ObservedData { x: d.x.clone(), y: d.y.clone(), covariates }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn x_f64(&self) -> Vec<f64> {
        self.x.iter().map(|&v| f64::from(v)).collect()
    }
}

impl Resample for ObservedData {
    fn n_rows(&self) -> usize {
        self.len()
    }

    fn take_rows(&self, idx: &[usize]) -> Self {
        ObservedData {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            covariates: self.covariates.select_rows(idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceOptions {
    pub fit_mode: FitMode,
    /// Terms of the parametric propensity and outcome models.
    pub terms: ModelTerms,
    pub library: Vec<LearnerSpec>,
    pub folds: usize,
    /// Optional propensity clamp `[lo, hi]`.
    pub truncate: Option<(f64, f64)>,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        NuisanceOptions {
            fit_mode: FitMode::Parametric,
            terms: ModelTerms::MainEffects,
            library: default_library_specs(),
            folds: DEFAULT_FOLDS,
            truncate: None,
        }
    }
}

pub fn parametric_design(covariates: &DMatrix<f64>, terms: ModelTerms) -> DMatrix<f64> {
    match terms {
        ModelTerms::MainEffects => main_effects_design(covariates),
        ModelTerms::FullInteraction => interaction_design(covariates),
    }
}

fn with_exposure_last(design: &DMatrix<f64>, x: &[f64]) -> DMatrix<f64> {
    let (n, p) = design.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == p { x[i] } else { design[(i, j)] })
}

fn with_exposure_first(covariates: &DMatrix<f64>, x: &[f64]) -> DMatrix<f64> {
    let (n, p) = covariates.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { x[i] } else { covariates[(i, j - 1)] })
}

fn clamp_propensity(f: Vec<f64>) -> Vec<f64> {
    f.into_iter().map(|v| v.clamp(PREDICT_CLAMP, 1.0 - PREDICT_CLAMP)).collect()
}

/// Fitted propensity scores for the observed rows.
pub fn fit_propensity(data: &ObservedData, opts: &NuisanceOptions, seed: u64) -> Result<Vec<f64>> {
    let x = data.x_f64();
    let fhat = match opts.fit_mode {
        FitMode::Parametric => {
            let design = parametric_design(&data.covariates, opts.terms);
            let fit = glm::fit_logistic(&design, &x, None, None)?;
            if !fit.converged {
                log::debug!("propensity model did not converge (separated: {})", fit.separated);
            }
            glm::predict_logistic(&fit, &design, None)?
        }
        FitMode::Nonparametric => {
            let ens = propensity_ensemble(data, opts, seed)?;
            ens.predict(&data.covariates)?
        }
    };
    let fhat = clamp_propensity(fhat);
    match opts.truncate {
        Some((lo, hi)) => truncate_propensity(&fhat, lo, hi),
        None => Ok(fhat),
    }
}

pub fn propensity_ensemble(data: &ObservedData, opts: &NuisanceOptions, seed: u64) -> Result<Ensemble> {
    let library = build_library(&opts.library);
    let s = rng::derive_seed(seed, &[rng::label::NUISANCE, 0]);
    fit_superlearner(&library, &data.covariates, &data.x_f64(), opts.folds, TargetKind::Probability, s)
}

pub fn outcome_ensemble(data: &ObservedData, opts: &NuisanceOptions, seed: u64) -> Result<Ensemble> {
    let library = build_library(&opts.library);
    let s = rng::derive_seed(seed, &[rng::label::NUISANCE, 1]);
    let features = with_exposure_first(&data.covariates, &data.x_f64());
    fit_superlearner(&library, &features, &data.y, opts.folds, TargetKind::Real, s)
}

/// Outcome predictions with exposure set to 1 and to 0 for every row.
pub fn fit_outcome(data: &ObservedData, opts: &NuisanceOptions, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = data.len();
    let ones = vec![1.0; n];
    let zeros = vec![0.0; n];
    match opts.fit_mode {
        FitMode::Parametric => {
            let base = parametric_design(&data.covariates, opts.terms);
            let fit = glm::fit_linear(&with_exposure_last(&base, &data.x_f64()), &data.y, None)?;
            Ok((
                glm::predict_linear(&fit, &with_exposure_last(&base, &ones))?,
                glm::predict_linear(&fit, &with_exposure_last(&base, &zeros))?,
            ))
        }
        FitMode::Nonparametric => {
            let ens = outcome_ensemble(data, opts, seed)?;
            Ok((
                ens.predict(&with_exposure_first(&data.covariates, &ones))?,
                ens.predict(&with_exposure_first(&data.covariates, &zeros))?,
            ))
        }
    }
}

/// Both nuisance surfaces for `data`.
pub fn fit_nuisance(data: &ObservedData, opts: &NuisanceOptions, seed: u64) -> Result<NuisanceFit> {
    let fhat = fit_propensity(data, opts, seed)?;
    let (ghat1, ghat0) = fit_outcome(data, opts, seed)?;
    NuisanceFit::from_arms(&data.x, fhat, ghat1, ghat0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{default_params, gen_trial};

    #[test]
    fn parametric_designs() {
        let c = DMatrix::from_row_slice(1, 4, &[2.0, 3.0, 0.0, -1.0]);
        assert_eq!(parametric_design(&c, ModelTerms::MainEffects).ncols(), 5);
        assert_eq!(parametric_design(&c, ModelTerms::FullInteraction).ncols(), 11);
        let d = with_exposure_last(&parametric_design(&c, ModelTerms::MainEffects), &[1.0]);
        assert_eq!(d.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 0.0, -1.0, 1.0]);
    }

    #[test]
    fn parametric_nuisance_is_consistent() {
        let d = gen_trial(400, &default_params(), 1).unwrap();
        let data = ObservedData::from_dataset(&d, CovariateSet::Correct);
        let opts = NuisanceOptions { terms: ModelTerms::FullInteraction, ..Default::default() };
        let nf = fit_nuisance(&data, &opts, 0).unwrap();
        nf.validate(&data.x).unwrap();
        // linear outcome model without exposure interactions: constant contrast
        let diff: Vec<f64> = nf.ghat1.iter().zip(&nf.ghat0).map(|(a, b)| a - b).collect();
        assert!(diff.iter().all(|v| (v - diff[0]).abs() < 1e-9));
    }

    #[test]
    fn truncation_applies() {
        let d = gen_trial(200, &default_params(), 2).unwrap();
        let data = ObservedData::from_dataset(&d, CovariateSet::Transformed);
        let opts = NuisanceOptions { truncate: Some((0.1, 0.9)), ..Default::default() };
        let f = fit_propensity(&data, &opts, 0).unwrap();
        assert!(f.iter().all(|v| (0.1..=0.9).contains(v)));
    }

    #[test]
    fn text_enums() {
        assert_eq!("transformed".parse::<CovariateSet>().unwrap(), CovariateSet::Transformed);
        assert_eq!(FitMode::Nonparametric.to_string(), "nonparametric");
        assert_eq!("full-interaction".parse::<ModelTerms>().unwrap(), ModelTerms::FullInteraction);
        assert!("bogus".parse::<FitMode>().is_err());
    }
}
