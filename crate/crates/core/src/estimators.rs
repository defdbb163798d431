//! The four average treatment effect estimators over supplied nuisance
//! predictions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dgp::{expit, logit};
use crate::error::{Error, Result};
use crate::glm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ipw,
    Gcomp,
    Aipw,
    Tmle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] =
        [EstimatorKind::Ipw, EstimatorKind::Gcomp, EstimatorKind::Aipw, EstimatorKind::Tmle];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Gcomp => "gcomp",
            EstimatorKind::Aipw => "aipw",
            EstimatorKind::Tmle => "tmle",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ipw" => Ok(EstimatorKind::Ipw),
            "gcomp" | "g-computation" => Ok(EstimatorKind::Gcomp),
            "aipw" => Ok(EstimatorKind::Aipw),
            "tmle" => Ok(EstimatorKind::Tmle),
            other => Err(Error::Config(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Propensity and outcome-regression predictions for every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub fhat: Vec<f64>,
    /// Outcome prediction at the observed exposure.
    pub ghat_obs: Vec<f64>,
    pub ghat1: Vec<f64>,
    pub ghat0: Vec<f64>,
}

impl NuisanceFit {
    /// Build from the two counterfactual surfaces; `ghat_obs` is picked by `x`.
    pub fn from_arms(x: &[u8], fhat: Vec<f64>, ghat1: Vec<f64>, ghat0: Vec<f64>) -> Result<NuisanceFit> {
        if ghat1.len() != x.len() || ghat0.len() != x.len() {
            return Err(Error::dimension("outcome surfaces differ in length from exposure"));
        }
        let ghat_obs = x.iter().zip(ghat1.iter().zip(&ghat0)).map(|(&xi, (&a, &b))| if xi == 1 { a } else { b }).collect();
        let fit = NuisanceFit { fhat, ghat_obs, ghat1, ghat0 };
        fit.validate(x)?;
        Ok(fit)
    }

    pub fn validate(&self, x: &[u8]) -> Result<()> {
        let n = x.len();
        if [self.fhat.len(), self.ghat_obs.len(), self.ghat1.len(), self.ghat0.len()].iter().any(|&l| l != n) {
            return Err(Error::dimension("nuisance vectors differ in length"));
        }
        for i in 0..n {
            let f = self.fhat[i];
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::domain(format!("propensity {f} at row {i} outside (0, 1)")));
            }
            let expected = if x[i] == 1 { self.ghat1[i] } else { self.ghat0[i] };
            if self.ghat_obs[i] != expected {
                return Err(Error::domain(format!("ghat_obs at row {i} does not match its exposure arm")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fhat.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// TMLE fluctuation parameter.
    pub epsilon: Option<f64>,
    /// Smallest and largest inverse-probability weight used.
    pub weight_range: Option<(f64, f64)>,
    /// TMLE fell back to the initial g-computation fit (constant outcome).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub estimator: EstimatorKind,
    pub psi_hat: f64,
    /// Centred per-unit influence values, where the estimator defines them.
    pub influence: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

fn check_binary(x: &[u8]) -> Result<()> {
    if x.iter().any(|&v| v > 1) {
        return Err(Error::domain("exposure must be 0 or 1"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `1/f` for exposed units, `1/(1-f)` for unexposed ones. Errors when a
/// propensity leaves `[0, 1]` or a weight would be infinite.
fn arm_weights(x: &[u8], fhat: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .zip(fhat)
        .enumerate()
        .map(|(i, (&xi, &f))| {
            let denom = if xi == 1 { f } else { 1.0 - f };
            if !(0.0..=1.0).contains(&f) || denom <= 0.0 {
                Err(Error::domain(format!("propensity {f} at row {i} gives an undefined weight")))
            } else {
                Ok(1.0 / denom)
            }
        })
        .collect()
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)))
}

fn check_lengths(x: &[u8], others: &[usize]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::domain("no observations"));
    }
    if others.iter().any(|&l| l != x.len()) {
        return Err(Error::dimension("input vectors differ in length"));
    }
    check_binary(x)
}

/// Per-unit IPW terms `x y / f - (1 - x) y / (1 - f)`.
pub fn ipw_terms(x: &[u8], y: &[f64], fhat: &[f64]) -> Result<Vec<f64>> {
    check_lengths(x, &[y.len(), fhat.len()])?;
    let w = arm_weights(x, fhat)?;
    Ok(x.iter().zip(y).zip(w).map(|((&xi, &yi), wi)| if xi == 1 { yi * wi } else { -yi * wi }).collect())
}

pub fn ipw_estimate(x: &[u8], y: &[f64], fhat: &[f64]) -> Result<EstimateResult> {
    let terms = ipw_terms(x, y, fhat)?;
    let psi_hat = mean(&terms);
    let weights = arm_weights(x, fhat)?;
    Ok(EstimateResult {
        estimator: EstimatorKind::Ipw,
        psi_hat,
        influence: Some(terms.iter().map(|t| t - psi_hat).collect()),
        diagnostics: Diagnostics { weight_range: Some(range(&weights)), ..Default::default() },
    })
}

pub fn gcomp_estimate(ghat1: &[f64], ghat0: &[f64]) -> Result<EstimateResult> {
    if ghat1.len() != ghat0.len() {
        return Err(Error::dimension("ghat1 and ghat0 differ in length"));
    }
    if ghat1.is_empty() {
        return Err(Error::domain("no observations"));
    }
    let psi_hat = ghat1.iter().zip(ghat0).map(|(a, b)| a - b).sum::<f64>() / ghat1.len() as f64;
    Ok(EstimateResult { estimator: EstimatorKind::Gcomp, psi_hat, influence: None, diagnostics: Diagnostics::default() })
}

/// Augmented IPW: the g-computation contrast plus a weighted residual
/// correction.
pub fn aipw_estimate(x: &[u8], y: &[f64], nuisance: &NuisanceFit) -> Result<EstimateResult> {
    check_lengths(x, &[y.len(), nuisance.len()])?;
    let n = nuisance;
    if [n.ghat_obs.len(), n.ghat1.len(), n.ghat0.len()].iter().any(|&l| l != x.len()) {
        return Err(Error::dimension("nuisance vectors differ in length"));
    }
    let weights = arm_weights(x, &n.fhat)?;
    let terms: Vec<f64> = (0..x.len())
        .map(|i| {
            let sign = if x[i] == 1 { 1.0 } else { -1.0 };
            sign * (y[i] - n.ghat_obs[i]) * weights[i] + n.ghat1[i] - n.ghat0[i]
        })
        .collect();
    let psi_hat = mean(&terms);
    Ok(EstimateResult {
        estimator: EstimatorKind::Aipw,
        psi_hat,
        influence: Some(terms.iter().map(|t| t - psi_hat).collect()),
        diagnostics: Diagnostics { weight_range: Some(range(&weights)), ..Default::default() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmleOptions {
    /// Bounds for the initial outcome predictions on the unit scale.
    pub clamp: (f64, f64),
}

impl Default for TmleOptions {
    fn default() -> Self {
        TmleOptions { clamp: (0.005, 0.995) }
    }
}

pub fn tmle_estimate(x: &[u8], y: &[f64], nuisance: &NuisanceFit) -> Result<EstimateResult> {
    tmle_estimate_with(x, y, nuisance, &TmleOptions::default())
}

/// Outcome surfaces after the targeting step, on the outcome scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TmleUpdate {
    pub epsilon: f64,
    /// Signed clever covariate at the observed exposure.
    pub h: Vec<f64>,
    pub ghat_obs: Vec<f64>,
    pub ghat1: Vec<f64>,
    pub ghat0: Vec<f64>,
    /// `y` was constant, so the initial surfaces were kept.
    pub degenerate: bool,
}

/// Targeting step: outcomes and predictions are mapped to `[0, 1]` with the
/// observed range of `y`, fluctuated along the clever covariate `H` with a
/// no-intercept offset logistic fit, and mapped back.
pub fn tmle_update(x: &[u8], y: &[f64], nuisance: &NuisanceFit, opts: &TmleOptions) -> Result<TmleUpdate> {
    check_lengths(x, &[y.len(), nuisance.len()])?;
    let nf = nuisance;
    if [nf.ghat_obs.len(), nf.ghat1.len(), nf.ghat0.len()].iter().any(|&l| l != x.len()) {
        return Err(Error::dimension("nuisance vectors differ in length"));
    }
    let (clo, chi) = opts.clamp;
    if !(0.0 < clo && clo < chi && chi < 1.0) {
        return Err(Error::domain(format!("TMLE clamp ({clo}, {chi}) must satisfy 0 < lo < hi < 1")));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::domain("TMLE needs at least two observations"));
    }
    let weights = arm_weights(x, &nf.fhat)?;
    let h: Vec<f64> = (0..n).map(|i| if x[i] == 1 { weights[i] } else { -weights[i] }).collect();
    let (a, b) = range(y);

    if b <= a {
        log::debug!("constant outcome: TMLE keeps the initial outcome surfaces");
        return Ok(TmleUpdate {
            epsilon: 0.0,
            h,
            ghat_obs: nf.ghat_obs.clone(),
            ghat1: nf.ghat1.clone(),
            ghat0: nf.ghat0.clone(),
            degenerate: true,
        });
    }

    let span = b - a;
    let to_unit = |v: f64| ((v - a) / span).clamp(clo, chi);
    let y_star: Vec<f64> = y.iter().map(|&v| (v - a) / span).collect();
    let logit_obs: Vec<f64> = nf.ghat_obs.iter().map(|&v| logit(to_unit(v))).collect();
    let logit1: Vec<f64> = nf.ghat1.iter().map(|&v| logit(to_unit(v))).collect();
    let logit0: Vec<f64> = nf.ghat0.iter().map(|&v| logit(to_unit(v))).collect();

    let epsilon = glm::fit_fluctuation(&y_star, &logit_obs, &h).map_err(|e| match e {
        Error::Bracketing(msg) => {
            let (flo, fhi) = range(&nf.fhat);
            let (hlo, hhi) = range(&h);
            Error::Bracketing(format!("{msg}; propensity range [{flo:.4}, {fhi:.4}], H range [{hlo:.3}, {hhi:.3}]"))
        }
        other => other,
    })?;

    let back = |u: f64| a + span * u;
    Ok(TmleUpdate {
        epsilon,
        ghat1: (0..n).map(|i| back(expit(logit1[i] + epsilon / nf.fhat[i]))).collect(),
        ghat0: (0..n).map(|i| back(expit(logit0[i] - epsilon / (1.0 - nf.fhat[i])))).collect(),
        ghat_obs: (0..n).map(|i| back(expit(logit_obs[i] + epsilon * h[i]))).collect(),
        h,
        degenerate: false,
    })
}

/// Targeted update of the outcome surfaces followed by a plug-in contrast.
/// With constant `y` the initial g-computation estimate is returned and
/// flagged.
pub fn tmle_estimate_with(x: &[u8], y: &[f64], nuisance: &NuisanceFit, opts: &TmleOptions) -> Result<EstimateResult> {
    let u = tmle_update(x, y, nuisance, opts)?;
    let n = x.len();
    let psi_hat = (0..n).map(|i| u.ghat1[i] - u.ghat0[i]).sum::<f64>() / n as f64;
    let influence = (0..n).map(|i| u.h[i] * (y[i] - u.ghat_obs[i]) + u.ghat1[i] - u.ghat0[i] - psi_hat).collect();
    let weights: Vec<f64> = u.h.iter().map(|v| v.abs()).collect();
    Ok(EstimateResult {
        estimator: EstimatorKind::Tmle,
        psi_hat,
        influence: Some(influence),
        diagnostics: Diagnostics { epsilon: Some(u.epsilon), weight_range: Some(range(&weights)), degenerate: u.degenerate },
    })
}

/// Clamp every propensity into `[lo, hi]`.
pub fn truncate_propensity(fhat: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::domain(format!("truncation bounds ({lo}, {hi}) need 0 <= lo < hi <= 1")));
    }
    Ok(fhat.iter().map(|f| f.clamp(lo, hi)).collect())
}

/// Run one estimator by kind. `ipw` and `gcomp` use only their own nuisance.
pub fn estimate(kind: EstimatorKind, x: &[u8], y: &[f64], nuisance: &NuisanceFit) -> Result<EstimateResult> {
    match kind {
        EstimatorKind::Ipw => ipw_estimate(x, y, &nuisance.fhat),
        EstimatorKind::Gcomp => gcomp_estimate(&nuisance.ghat1, &nuisance.ghat0),
        EstimatorKind::Aipw => aipw_estimate(x, y, nuisance),
        EstimatorKind::Tmle => tmle_estimate(x, y, nuisance),
    }
}
