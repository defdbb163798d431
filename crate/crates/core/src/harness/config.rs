use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgp::DgpParams;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::inference::DEFAULT_BOOTSTRAP_REPS;
use crate::learners::{default_library_specs, LearnerSpec, DEFAULT_FOLDS};
use crate::nuisance::{CovariateSet, FitMode, ModelTerms, NuisanceOptions};

/// Sample sizes of the standard grid.
pub const PAPER_SIZES: [usize; 5] = [50, 100, 200, 600, 1200];

/// Replicates per cell when none are given.
pub fn default_reps(fit_mode: FitMode) -> usize {
    match fit_mode {
        FitMode::Parametric => 1000,
        FitMode::Nonparametric => 200,
    }
}

fn all_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_bootstrap_reps() -> usize {
    DEFAULT_BOOTSTRAP_REPS
}
fn default_correct_arm() -> ModelTerms {
    ModelTerms::FullInteraction
}
fn default_level() -> f64 {
    0.95
}

/// One cell of a simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Scenario name; `{covariates}-{fit_mode}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(alias = "covariates")]
    pub covariate_set: CovariateSet,
    pub fit_mode: FitMode,
    pub n: usize,
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_library_specs")]
    pub learners: Vec<LearnerSpec>,
    #[serde(default)]
    pub truncate: Option<(f64, f64)>,
    /// Bootstrap the g-computation SE with a parametric outcome model even
    /// when the point estimate uses the ensemble.
    #[serde(default)]
    pub fast_bootstrap: bool,
    #[serde(default = "default_bootstrap_reps")]
    pub bootstrap_reps: usize,
    /// Terms of the parametric models when the raw confounders are used.
    #[serde(default = "default_correct_arm")]
    pub correct_arm: ModelTerms,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub params: DgpParams,
}

impl ScenarioConfig {
    pub fn new(covariate_set: CovariateSet, fit_mode: FitMode, n: usize, reps: usize, base_seed: u64) -> Self {
        ScenarioConfig {
            label: None,
            covariate_set,
            fit_mode,
            n,
            reps,
            base_seed,
            estimators: all_estimators(),
            folds: DEFAULT_FOLDS,
            learners: default_library_specs(),
            truncate: None,
            fast_bootstrap: false,
            bootstrap_reps: DEFAULT_BOOTSTRAP_REPS,
            correct_arm: ModelTerms::FullInteraction,
            level: 0.95,
            params: DgpParams::default(),
        }
    }

    pub fn scenario(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => format!("{}-{}", self.covariate_set, self.fit_mode),
        }
    }

    /// Parametric terms for this covariate set. The transformed arm is always
    /// main effects only.
    pub fn terms(&self) -> ModelTerms {
        match self.covariate_set {
            CovariateSet::Correct => self.correct_arm,
            CovariateSet::Transformed => ModelTerms::MainEffects,
        }
    }

    pub fn nuisance_options(&self) -> NuisanceOptions {
        NuisanceOptions {
            fit_mode: self.fit_mode,
            terms: self.terms(),
            library: self.learners.clone(),
            folds: self.folds,
            truncate: self.truncate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario {}: {msg}", self.scenario())));
        if self.n < 2 {
            return bad(format!("n = {} is below 2", self.n));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        let mut seen = HashSet::new();
        if !self.estimators.iter().all(|e| seen.insert(*e)) {
            return bad("estimator listed twice".into());
        }
        if self.fit_mode == FitMode::Nonparametric {
            if self.learners.is_empty() {
                return bad("empty learner library".into());
            }
            if self.folds < 2 || self.folds > self.n {
                return bad(format!("{} folds for n = {}", self.folds, self.n));
            }
        }
        if self.estimators.contains(&EstimatorKind::Gcomp) && self.bootstrap_reps < 2 {
            return bad("bootstrap_reps must be at least 2".into());
        }
        if let Some((lo, hi)) = self.truncate {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return bad(format!("truncation ({lo}, {hi}) needs 0 <= lo < hi <= 1"));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level {} outside (0, 1)", self.level));
        }
        if self.scenario().is_empty() || self.scenario().contains([',', '"', '\n']) {
            return bad("label must be nonempty and free of commas and quotes".into());
        }
        self.params.validate()
    }
}

/// Check every cell and that no two cells share a `(scenario, n)` key.
pub fn validate_grid(grid: &[ScenarioConfig]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty scenario grid".into()));
    }
    let mut keys = HashSet::new();
    for c in grid {
        c.validate()?;
        if !keys.insert((c.scenario(), c.n)) {
            return Err(Error::Config(format!("duplicate cell {} n={}", c.scenario(), c.n)));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridFile {
    One(Box<ScenarioConfig>),
    Many(Vec<ScenarioConfig>),
}

/// Parse a config file holding one scenario object or a list of them.
pub fn parse_grid(text: &str) -> Result<Vec<ScenarioConfig>> {
    let grid = match serde_json::from_str::<GridFile>(text) {
        Ok(GridFile::One(c)) => vec![*c],
        Ok(GridFile::Many(v)) => v,
        Err(_) => {
            // re-parse strictly for a useful message
            let err = serde_json::from_str::<Vec<ScenarioConfig>>(text)
                .err()
                .or_else(|| serde_json::from_str::<ScenarioConfig>(text).err());
            return Err(Error::Config(format!(
                "invalid scenario config: {}",
                err.map(|e| e.to_string()).unwrap_or_default()
            )));
        }
    };
    validate_grid(&grid)?;
    Ok(grid)
}

pub fn load_grid(path: &Path) -> Result<Vec<ScenarioConfig>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_grid(&text)
}

/// Cross product of covariate sets, fit modes and sample sizes, with the
/// desk-scale replicate counts.
pub fn cross_grid(
    covariates: &[CovariateSet],
    fit_modes: &[FitMode],
    sizes: &[usize],
    reps: Option<usize>,
    base_seed: u64,
) -> Vec<ScenarioConfig> {
    let mut grid = Vec::new();
    for &cs in covariates {
        for &fm in fit_modes {
            for &n in sizes {
                grid.push(ScenarioConfig::new(cs, fm, n, reps.unwrap_or_else(|| default_reps(fm)), base_seed));
            }
        }
    }
    grid
}

/// Two covariate sets by two fit modes by five sample sizes.
pub fn paper_grid(base_seed: u64) -> Vec<ScenarioConfig> {
    cross_grid(
        &[CovariateSet::Correct, CovariateSet::Transformed],
        &[FitMode::Parametric, FitMode::Nonparametric],
        &PAPER_SIZES,
        None,
        base_seed,
    )
}
