//! Base learners and the cross-validated stacked ensemble built on them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, LinearFit, LogisticFit};

mod knn;
mod superlearner;
mod tree;

pub use knn::{fit_knn, KnnModel};
pub use superlearner::{
    cv_risks, fit_superlearner, fit_superlearner_with_folds, meta_weights, nnls, write_risk_table, CvRisks, Ensemble, Folds,
    DEFAULT_FOLDS,
};
pub use tree::{fit_bagged_trees, fit_regression_tree, BaggedTrees, RegressionTree, TreeNode};

/// What a learner is asked to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Targets in `{0, 1}`; predictions must lie in `[0, 1]`.
    Probability,
    Real,
}

/// A fitted model.
pub trait Predictor: Send + Sync {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>>;
}

/// A fitting procedure. `seed` keys any randomness the learner uses.
pub trait Learner: Send + Sync {
    fn name(&self) -> String;
    fn fit(
        &self,
        features: &DMatrix<f64>,
        targets: &[f64],
        kind: TargetKind,
        seed: u64,
    ) -> Result<Box<dyn Predictor>>;
}

/// `[1, features]`.
pub fn main_effects_design(features: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = features.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { features[(i, j - 1)] })
}

/// `[1, features, all pairwise products in lexicographic order]`.
pub fn interaction_design(features: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = features.shape();
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect();
    DMatrix::from_fn(n, 1 + p + pairs.len(), |i, j| match j {
        0 => 1.0,
        j if j <= p => features[(i, j - 1)],
        j => {
            let (a, b) = pairs[j - 1 - p];
            features[(i, a)] * features[(i, b)]
        }
    })
}

#[derive(Debug, Clone, Copy)]
pub struct MeanLearner;

struct Constant(f64);

impl Predictor for Constant {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(vec![self.0; features.nrows()])
    }
}

impl Learner for MeanLearner {
    fn name(&self) -> String {
        "mean".into()
    }

    fn fit(&self, _: &DMatrix<f64>, targets: &[f64], _: TargetKind, _: u64) -> Result<Box<dyn Predictor>> {
        if targets.is_empty() {
            return Err(Error::domain("mean of no targets"));
        }
        Ok(Box::new(Constant(targets.iter().sum::<f64>() / targets.len() as f64)))
    }
}

/// Linear regression for real targets, logistic regression for probabilities.
#[derive(Debug, Clone, Copy)]
pub struct GlmLearner {
    pub interactions: bool,
}

enum GlmModel {
    Linear(LinearFit),
    Logistic(LogisticFit),
}

struct GlmPredictor {
    model: GlmModel,
    interactions: bool,
}

fn glm_design(features: &DMatrix<f64>, interactions: bool) -> DMatrix<f64> {
    if interactions {
        interaction_design(features)
    } else {
        main_effects_design(features)
    }
}

impl Predictor for GlmPredictor {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let design = glm_design(features, self.interactions);
        match &self.model {
            GlmModel::Linear(fit) => glm::predict_linear(fit, &design),
            GlmModel::Logistic(fit) => glm::predict_logistic(fit, &design, None),
        }
    }
}

impl Learner for GlmLearner {
    fn name(&self) -> String {
        if self.interactions { "glm_interactions".into() } else { "glm".into() }
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &[f64], kind: TargetKind, _: u64) -> Result<Box<dyn Predictor>> {
        let design = glm_design(features, self.interactions);
        let model = match kind {
            TargetKind::Real => GlmModel::Linear(glm::fit_linear(&design, targets, None)?),
            TargetKind::Probability => GlmModel::Logistic(glm::fit_logistic(&design, targets, None, None)?),
        };
        Ok(Box::new(GlmPredictor { model, interactions: self.interactions }))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeLearner {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Learner for TreeLearner {
    fn name(&self) -> String {
        format!("tree_d{}", self.max_depth)
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &[f64], _: TargetKind, _: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(fit_regression_tree(features, targets, self.max_depth, self.min_leaf)?))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BaggedTreesLearner {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per node; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
}

impl Learner for BaggedTreesLearner {
    fn name(&self) -> String {
        format!("bagged_trees_{}", self.n_trees)
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &[f64], _: TargetKind, seed: u64) -> Result<Box<dyn Predictor>> {
        let p = features.ncols();
        let mtry = self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1));
        Ok(Box::new(fit_bagged_trees(
            features,
            targets,
            self.n_trees,
            self.max_depth,
            self.min_leaf,
            mtry,
            true,
            seed,
        )?))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KnnLearner {
    pub k: usize,
}

impl Learner for KnnLearner {
    fn name(&self) -> String {
        format!("knn_{}", self.k)
    }

    fn fit(&self, features: &DMatrix<f64>, targets: &[f64], _: TargetKind, _: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(fit_knn(features, targets, self.k)?))
    }
}

/// Serializable description of a library member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Mean,
    Glm,
    GlmInteractions,
    Tree { max_depth: usize, min_leaf: usize },
    BaggedTrees { n_trees: usize, max_depth: usize, min_leaf: usize, mtry: Option<usize> },
    Knn { k: usize },
}

impl LearnerSpec {
    pub fn build(&self) -> Box<dyn Learner> {
        match *self {
            LearnerSpec::Mean => Box::new(MeanLearner),
            LearnerSpec::Glm => Box::new(GlmLearner { interactions: false }),
            LearnerSpec::GlmInteractions => Box::new(GlmLearner { interactions: true }),
            LearnerSpec::Tree { max_depth, min_leaf } => Box::new(TreeLearner { max_depth, min_leaf }),
            LearnerSpec::BaggedTrees { n_trees, max_depth, min_leaf, mtry } => {
                Box::new(BaggedTreesLearner { n_trees, max_depth, min_leaf, mtry })
            }
            LearnerSpec::Knn { k } => Box::new(KnnLearner { k }),
        }
    }
}

/// Default library: constant, linear, interaction, tree, bagging and
/// nearest-neighbour members.
pub fn default_library_specs() -> Vec<LearnerSpec> {
    vec![
        LearnerSpec::Mean,
        LearnerSpec::Glm,
        LearnerSpec::GlmInteractions,
        LearnerSpec::Tree { max_depth: 4, min_leaf: 5 },
        LearnerSpec::Tree { max_depth: 8, min_leaf: 5 },
        LearnerSpec::BaggedTrees { n_trees: 100, max_depth: 8, min_leaf: 5, mtry: None },
        LearnerSpec::Knn { k: 5 },
        LearnerSpec::Knn { k: 20 },
    ]
}

/// Smaller library for desk-scale Monte Carlo runs.
pub fn reduced_library_specs() -> Vec<LearnerSpec> {
    vec![
        LearnerSpec::Mean,
        LearnerSpec::Glm,
        LearnerSpec::GlmInteractions,
        LearnerSpec::Tree { max_depth: 4, min_leaf: 5 },
        LearnerSpec::BaggedTrees { n_trees: 25, max_depth: 6, min_leaf: 5, mtry: None },
        LearnerSpec::Knn { k: 20 },
    ]
}

pub fn build_library(specs: &[LearnerSpec]) -> Vec<Box<dyn Learner>> {
    specs.iter().map(LearnerSpec::build).collect()
}

pub fn default_library() -> Vec<Box<dyn Learner>> {
    build_library(&default_library_specs())
}
