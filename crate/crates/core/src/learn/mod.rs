//! Binary classifiers written from scratch: CART trees, random forests,
//! logistic gradient boosting and a feature-level fusion MLP, plus a
//! randomized hyperparameter search.

pub mod forest;
pub mod gbm;
pub mod mlp;
pub mod search;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{fit_forest, ForestModel, ForestParams};
pub use gbm::{fit_gbm, fit_gbm_traced, BoostModel, BoostParams};
pub use mlp::{fit_mlp, EpochMetrics, MlpFit, MlpModel, MlpParams};
pub use search::random_search;
pub use tree::{fit_tree, Tree, TreeNode, TreeParams};

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("training data has no rows")]
    NoRows,
    #[error("matrix has {len} values, not a multiple of {n_cols} columns")]
    Shape { len: usize, n_cols: usize },
    #[error("{what}: expected {expected}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("labels must be 0 or 1, found {0}")]
    NonBinary(u8),
    #[error("only one class present; log-odds undefined")]
    SingleClass,
    #[error("feature group {0:?} has no columns")]
    EmptyGroup(String),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("invalid hyperparameter: {0}")]
    BadParam(String),
    #[error("model file: {0}")]
    Format(String),
}

/// Borrowed row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct Matrix<'a> {
    data: &'a [f64],
    n_rows: usize,
    n_cols: usize,
}

impl<'a> Matrix<'a> {
    pub fn new(data: &'a [f64], n_cols: usize) -> Result<Self, LearnError> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(LearnError::Shape { len: data.len(), n_cols });
        }
        Ok(Self { data, n_rows: data.len() / n_cols, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub(crate) fn check_finite(&self) -> Result<(), LearnError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(LearnError::NonFinite { row: p / self.n_cols, col: p % self.n_cols }),
            None => Ok(()),
        }
    }
}

pub(crate) fn check_labels(x: &Matrix, y: &[u8]) -> Result<(), LearnError> {
    if x.n_rows() == 0 {
        return Err(LearnError::NoRows);
    }
    if y.len() != x.n_rows() {
        return Err(LearnError::Length { what: "labels", expected: x.n_rows(), got: y.len() });
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(LearnError::NonBinary(bad));
    }
    x.check_finite()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of label `y` given logit `z`, without forming the
/// probability.
pub fn logistic_loss(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - y * z
}

/// Hyperparameters of every classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub gbm: BoostParams,
    pub mlp: MlpParams,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        self.tree.validate()?;
        self.forest.validate()?;
        self.gbm.validate()?;
        self.mlp.validate()
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Any trained model, for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Tree(Tree),
    Forest(ForestModel),
    Gbm(BoostModel),
    Mlp(MlpModel),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: Model,
}

impl Model {
    pub fn predict_proba(&self, x: Matrix) -> Vec<f64> {
        match self {
            Model::Tree(m) => m.predict(x),
            Model::Forest(m) => m.predict_proba(x),
            Model::Gbm(m) => m.predict_proba(x),
            Model::Mlp(m) => m.predict_proba(x),
        }
    }

    /// JSON document `{"format_version": 1, "model": {"kind": ..., ...}}`.
    /// Floats are written in shortest round-trip form, so reading the file
    /// back gives a bit-identical model.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            format_version: u32,
            model: &'a Model,
        }
        serde_json::to_string(&Out { format_version: MODEL_FORMAT_VERSION, model: self })
            .expect("models contain only finite floats")
    }

    pub fn from_json(s: &str) -> Result<Self, LearnError> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| LearnError::Format(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(LearnError::Format(format!("unsupported format_version {}", file.format_version)));
        }
        Ok(file.model)
    }
}
