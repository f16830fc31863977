//! Gradient boosting with logistic loss.
//!
//! Each round fits a regression tree to the residuals `y - p`, then sets
//! every leaf to one Newton step `sum(y - p) / sum(p (1 - p))`. A step that
//! would raise the loss of the rows in its leaf is halved until it does
//! not, so training loss never increases from one round to the next.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Binned, FeatureDraw, Tree, TreeNode, TreeParams};
use super::{check_labels, logistic_loss, sigmoid, LearnError, Matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of rows drawn without replacement for each round's tree.
    pub subsample: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self { n_rounds: 200, learning_rate: 0.1, max_depth: 3, min_leaf: 1, subsample: 1.0 }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LearnError::BadParam(format!("gbm learning_rate {}", self.learning_rate)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(LearnError::BadParam(format!("gbm subsample {}", self.subsample)));
        }
        TreeParams { max_depth: self.max_depth, min_leaf: self.min_leaf }.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub tree: Tree,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub n_features: usize,
    /// Log-odds of the training base rate.
    pub init: f64,
    pub stages: Vec<BoostStage>,
}

impl BoostModel {
    pub fn decision_row(&self, row: &[f64]) -> f64 {
        self.stages.iter().fold(self.init, |f, s| f + s.learning_rate * s.tree.predict_row(row))
    }

    pub fn predict_proba(&self, x: Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| sigmoid(self.decision_row(x.row(i)))).collect()
    }
}

pub fn fit_gbm(x: Matrix, y: &[u8], params: &BoostParams, seed: u64) -> Result<BoostModel, LearnError> {
    fit_gbm_traced(x, y, params, seed).map(|(m, _)| m)
}

fn mean_loss(f: &[f64], y: &[f64]) -> f64 {
    f.iter().zip(y).map(|(&z, &t)| logistic_loss(z, t)).sum::<f64>() / f.len() as f64
}

const ROUND_STREAM: u64 = 0x626f_6f73;

/// Fits the model and returns the mean training log-loss before the first
/// round and after each round.
pub fn fit_gbm_traced(
    x: Matrix,
    y: &[u8],
    params: &BoostParams,
    seed: u64,
) -> Result<(BoostModel, Vec<f64>), LearnError> {
    params.validate()?;
    check_labels(&x, y)?;
    let n = x.n_rows();
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n {
        return Err(LearnError::SingleClass);
    }
    let base = positives as f64 / n as f64;
    let init = (base / (1.0 - base)).ln();
    let target: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let binned = Binned::new(x)?;
    let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf };
    let lr = params.learning_rate;
    let n_sample = ((params.subsample * n as f64).ceil() as usize).clamp(1, n);
    let ones = vec![1.0; n];

    let mut f = vec![init; n];
    let mut losses = vec![mean_loss(&f, &target)];
    let mut stages = Vec::with_capacity(params.n_rounds);
    let mut residual = vec![0.0; n];
    let mut leaf_of = vec![0usize; n];
    for round in 0..params.n_rounds {
        let mut prob = vec![0.0; n];
        for i in 0..n {
            prob[i] = sigmoid(f[i]);
            residual[i] = target[i] - prob[i];
        }
        let rows: Vec<u32> = if n_sample == n {
            (0..n as u32).collect()
        } else {
            let mut rng = seed::rng(seed, &[ROUND_STREAM, round as u64]);
            let mut r: Vec<u32> = sample(&mut rng, n, n_sample).into_iter().map(|i| i as u32).collect();
            r.sort_unstable();
            r
        };
        let mut tree = grow(&binned, &residual, &ones, rows.clone(), tree_params, FeatureDraw::All);

        // Newton step per leaf over the fitted rows.
        let mut grad = vec![0.0; tree.nodes.len()];
        let mut hess = vec![0.0; tree.nodes.len()];
        for i in 0..n {
            leaf_of[i] = tree.leaf_index(x.row(i));
        }
        for &r in &rows {
            let (i, l) = (r as usize, leaf_of[r as usize]);
            grad[l] += residual[i];
            hess[l] += prob[i] * (1.0 - prob[i]);
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
        for (i, &l) in leaf_of.iter().enumerate() {
            members[l].push(i);
        }
        for node in 0..tree.nodes.len() {
            if !matches!(tree.nodes[node], TreeNode::Leaf { .. }) {
                continue;
            }
            let leaf_loss = |score: f64| -> f64 {
                members[node].iter().map(|&i| logistic_loss(f[i] + lr * score, target[i])).sum()
            };
            let mut score = if hess[node] > 0.0 { grad[node] / hess[node] } else { 0.0 };
            if !score.is_finite() {
                score = 0.0;
            }
            let before = leaf_loss(0.0);
            let mut halvings = 0;
            while score != 0.0 && leaf_loss(score) > before {
                score = if halvings < 60 { score / 2.0 } else { 0.0 };
                halvings += 1;
            }
            tree.set_leaf(node, score);
        }
        for i in 0..n {
            if let TreeNode::Leaf { score } = tree.nodes[leaf_of[i]] {
                f[i] += lr * score;
            }
        }
        losses.push(mean_loss(&f, &target));
        stages.push(BoostStage { tree, learning_rate: lr });
    }
    Ok((BoostModel { n_features: x.n_cols(), init, stages }, losses))
}
