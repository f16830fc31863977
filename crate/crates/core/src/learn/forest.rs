//! Random forest of CART trees with hard-vote averaging.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Binned, FeatureDraw, Tree, TreeParams};
use super::{check_labels, LearnError, Matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features offered per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 20, min_leaf: 1, max_features: None, bootstrap: true }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.n_trees == 0 || self.max_features == Some(0) {
            return Err(LearnError::BadParam("forest n_trees and max_features must be positive".into()));
        }
        TreeParams { max_depth: self.max_depth, min_leaf: self.min_leaf }.validate()
    }

    pub fn features_per_split(&self, d: usize) -> usize {
        self.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Seed of each tree's bootstrap and feature-subset stream.
    pub tree_seeds: Vec<u64>,
}

impl ForestModel {
    /// Fraction of trees voting for class 1 (leaf score above 0.5).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict_row(row) > 0.5).count();
        votes as f64 / self.trees.len() as f64
    }

    pub fn predict_proba(&self, x: Matrix) -> Vec<f64> {
        // Tree-major order keeps one tree in cache across all rows.
        let mut votes = vec![0u32; x.n_rows()];
        for t in &self.trees {
            for (i, v) in votes.iter_mut().enumerate() {
                *v += u32::from(t.predict_row(x.row(i)) > 0.5);
            }
        }
        votes.into_iter().map(|v| f64::from(v) / self.trees.len() as f64).collect()
    }
}

const TREE_STREAM: u64 = 0x7472_6565;

pub fn fit_forest(x: Matrix, y: &[u8], params: &ForestParams, seed: u64) -> Result<ForestModel, LearnError> {
    params.validate()?;
    check_labels(&x, y)?;
    let binned = Binned::new(x)?;
    let target: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let n = x.n_rows();
    let k = params.features_per_split(x.n_cols());
    let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf };
    let tree_seeds: Vec<u64> = (0..params.n_trees as u64).map(|t| seed::derive(seed, &[TREE_STREAM, t])).collect();

    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = seed::rng(s, &[]);
            let mut weight = vec![0.0; n];
            if params.bootstrap {
                for _ in 0..n {
                    weight[rng.gen_range(0..n)] += 1.0;
                }
            } else {
                weight.fill(1.0);
            }
            let rows: Vec<u32> = (0..n as u32).filter(|&r| weight[r as usize] > 0.0).collect();
            let draw = if k >= x.n_cols() { FeatureDraw::All } else { FeatureDraw::Subset(k, &mut rng) };
            grow(&binned, &target, &weight, rows, tree_params, draw)
        })
        .collect();
    Ok(ForestModel { n_features: x.n_cols(), trees, tree_seeds })
}
