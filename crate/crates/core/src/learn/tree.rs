//! CART trees grown greedily on pre-sorted columns.
//!
//! Each column is reduced once to its sorted unique values plus a per-row
//! bin index, so split search at a node is a histogram scan over the bins
//! present in that node. Candidate thresholds are midpoints between
//! consecutive values present in the node, which makes the search exact.
//!
//! Split quality is the reduction in weighted squared error. For 0/1
//! targets the weighted Gini impurity is exactly twice that quantity, so
//! classification and regression trees share one criterion.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LearnError, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum total sample weight in each child.
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 20, min_leaf: 1 }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(LearnError::BadParam("tree max_depth and min_leaf must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        score: f64,
    },
}

/// Flat tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { score } => score,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, x: Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub(crate) fn set_leaf(&mut self, node: usize, score: f64) {
        self.nodes[node] = TreeNode::Leaf { score };
    }
}

struct BinnedColumn {
    values: Vec<f64>,
    bins: Vec<u32>,
}

/// Columns reduced to sorted unique values and per-row bin indices.
pub struct Binned {
    columns: Vec<BinnedColumn>,
    n_rows: usize,
}

impl Binned {
    pub fn new(x: Matrix) -> Result<Self, LearnError> {
        x.check_finite()?;
        let n = x.n_rows();
        let columns = (0..x.n_cols())
            .map(|c| {
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| x.get(a as usize, c).total_cmp(&x.get(b as usize, c)));
                let mut values = Vec::new();
                let mut bins = vec![0u32; n];
                for &r in &order {
                    let v = x.get(r as usize, c);
                    if values.last() != Some(&v) {
                        values.push(v);
                    }
                    bins[r as usize] = (values.len() - 1) as u32;
                }
                BinnedColumn { values, bins }
            })
            .collect();
        Ok(Self { columns, n_rows: n })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    fn value(&self, col: usize, row: u32) -> f64 {
        let c = &self.columns[col];
        c.values[c.bins[row as usize] as usize]
    }
}

/// How features are offered to the split search at each node.
pub(crate) enum FeatureDraw<'r> {
    All,
    /// Random subsets of this size; further subsets are tried only when a
    /// subset yields no valid split.
    Subset(usize, &'r mut ChaCha8Rng),
}

#[derive(Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Grower<'a> {
    binned: &'a Binned,
    target: &'a [f64],
    weight: &'a [f64],
    params: TreeParams,
    hist_w: Vec<f64>,
    hist_s: Vec<f64>,
    pairs: Vec<(u32, f64, f64)>,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

impl Grower<'_> {
    fn consider(
        &self,
        best: &mut Option<Split>,
        feature: usize,
        lo: f64,
        hi: f64,
        left: (f64, f64),
        total: (f64, f64),
    ) {
        let (wl, sl) = left;
        let (wr, sr) = (total.0 - wl, total.1 - sl);
        let min = self.params.min_leaf as f64;
        if wl < min || wr < min {
            return;
        }
        let gain = sl * sl / wl + sr * sr / wr - total.1 * total.1 / total.0;
        if best.map_or(true, |b| gain > b.gain) {
            *best = Some(Split { gain, feature, threshold: midpoint(lo, hi) });
        }
    }

    fn scan_feature(&mut self, rows: &[u32], f: usize, total: (f64, f64), best: &mut Option<Split>) {
        let col = &self.binned.columns[f];
        let n_bins = col.values.len();
        if n_bins < 2 {
            return;
        }
        let mut left = (0.0, 0.0);
        let mut prev: Option<usize> = None;
        if n_bins <= 4 * rows.len() {
            for &r in rows {
                let b = col.bins[r as usize] as usize;
                let w = self.weight[r as usize];
                self.hist_w[b] += w;
                self.hist_s[b] += w * self.target[r as usize];
            }
            for b in 0..n_bins {
                let w = self.hist_w[b];
                if w == 0.0 {
                    continue;
                }
                if let Some(p) = prev {
                    self.consider(best, f, col.values[p], col.values[b], left, total);
                }
                left.0 += w;
                left.1 += self.hist_s[b];
                prev = Some(b);
                self.hist_w[b] = 0.0;
                self.hist_s[b] = 0.0;
            }
        } else {
            let mut pairs = std::mem::take(&mut self.pairs);
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| {
                let w = self.weight[r as usize];
                (col.bins[r as usize], w, w * self.target[r as usize])
            }));
            pairs.sort_unstable_by_key(|p| p.0);
            let mut i = 0;
            while i < pairs.len() {
                let b = pairs[i].0;
                let (mut w, mut s) = (0.0, 0.0);
                while i < pairs.len() && pairs[i].0 == b {
                    w += pairs[i].1;
                    s += pairs[i].2;
                    i += 1;
                }
                if let Some(p) = prev {
                    self.consider(best, f, col.values[p], col.values[b as usize], left, total);
                }
                left.0 += w;
                left.1 += s;
                prev = Some(b as usize);
            }
            self.pairs = pairs;
        }
    }

    fn best_split(&mut self, rows: &[u32], total: (f64, f64), draw: &mut FeatureDraw) -> Option<Split> {
        let d = self.binned.n_cols();
        let mut best = None;
        match draw {
            FeatureDraw::All => {
                for f in 0..d {
                    self.scan_feature(rows, f, total, &mut best);
                }
            }
            FeatureDraw::Subset(k, rng) => {
                let mut order: Vec<usize> = (0..d).collect();
                order.shuffle(*rng);
                for chunk in order.chunks_mut((*k).max(1)) {
                    chunk.sort_unstable();
                    for &f in chunk.iter() {
                        self.scan_feature(rows, f, total, &mut best);
                    }
                    if best.is_some() {
                        break;
                    }
                }
            }
        }
        best
    }
}

/// Grows a tree over `rows` (each with positive weight). Leaves hold the
/// weighted target mean.
pub(crate) fn grow(
    binned: &Binned,
    target: &[f64],
    weight: &[f64],
    rows: Vec<u32>,
    params: TreeParams,
    mut draw: FeatureDraw,
) -> Tree {
    let max_bins = binned.columns.iter().map(|c| c.values.len()).max().unwrap_or(0);
    let mut g = Grower {
        binned,
        target,
        weight,
        params,
        hist_w: vec![0.0; max_bins],
        hist_s: vec![0.0; max_bins],
        pairs: Vec::new(),
    };
    let mut nodes = vec![TreeNode::Leaf { score: 0.0 }];
    let mut stack = vec![(0usize, rows, 0usize)];
    while let Some((id, rows, depth)) = stack.pop() {
        let (mut w, mut s) = (0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in &rows {
            let (wr, t) = (weight[r as usize], target[r as usize]);
            w += wr;
            s += wr * t;
            lo = lo.min(t);
            hi = hi.max(t);
        }
        nodes[id] = TreeNode::Leaf { score: s / w };
        if depth >= params.max_depth || w < 2.0 * params.min_leaf as f64 || lo == hi {
            continue;
        }
        let Some(split) = g.best_split(&rows, (w, s), &mut draw) else {
            continue;
        };
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| binned.value(split.feature, r) <= split.threshold);
        let (left, right) = (nodes.len(), nodes.len() + 1);
        nodes.push(TreeNode::Leaf { score: 0.0 });
        nodes.push(TreeNode::Leaf { score: 0.0 });
        nodes[id] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right };
        stack.push((right, right_rows, depth + 1));
        stack.push((left, left_rows, depth + 1));
    }
    Tree { nodes }
}

/// Fits a single CART tree. `y` may be 0/1 labels or real-valued targets;
/// `weights` defaults to one per row, and rows with zero weight are ignored.
pub fn fit_tree(x: Matrix, y: &[f64], weights: Option<&[f64]>, params: TreeParams) -> Result<Tree, LearnError> {
    params.validate()?;
    if x.n_rows() == 0 {
        return Err(LearnError::NoRows);
    }
    if y.len() != x.n_rows() {
        return Err(LearnError::Length { what: "targets", expected: x.n_rows(), got: y.len() });
    }
    let ones;
    let weight = match weights {
        Some(w) => {
            if w.len() != x.n_rows() {
                return Err(LearnError::Length { what: "weights", expected: x.n_rows(), got: w.len() });
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(LearnError::BadParam("weights must be finite and non-negative".into()));
            }
            w
        }
        None => {
            ones = vec![1.0; x.n_rows()];
            &ones
        }
    };
    if let Some(p) = y.iter().position(|v| !v.is_finite()) {
        return Err(LearnError::NonFinite { row: p, col: x.n_cols() });
    }
    let binned = Binned::new(x)?;
    let rows: Vec<u32> = (0..x.n_rows() as u32).filter(|&r| weight[r as usize] > 0.0).collect();
    if rows.is_empty() {
        return Err(LearnError::NoRows);
    }
    Ok(grow(&binned, y, weight, rows, params, FeatureDraw::All))
}
