//! Confusion counts, positive-class metrics and ROC AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("labels and predictions differ in length ({labels} vs {predictions})")]
    Length { labels: usize, predictions: usize },
    #[error("no samples")]
    Empty,
    #[error("value {0} is not a binary label")]
    NonBinary(u8),
    #[error("AUC needs both classes")]
    SingleClass,
    #[error("non-finite score")]
    NonFiniteScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<Confusion, MetricError> {
    if labels.len() != predictions.len() {
        return Err(MetricError::Length { labels: labels.len(), predictions: predictions.len() });
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut c = Confusion::default();
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            (bad, 0 | 1) | (_, bad) => return Err(MetricError::NonBinary(bad)),
        }
    }
    Ok(c)
}

/// Thresholds scores: `score >= threshold` predicts class 1.
pub fn threshold(scores: &[f64], t: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= t)).collect()
}

fn div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Metrics in percent. Precision, recall and F refer to the crime class;
/// `macro_f` averages the F-scores of both classes. Any 0/0 is 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub macro_f: f64,
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    div(2.0 * precision * recall, precision + recall)
}

pub fn metrics(c: &Confusion) -> Metrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    let f_pos = f_measure(precision, recall);
    let f_neg = f_measure(div(tn, tn + fn_), div(tn, tn + fp));
    Metrics {
        accuracy: 100.0 * div(tp + tn, tp + fp + tn + fn_),
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        f_score: 100.0 * f_pos,
        macro_f: 100.0 * (f_pos + f_neg) / 2.0,
    }
}

fn check_scores(labels: &[u8], scores: &[f64]) -> Result<(u64, u64), MetricError> {
    if labels.len() != scores.len() {
        return Err(MetricError::Length { labels: labels.len(), predictions: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore);
    }
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            bad => return Err(MetricError::NonBinary(bad)),
        }
    }
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: the probability that a random crime cell outscores a
/// random no-crime cell, ties counting one half.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64, MetricError> {
    let (pos, neg) = check_scores(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Count, in units of half-pairs, negatives below each positive.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p_tied, mut n_tied) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                p_tied += 1;
            } else {
                n_tied += 1;
            }
            i += 1;
        }
        twice_wins += p_tied * (2 * neg_below + n_tied);
        neg_below += n_tied;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Area under the ROC polyline traced by lowering the threshold through
/// every distinct score, by the trapezoid rule.
pub fn roc_auc_trapezoid(labels: &[u8], scores: &[f64]) -> Result<f64, MetricError> {
    let (pos, neg) = check_scores(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp as f64 / pos as f64, fp as f64 / neg as f64);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}
