//! Feature-level fusion network: one sigmoid encoder per feature group,
//! concatenated into sigmoid joint layers and a sigmoid output unit.
//! Trained with binary cross-entropy and mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_labels, logistic_loss, sigmoid, LearnError, Matrix};
use crate::eval::metrics::{auc, confusion, metrics, threshold};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub encoder_width: usize,
    pub joint_widths: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            encoder_width: 32,
            joint_widths: vec![64, 32],
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 256,
            epochs: 300,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::BadParam(m.to_string()));
        if self.encoder_width == 0 || self.joint_widths.contains(&0) {
            return bad("mlp layer widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("mlp learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("mlp momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("mlp batch_size must be positive");
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `n_in × n_out`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn glorot(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn zeros_like(&self) -> Self {
        Self { n_in: self.n_in, n_out: self.n_out, weights: vec![0.0; self.weights.len()], bias: vec![0.0; self.n_out] }
    }
}

/// Strided view used for matrix products.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    fn dense(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = a · b + beta · c`, with `c` strided by `(rsc, 1)`.
fn gemm(a: View, b: View, c: &mut [f64], rsc: usize, beta: f64) {
    assert_eq!(a.cols, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len());
    assert!((m - 1) * rsc + n <= c.len());
    // SAFETY: the asserts above keep every index the kernel touches inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Adds the bias and applies the sigmoid to a `rows × n` block strided by `rs`.
fn activate(out: &mut [f64], rows: usize, n: usize, rs: usize, bias: &[f64]) {
    for r in 0..rows {
        for (v, b) in out[r * rs..r * rs + n].iter_mut().zip(bias) {
            *v = sigmoid(*v + b);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_features: usize,
    pub groups: Vec<InputGroup>,
    /// Per-column standardization fitted on the training rows.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub encoders: Vec<Dense>,
    pub joint: Vec<Dense>,
    pub output: Dense,
}

struct Forward {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    concat: Vec<f64>,
    joint: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl MlpModel {
    /// Untrained network with Glorot-uniform weights and standardization
    /// fitted on `x`.
    pub fn new(x: Matrix, groups: &[InputGroup], params: &MlpParams, seed: u64) -> Result<Self, LearnError> {
        params.validate()?;
        if x.n_rows() == 0 {
            return Err(LearnError::NoRows);
        }
        for g in groups {
            if g.columns.is_empty() {
                return Err(LearnError::EmptyGroup(g.name.clone()));
            }
            if let Some(&c) = g.columns.iter().find(|&&c| c >= x.n_cols()) {
                return Err(LearnError::BadParam(format!("group {} column {c} out of range", g.name)));
            }
        }
        if groups.is_empty() {
            return Err(LearnError::EmptyGroup(String::new()));
        }
        let d = x.n_cols();
        let n = x.n_rows() as f64;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..x.n_rows() {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for i in 0..x.n_rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();

        let mut rng = seed::rng(seed, &[0x696e_6974]);
        let w = params.encoder_width;
        let encoders = groups.iter().map(|g| Dense::glorot(g.columns.len(), w, &mut rng)).collect();
        let mut joint = Vec::new();
        let mut width = w * groups.len();
        for &jw in &params.joint_widths {
            joint.push(Dense::glorot(width, jw, &mut rng));
            width = jw;
        }
        let output = Dense::glorot(width, 1, &mut rng);
        Ok(Self { n_features: d, groups: groups.to_vec(), mean, scale, encoders, joint, output })
    }

    /// Layers in a fixed order: encoders, joint layers, output.
    pub fn layers(&self) -> Vec<&Dense> {
        self.encoders.iter().chain(&self.joint).chain(std::iter::once(&self.output)).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.encoders.iter_mut().chain(self.joint.iter_mut()).chain(std::iter::once(&mut self.output)).collect()
    }

    fn forward(&self, x: Matrix, rows: &[usize]) -> Forward {
        let b = rows.len();
        let w = self.encoders[0].n_out;
        let cw = w * self.encoders.len();
        let inputs: Vec<Vec<f64>> = self
            .groups
            .iter()
            .map(|g| {
                let mut v = Vec::with_capacity(b * g.columns.len());
                for &r in rows {
                    let row = x.row(r);
                    v.extend(g.columns.iter().map(|&c| (row[c] - self.mean[c]) / self.scale[c]));
                }
                v
            })
            .collect();
        let mut concat = vec![0.0; b * cw];
        for (g, enc) in self.encoders.iter().enumerate() {
            let a = View::dense(&inputs[g], b, enc.n_in);
            gemm(a, View::dense(&enc.weights, enc.n_in, w), &mut concat[g * w..], cw, 0.0);
            activate(&mut concat[g * w..], b, w, cw, &enc.bias);
        }
        let mut joint: Vec<Vec<f64>> = Vec::with_capacity(self.joint.len());
        for layer in &self.joint {
            let input = joint.last().unwrap_or(&concat);
            let mut out = vec![0.0; b * layer.n_out];
            gemm(
                View::dense(input, b, layer.n_in),
                View::dense(&layer.weights, layer.n_in, layer.n_out),
                &mut out,
                layer.n_out,
                0.0,
            );
            activate(&mut out, b, layer.n_out, layer.n_out, &layer.bias);
            joint.push(out);
        }
        let last = joint.last().unwrap_or(&concat);
        let mut logits = vec![0.0; b];
        let o = &self.output;
        gemm(View::dense(last, b, o.n_in), View::dense(&o.weights, o.n_in, 1), &mut logits, 1, 0.0);
        logits.iter_mut().for_each(|z| *z += o.bias[0]);
        Forward { batch: b, inputs, concat, joint, logits }
    }

    pub fn predict_proba(&self, x: Matrix) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.n_rows());
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        for chunk in rows.chunks(4096) {
            out.extend(self.forward(x, chunk).logits.into_iter().map(sigmoid));
        }
        out
    }

    /// Mean cross-entropy over `rows`.
    pub fn loss(&self, x: Matrix, y: &[u8], rows: &[usize]) -> f64 {
        let f = self.forward(x, rows);
        rows.iter().zip(&f.logits).map(|(&r, &z)| logistic_loss(z, f64::from(y[r]))).sum::<f64>() / rows.len() as f64
    }

    /// Mean cross-entropy over `rows` and its gradient, one entry per layer
    /// in [`MlpModel::layers`] order.
    pub fn loss_and_grad(&self, x: Matrix, y: &[u8], rows: &[usize]) -> (f64, Vec<Dense>) {
        let f = self.forward(x, rows);
        let b = f.batch;
        let inv = 1.0 / b as f64;
        let mut loss = 0.0;
        let mut delta: Vec<f64> = rows
            .iter()
            .zip(&f.logits)
            .map(|(&r, &z)| {
                let t = f64::from(y[r]);
                loss += logistic_loss(z, t);
                (sigmoid(z) - t) * inv
            })
            .collect();
        loss *= inv;

        let mut grads_joint: Vec<Dense> = self.joint.iter().map(Dense::zeros_like).collect();
        let mut grad_out = self.output.zeros_like();

        // Output layer, then joint layers from last to first.
        let mut layer = &self.output;
        let mut grad = &mut grad_out;
        let mut li = self.joint.len();
        loop {
            let input: &[f64] = if li == 0 { &f.concat } else { &f.joint[li - 1] };
            let a = View::dense(input, b, layer.n_in);
            let d = View::dense(&delta, b, layer.n_out);
            gemm(a.t(), d, &mut grad.weights, layer.n_out, 0.0);
            for r in 0..b {
                for (gb, dv) in grad.bias.iter_mut().zip(&delta[r * layer.n_out..(r + 1) * layer.n_out]) {
                    *gb += dv;
                }
            }
            let mut d_in = vec![0.0; b * layer.n_in];
            gemm(d, View::dense(&layer.weights, layer.n_in, layer.n_out).t(), &mut d_in, layer.n_in, 0.0);
            for (dv, &h) in d_in.iter_mut().zip(input) {
                *dv *= h * (1.0 - h);
            }
            delta = d_in;
            if li == 0 {
                break;
            }
            li -= 1;
            layer = &self.joint[li];
            grad = &mut grads_joint[li];
        }

        // `delta` now holds the error at the concatenated encoder outputs.
        let w = self.encoders[0].n_out;
        let cw = w * self.encoders.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(self.encoders.len() + self.joint.len() + 1);
        for (g, enc) in self.encoders.iter().enumerate() {
            let mut ge = enc.zeros_like();
            let d = View { data: &delta[g * w..], rows: b, cols: w, rs: cw, cs: 1 };
            gemm(View::dense(&f.inputs[g], b, enc.n_in).t(), d, &mut ge.weights, w, 0.0);
            for r in 0..b {
                for (gb, dv) in ge.bias.iter_mut().zip(&delta[r * cw + g * w..r * cw + (g + 1) * w]) {
                    *gb += dv;
                }
            }
            grads.push(ge);
        }
        grads.extend(grads_joint);
        grads.push(grad_out);
        (loss, grads)
    }
}

/// Test-set evaluation after one epoch. Metrics in percent; `auc` is in
/// `[0, 1]` and absent when the test labels hold a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpFit {
    /// Weights from the best epoch (highest test accuracy, earliest on
    /// ties), or the final weights when no test set was given.
    pub model: MlpModel,
    pub trace: Vec<EpochMetrics>,
    /// 1-based epoch of `model`, when selected from the trace.
    pub best_epoch: Option<usize>,
}

const EPOCH_STREAM: u64 = 0x6570_6f63;

pub fn fit_mlp(
    x: Matrix,
    y: &[u8],
    groups: &[InputGroup],
    params: &MlpParams,
    seed: u64,
    test: Option<(Matrix, &[u8])>,
) -> Result<MlpFit, LearnError> {
    check_labels(&x, y)?;
    if let Some((tx, ty)) = test {
        if tx.n_cols() != x.n_cols() {
            return Err(LearnError::Length { what: "test columns", expected: x.n_cols(), got: tx.n_cols() });
        }
        check_labels(&tx, ty)?;
    }
    let mut model = MlpModel::new(x, groups, params, seed)?;
    let mut velocity: Vec<Dense> = model.layers().into_iter().map(Dense::zeros_like).collect();
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let (lr, mu) = (params.learning_rate, params.momentum);

    for epoch in 1..=params.epochs {
        let mut rng = seed::rng(seed, &[EPOCH_STREAM, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(params.batch_size) {
            let (loss, grads) = model.loss_and_grad(x, y, batch);
            total += loss * batch.len() as f64;
            for ((layer, v), g) in model.layers_mut().into_iter().zip(&mut velocity).zip(&grads) {
                for ((w, vw), gw) in layer.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
                    *vw = mu * *vw - lr * gw;
                    *w += *vw;
                }
                for ((w, vw), gw) in layer.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                    *vw = mu * *vw - lr * gw;
                    *w += *vw;
                }
            }
        }
        if let Some((tx, ty)) = test {
            let scores = model.predict_proba(tx);
            let c = confusion(ty, &threshold(&scores, 0.5)).expect("labels checked above");
            let m = metrics(&c);
            trace.push(EpochMetrics {
                epoch,
                train_loss: total / x.n_rows() as f64,
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f_score: m.f_score,
                auc: auc(ty, &scores).ok(),
            });
            if best.as_ref().map_or(true, |b| m.accuracy > b.0) {
                best = Some((m.accuracy, epoch, model.clone()));
            }
        }
    }
    Ok(match best {
        Some((_, epoch, m)) => MlpFit { model: m, trace, best_epoch: Some(epoch) },
        None => MlpFit { model, trace, best_epoch: None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<f64>, Vec<u8>, Vec<InputGroup>) {
        let mut rng = seed::rng(5, &[]);
        let x: Vec<f64> = (0..10 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<u8> = (0..10).map(|i| u8::from(x[i * 5] + x[i * 5 + 3] > 0.0)).collect();
        let groups = vec![
            InputGroup { name: "a".into(), columns: vec![0, 1] },
            InputGroup { name: "b".into(), columns: vec![2, 3, 4] },
        ];
        (x, y, groups)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y, groups) = toy();
        let m = Matrix::new(&x, 5).unwrap();
        let params = MlpParams { encoder_width: 4, joint_widths: vec![6, 3], ..Default::default() };
        let model = MlpModel::new(m, &groups, &params, 9).unwrap();
        let rows: Vec<usize> = (0..10).collect();
        let (_, grads) = model.loss_and_grad(m, &y, &rows);
        let eps = 1e-6;
        for (li, g) in grads.iter().enumerate() {
            let n_w = g.weights.len();
            let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
            for p in 0..n_w + g.bias.len() {
                let bump = |delta: f64| {
                    let mut m2 = model.clone();
                    let layer = &mut m2.layers_mut()[li];
                    if p < n_w {
                        layer.weights[p] += delta;
                    } else {
                        layer.bias[p - n_w] += delta;
                    }
                    m2.loss(m, &y, &rows)
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let analytic = if p < n_w { g.weights[p] } else { g.bias[p - n_w] };
                diff += (numeric - analytic).powi(2);
                norm_a += analytic * analytic;
                norm_n += numeric * numeric;
            }
            let rel = diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt());
            assert!(rel < 1e-4, "layer {li}: relative error {rel}");
        }
    }

    #[test]
    fn zero_epochs_and_errors() {
        let (x, y, groups) = toy();
        let m = Matrix::new(&x, 5).unwrap();
        let p = MlpParams { epochs: 0, ..Default::default() };
        let fit = fit_mlp(m, &y, &groups, &p, 1, Some((m, &y))).unwrap();
        assert!(fit.trace.is_empty() && fit.best_epoch.is_none());
        assert!(fit.model.predict_proba(m).iter().all(|s| (0.0..=1.0).contains(s)));
        let empty = [InputGroup { name: "d".into(), columns: vec![] }];
        assert_eq!(fit_mlp(m, &y, &empty, &p, 1, None).unwrap_err(), LearnError::EmptyGroup("d".into()));
    }

    #[test]
    fn training_lowers_loss_and_is_seeded() {
        let (x, y, groups) = toy();
        let m = Matrix::new(&x, 5).unwrap();
        let p = MlpParams { epochs: 200, batch_size: 5, learning_rate: 0.1, ..Default::default() };
        let fit = fit_mlp(m, &y, &groups, &p, 2, Some((m, &y))).unwrap();
        assert_eq!(fit.trace.len(), 200);
        assert!(fit.trace[199].train_loss < fit.trace[0].train_loss);
        let again = fit_mlp(m, &y, &groups, &p, 2, Some((m, &y))).unwrap();
        assert_eq!(fit.model, again.model);
        let best = fit.best_epoch.unwrap();
        assert!(fit.trace.iter().all(|e| e.accuracy <= fit.trace[best - 1].accuracy));
    }
}
