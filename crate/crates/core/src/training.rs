//! Teacher-student data, losses, backpropagation and SGD/Adam for bias-free
//! ReLU networks.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, NetworkParams, NetworkSpec};
use crate::montecarlo::sample_standard_gaussian;
use crate::rng::stream_rng;

// Stream ids carved out of a single seed.
const NOISE_STREAM: u64 = u64::MAX - 1;
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub sigma: f64,
    pub teacher_id: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, meta: DatasetMeta) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Dataset { inputs, targets, meta })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Draws `x ~ N(0, I_d)` and `y = teacher(x) + u` with `u ~ N(0, σ²)` per output.
pub fn gen_teacher_data(teacher: &NetworkParams, n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::precondition("sigma must be a finite value >= 0"));
    }
    let inputs = sample_standard_gaussian(teacher.input_dim(), n, seed)?;
    let mut targets = predict(teacher, &inputs)?;
    if sigma > 0.0 {
        let mut rng = stream_rng(seed, NOISE_STREAM);
        for v in targets.as_mut_slice() {
            let u: f64 = rng.sample(StandardNormal);
            *v += sigma * u;
        }
    }
    Dataset::new(
        inputs,
        targets,
        DatasetMeta {
            sigma,
            teacher_id: None,
            seed,
        },
    )
}

/// Network outputs for every row of `inputs`.
pub fn predict(params: &NetworkParams, inputs: &Matrix) -> Result<Matrix> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let mut ws = Workspace::new(params);
    let mut out = Matrix::zeros(inputs.rows(), params.output_dim());
    for i in 0..inputs.rows() {
        ws.forward(params, inputs.row(i));
        out.row_mut(i).copy_from_slice(ws.output());
    }
    Ok(out)
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::shape("empty prediction matrix"));
    }
    Ok(())
}

/// `(1/n)·Σ_i Σ_k (y_ik − ŷ_ik)²/m`.
pub fn mse_loss(preds: &Matrix, targets: &Matrix) -> Result<f64> {
    check_same_shape(preds, targets)?;
    let m = preds.cols() as f64;
    let total: f64 = preds
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    Ok(total / m / preds.rows() as f64)
}

fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

fn one_hot_class(row: &[f64]) -> Option<usize> {
    let mut class = None;
    for (k, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if class.is_some() {
                return None;
            }
            class = Some(k);
        } else if v != 0.0 {
            return None;
        }
    }
    class
}

/// `−(1/n)·Σ_i log softmax(z_i)_{y_i}` for one-hot targets.
pub fn ce_loss(logits: &Matrix, one_hot: &Matrix) -> Result<f64> {
    check_same_shape(logits, one_hot)?;
    let mut buf = vec![0.0; logits.cols()];
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let k = one_hot_class(one_hot.row(i))
            .ok_or_else(|| Error::precondition(format!("target row {i} is not one-hot")))?;
        log_softmax_into(logits.row(i), &mut buf);
        total -= buf[k];
    }
    // −0 and tiny negative rounding never escape.
    Ok((total / logits.rows() as f64).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn eval(self, preds: &Matrix, targets: &Matrix) -> Result<f64> {
        match self {
            LossKind::Mse => mse_loss(preds, targets),
            LossKind::CrossEntropy => ce_loss(preds, targets),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(±√(6/(fan_in + fan_out)))`.
    #[default]
    UniformGlorot,
    /// `N(0, 2/fan_in)`.
    NormalScaled,
}

/// Per-layer activations and backward buffers for one sample.
struct Workspace {
    // acts[0] is the input, acts[l + 1] = ReLU(W^l acts[l]) for hidden l.
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(params: &NetworkParams) -> Self {
        let widths = params.widths();
        let hidden = widths.len() - 1;
        Workspace {
            acts: widths[..hidden].iter().map(|&w| vec![0.0; w]).collect(),
            out: vec![0.0; widths[hidden]],
            delta: Vec::with_capacity(widths.iter().copied().max().unwrap_or(0)),
            delta_prev: Vec::with_capacity(widths.iter().copied().max().unwrap_or(0)),
        }
    }

    fn forward(&mut self, params: &NetworkParams, x: &[f64]) {
        let w = params.weights();
        let last = w.len() - 1;
        self.acts[0].copy_from_slice(x);
        for l in 0..last {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let next = &mut tail[0];
            w[l].mul_vec_into(&head[l], next);
            next.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        w[last].mul_vec_into(&self.acts[last], &mut self.out);
    }

    fn output(&self) -> &[f64] {
        &self.out
    }

    /// Adds this sample's gradient, given `dL/d(output)` in `self.delta`.
    fn backward(&mut self, params: &NetworkParams, grads: &mut [Matrix]) {
        let w = params.weights();
        for l in (0..w.len()).rev() {
            let a = &self.acts[l];
            let g = &mut grads[l];
            for (r, &dr) in self.delta.iter().enumerate() {
                if dr == 0.0 {
                    continue;
                }
                for (gv, &av) in g.row_mut(r).iter_mut().zip(a) {
                    *gv += dr * av;
                }
            }
            if l == 0 {
                break;
            }
            self.delta_prev.clear();
            self.delta_prev.resize(w[l].cols(), 0.0);
            for (r, &dr) in self.delta.iter().enumerate() {
                if dr == 0.0 {
                    continue;
                }
                for (dp, &wv) in self.delta_prev.iter_mut().zip(w[l].row(r)) {
                    *dp += dr * wv;
                }
            }
            // ReLU subgradient is 0 at 0.
            for (dp, &av) in self.delta_prev.iter_mut().zip(a) {
                if av <= 0.0 {
                    *dp = 0.0;
                }
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

fn check_dataset(params: &NetworkParams, inputs: &Matrix, targets: &Matrix) -> Result<()> {
    if inputs.cols() != params.input_dim() || targets.cols() != params.output_dim() {
        return Err(Error::shape(format!(
            "data is {}→{}, network is {}→{}",
            inputs.cols(),
            targets.cols(),
            params.input_dim(),
            params.output_dim()
        )));
    }
    if inputs.rows() != targets.rows() {
        return Err(Error::shape("input and target row counts differ"));
    }
    if inputs.rows() == 0 {
        return Err(Error::shape("empty batch"));
    }
    Ok(())
}

fn zero_grads(params: &NetworkParams) -> Vec<Matrix> {
    params.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect()
}

// Loss and gradient over the selected rows, accumulating into `grads`.
fn batch_grad(
    params: &NetworkParams,
    inputs: &Matrix,
    targets: &Matrix,
    rows: &[usize],
    loss: LossKind,
    ws: &mut Workspace,
    grads: &mut [Matrix],
) -> Result<f64> {
    let n = rows.len() as f64;
    let m = params.output_dim();
    let mut total = 0.0;
    let mut logp = vec![0.0; m];
    for &i in rows {
        ws.forward(params, inputs.row(i));
        let y = targets.row(i);
        ws.delta.clear();
        match loss {
            LossKind::Mse => {
                let scale = 2.0 / (n * m as f64);
                for (p, t) in ws.out.iter().zip(y) {
                    let r = p - t;
                    total += r * r / m as f64;
                    ws.delta.push(scale * r);
                }
            }
            LossKind::CrossEntropy => {
                let k = one_hot_class(y)
                    .ok_or_else(|| Error::precondition(format!("target row {i} is not one-hot")))?;
                log_softmax_into(&ws.out, &mut logp);
                total -= logp[k];
                for (j, lp) in logp.iter().enumerate() {
                    let indicator = if j == k { 1.0 } else { 0.0 };
                    ws.delta.push((lp.exp() - indicator) / n);
                }
            }
        }
        ws.backward(params, grads);
    }
    Ok((total / n).max(0.0))
}

/// Batch loss and its exact gradient with respect to every weight matrix.
pub fn backprop(params: &NetworkParams, inputs: &Matrix, targets: &Matrix, loss: LossKind) -> Result<(f64, Vec<Matrix>)> {
    check_dataset(params, inputs, targets)?;
    let rows: Vec<usize> = (0..inputs.rows()).collect();
    let mut ws = Workspace::new(params);
    let mut grads = zero_grads(params);
    let value = batch_grad(params, inputs, targets, &rows, loss, &mut ws, &mut grads)?;
    Ok((value, grads))
}

/// Loss of `params` on a whole data set.
pub fn evaluate(params: &NetworkParams, inputs: &Matrix, targets: &Matrix, loss: LossKind) -> Result<f64> {
    check_dataset(params, inputs, targets)?;
    loss.eval(&predict(params, inputs)?, targets)
}

/// Central-difference gradient with step `h`.
pub fn numerical_gradient(
    params: &NetworkParams,
    inputs: &Matrix,
    targets: &Matrix,
    loss: LossKind,
    h: f64,
) -> Result<Vec<Matrix>> {
    let mut probe = params.clone();
    let mut out = zero_grads(params);
    for l in 0..params.depth() + 1 {
        for idx in 0..params.weights()[l].as_slice().len() {
            let orig = params.weights()[l].as_slice()[idx];
            probe.weights_mut()[l].as_mut_slice()[idx] = orig + h;
            let up = evaluate(&probe, inputs, targets, loss)?;
            probe.weights_mut()[l].as_mut_slice()[idx] = orig - h;
            let down = evaluate(&probe, inputs, targets, loss)?;
            probe.weights_mut()[l].as_mut_slice()[idx] = orig;
            out[l].as_mut_slice()[idx] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Smallest `|pre-activation|` over every hidden unit and every row.
pub fn min_abs_preactivation(params: &NetworkParams, inputs: &Matrix) -> f64 {
    let w = params.weights();
    let mut best = f64::INFINITY;
    for i in 0..inputs.rows() {
        let mut a = inputs.row(i).to_vec();
        for layer in &w[..w.len() - 1] {
            let mut z = vec![0.0; layer.rows()];
            layer.mul_vec_into(&a, &mut z);
            for v in &z {
                best = best.min(v.abs());
            }
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            a = z;
        }
    }
    best
}

/// `max |g − ĝ| / max(|g|, |ĝ|, floor)` over all entries.
pub fn max_relative_error(a: &[Matrix], b: &[Matrix], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()))
        .map(|(u, v)| (u - v).abs() / u.abs().max(v.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn init_params(spec: &NetworkSpec, scheme: InitScheme, seed: u64) -> Result<NetworkParams> {
    spec.validate()?;
    let widths = spec.widths();
    let mut rng = stream_rng(seed, INIT_STREAM);
    let mut weights = Vec::with_capacity(widths.len() - 1);
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut m = Matrix::zeros(fan_out, fan_in);
        match scheme {
            InitScheme::UniformGlorot => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
                m.as_mut_slice().iter_mut().for_each(|v| *v = rng.sample(dist));
            }
            InitScheme::NormalScaled => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                m.as_mut_slice().iter_mut().for_each(|v| *v = rng.sample(dist));
            }
        }
        weights.push(m);
    }
    NetworkParams::new(weights)
}

fn default_lr() -> f64 {
    1e-3
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub init_scheme: InitScheme,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::default(),
            learning_rate: default_lr(),
            adam_betas: default_betas(),
            adam_eps: default_eps(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            loss: LossKind::default(),
            init_scheme: InitScheme::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so that fixed points can be checked.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        let (b1, b2) = self.adam_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad("adam_betas must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_params: NetworkParams,
    pub train_loss_history: Vec<f64>,
    pub test_error: f64,
}

impl TrainReport {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.train_loss_history.iter().enumerate() {
            let _ = writeln!(out, "{},{:.16e}", e + 1, l);
        }
        out
    }
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

/// Trains a freshly initialized student.
pub fn train(spec: &NetworkSpec, dataset: &Dataset, test_set: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let init = init_params(spec, config.init_scheme, config.seed)?;
    train_from(init, dataset, test_set, config)
}

/// Trains starting from `params`; `epochs × ⌈n/batch⌉` steps with a fresh
/// shuffle every epoch.
pub fn train_from(params: NetworkParams, dataset: &Dataset, test_set: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if config.batch_size > dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds the {} training rows",
            config.batch_size,
            dataset.len()
        )));
    }
    check_dataset(&params, &dataset.inputs, &dataset.targets)?;
    check_dataset(&params, &test_set.inputs, &test_set.targets)?;

    let mut params = params;
    let mut ws = Workspace::new(&params);
    let mut grads = zero_grads(&params);
    let mut adam = Adam {
        m: zero_grads(&params),
        v: zero_grads(&params),
        t: 0,
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(config.epochs);
    let lr = config.learning_rate;
    let (b1, b2) = config.adam_betas;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| g.as_mut_slice().fill(0.0));
            batch_grad(&params, &dataset.inputs, &dataset.targets, batch, config.loss, &mut ws, &mut grads)?;
            if lr == 0.0 {
                continue;
            }
            match config.optimizer {
                OptimizerKind::Sgd => {
                    for (w, g) in params.weights_mut().iter_mut().zip(&grads) {
                        for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                            *wv -= lr * gv;
                        }
                    }
                }
                OptimizerKind::Adam => {
                    adam.t += 1;
                    let c1 = 1.0 - b1.powi(adam.t);
                    let c2 = 1.0 - b2.powi(adam.t);
                    for l in 0..grads.len() {
                        let w = params.weights_mut()[l].as_mut_slice();
                        let g = grads[l].as_slice();
                        let m = adam.m[l].as_mut_slice();
                        let v = adam.v[l].as_mut_slice();
                        for k in 0..w.len() {
                            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                            w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + config.adam_eps);
                        }
                    }
                }
            }
        }
        let loss = evaluate(&params, &dataset.inputs, &dataset.targets, config.loss)?;
        if !loss.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged (loss {loss}); lower the learning rate"
            )));
        }
        history.push(loss);
    }
    let test_error = evaluate(&params, &test_set.inputs, &test_set.targets, config.loss)?;
    Ok(TrainReport {
        final_params: params,
        train_loss_history: history,
        test_error,
    })
}
