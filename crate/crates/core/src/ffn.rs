//! Fully connected binary classifier: `dim -> hidden x {2,3} -> 1` with a
//! sigmoid output unit, cross-entropy loss with an L2 weight penalty, and
//! Adam updates.
//!
//! Parameters live in one flat vector. For layer `k` with `n_in` inputs and
//! `n_out` outputs the block is `W_k` (row-major, `n_out x n_in`) followed
//! by `b_k` (`n_out`).

use std::fmt;
use std::str::FromStr;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_store::Label;
use crate::error::{Error, Result};
use crate::scaler::Scaler;

pub const ADAM_EPS: f64 = 1e-8;
pub const LEARNING_RATES: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const HIDDEN_UNITS: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            // same value as z.tanh() to ~1e-16, roughly twice as fast
            Activation::Tanh => 1.0 - 2.0 / ((2.0 * z).exp() + 1.0),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::InvalidInput(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FfnConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Minimum validation-loss decrease that resets the patience counter.
    pub min_delta: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for FfnConfig {
    fn default() -> Self {
        FfnConfig {
            hidden_layers: 2,
            hidden_units: 64,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            l2: 1e-4,
            max_epochs: 200,
            batch_size: 32,
            patience: 20,
            min_delta: 1e-4,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl FfnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(2..=3).contains(&self.hidden_layers) {
            return bad(format!("hidden_layers must be 2 or 3, got {}", self.hidden_layers));
        }
        if !(32..=128).contains(&self.hidden_units) {
            return bad(format!("hidden_units must lie in [32, 128], got {}", self.hidden_units));
        }
        if !LEARNING_RATES.iter().any(|&lr| (lr - self.learning_rate).abs() <= lr * 1e-12) {
            return bad(format!("learning_rate {} not in the grid", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam decay rates must lie in [0, 1)".into());
        }
        if self.l2 < 0.0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("l2 must be >= 0; batch_size and max_epochs must be >= 1".into());
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 0.5), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat(self.hidden_units).take(self.hidden_layers));
        sizes.push(1);
        sizes
    }
}

/// Number of parameters (weights and biases) for the given layer sizes.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnModel {
    pub format_version: u32,
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
    pub scaler: Scaler,
}

pub const FFN_FORMAT_VERSION: u32 = 1;

/// Offsets of `(W_k, b_k)` inside the flat parameter vector.
fn layout(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut off = 0;
    sizes
        .windows(2)
        .map(|w| {
            let w_off = off;
            off += w[0] * w[1];
            let b_off = off;
            off += w[1];
            (w_off, b_off)
        })
        .collect()
}

impl FfnModel {
    /// Glorot-uniform weights drawn in layout order, zero biases.
    pub fn with_architecture(sizes: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) || *sizes.last().unwrap() != 1 {
            return Err(Error::InvalidInput(format!("invalid architecture {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; param_count(&sizes)];
        for (w, (w_off, _)) in sizes.windows(2).zip(layout(&sizes)) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for p in &mut params[w_off..w_off + w[0] * w[1]] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Ok(FfnModel {
            format_version: FFN_FORMAT_VERSION,
            scaler: Scaler::identity(sizes[0]),
            sizes,
            activation,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weights(&self, k: usize) -> ArrayView2<'_, f64> {
        let (w_off, _) = layout(&self.sizes)[k];
        ArrayView2::from_shape((self.sizes[k + 1], self.sizes[k]), &self.params[w_off..w_off + self.sizes[k] * self.sizes[k + 1]])
            .expect("layout matches")
    }

    pub fn biases(&self, k: usize) -> ArrayView1<'_, f64> {
        let (_, b_off) = layout(&self.sizes)[k];
        ArrayView1::from(&self.params[b_off..b_off + self.sizes[k + 1]])
    }

    /// Sum of squared weights, biases excluded.
    pub fn weight_norm_sq(&self) -> f64 {
        layout(&self.sizes)
            .iter()
            .zip(self.sizes.windows(2))
            .map(|(&(w_off, _), w)| sum_sq(&self.params[w_off..w_off + w[0] * w[1]]))
            .sum()
    }

    /// Probability of the pathologic class for one raw input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        let z = self.scaler.transform(x)?;
        let mut a = Array1::from(z);
        let last = self.n_layers() - 1;
        for k in 0..=last {
            let mut pre = self.weights(k).dot(&a) + &self.biases(k);
            if k < last {
                pre.mapv_inplace(|v| self.activation.apply(v));
            }
            a = pre;
        }
        Ok(sigmoid(a[0]))
    }

    /// Logits, hidden pre-activations and activations for a scaled batch.
    fn forward_batch(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let last = self.n_layers() - 1;
        let mut pres = Vec::with_capacity(self.n_layers());
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers());
        for k in 0..=last {
            let input = if k == 0 { x } else { acts[k - 1].view() };
            let mut pre = input.dot(&self.weights(k).t());
            pre += &self.biases(k);
            let act = if k < last {
                pre.mapv(|v| self.activation.apply(v))
            } else {
                pre.clone()
            };
            pres.push(pre);
            acts.push(act);
        }
        (pres, acts)
    }

    /// Mean cross-entropy plus `l2 * ||W||^2` on an already scaled batch.
    pub fn loss_scaled(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, l2: f64) -> Result<f64> {
        if x.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }
        let (pres, _) = self.forward_batch(x);
        let logits = pres.last().unwrap().column(0);
        let bce = logits
            .iter()
            .zip(y.iter())
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum::<f64>()
            / x.nrows() as f64;
        Ok(bce + l2 * self.weight_norm_sq())
    }

    /// Analytic gradient of `loss_scaled`, in parameter layout.
    pub fn gradient_scaled(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, l2: f64) -> Result<Vec<f64>> {
        self.loss_and_gradient(x, y, l2).map(|(_, g)| g)
    }

    fn loss_and_gradient(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, l2: f64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.loss_and_gradient_into(x, y, l2, &mut grad)?;
        Ok((loss, grad))
    }

    /// Overwrites every entry of `grad`.
    fn loss_and_gradient_into(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, l2: f64, grad: &mut [f64]) -> Result<f64> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        let (pres, acts) = self.forward_batch(x);
        let lay = layout(&self.sizes);
        let last = self.n_layers() - 1;

        let logits = pres[last].column(0);
        let bce = logits.iter().zip(y.iter()).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / n as f64;
        let loss = bce + l2 * self.weight_norm_sq();
        let mut delta = Array2::from_shape_fn((n, 1), |(i, _)| (sigmoid(logits[i]) - y[i]) / n as f64);
        for k in (0..=last).rev() {
            let input = if k == 0 { x } else { acts[k - 1].view() };
            let (w_off, b_off) = lay[k];
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let w = self.weights(k);
            let g_w = &mut grad[w_off..w_off + n_in * n_out];
            g_w.iter_mut().zip(w.as_slice().expect("contiguous")).for_each(|(g, wv)| *g = 2.0 * l2 * wv);
            let mut g_view = ArrayViewMut2::from_shape((n_out, n_in), g_w).expect("layout matches");
            general_mat_mul(1.0, &delta.t(), &input, 1.0, &mut g_view);
            for (g, d) in grad[b_off..b_off + n_out].iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                *g = *d;
            }
            if k > 0 {
                let mut back = delta.dot(&w);
                let act = self.activation;
                ndarray::Zip::from(&mut back)
                    .and(&pres[k - 1])
                    .and(&acts[k - 1])
                    .for_each(|b, &z, &a| *b *= act.derivative(z, a));
                delta = back;
            }
        }
        Ok(loss)
    }

    fn scaled_batch(&self, x: &[&[f64]], labels: &[Label]) -> Result<(Array2<f64>, Array1<f64>)> {
        if x.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut data = Vec::with_capacity(x.len() * self.dim());
        for row in x {
            data.extend(self.scaler.transform(row)?);
        }
        let xs = Array2::from_shape_vec((x.len(), self.dim()), data).expect("rows have model dim");
        let ys = labels.iter().map(|l| f64::from(l.as_u8())).collect();
        Ok((xs, ys))
    }

    pub fn loss(&self, x: &[&[f64]], labels: &[Label], l2: f64) -> Result<f64> {
        let (xs, ys) = self.scaled_batch(x, labels)?;
        self.loss_scaled(xs.view(), ys.view(), l2)
    }

    pub fn backward(&self, x: &[&[f64]], labels: &[Label], l2: f64) -> Result<Vec<f64>> {
        let (xs, ys) = self.scaled_batch(x, labels)?;
        self.gradient_scaled(xs.view(), ys.view(), l2)
    }
}

pub fn init_ffn(config: &FfnConfig, input_dim: usize) -> Result<FfnModel> {
    config.validate()?;
    FfnModel::with_architecture(config.layer_sizes(input_dim), config.activation, config.seed)
}

/// Sum of squares with independent partial sums, so the loop vectorizes.
fn sum_sq(v: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = v.chunks_exact(8);
    let rest: f64 = chunks.remainder().iter().map(|x| x * x).sum();
    for c in chunks {
        for (a, x) in acc.iter_mut().zip(c) {
            *a += x * x;
        }
    }
    acc.iter().sum::<f64>() + rest
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step(
    params: &[f64],
    grads: &[f64],
    state: &AdamState,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
) -> (Vec<f64>, AdamState) {
    let mut p = params.to_vec();
    let mut s = state.clone();
    adam_step_in_place(&mut p, grads, &mut s, t, lr, beta1, beta2);
    (p, s)
}

pub fn adam_step_in_place(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
) {
    assert!(t >= 1, "Adam step counter starts at 1");
    let step = lr / (1.0 - beta1.powi(t as i32));
    let inv_c2 = 1.0 / (1.0 - beta2.powi(t as i32));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= step * *m / ((*v * inv_c2).sqrt() + ADAM_EPS);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
    pub n_train: usize,
    pub n_val: usize,
}

/// Stratified hold-out of roughly `fraction` of each class. Returns
/// (train, validation) indices; validation is empty when `fraction` is 0.
fn validation_split(labels: &[Label], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [Label::Control, Label::Pathologic] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn gather(x: &Array2<f64>, y: &Array1<f64>, idx: &[usize]) -> (Array2<f64>, Array1<f64>) {
    (x.select(Axis(0), idx), y.select(Axis(0), idx))
}

/// Adam training with stratified early stopping; returns the parameters
/// with the lowest validation loss.
pub fn train_ffn(x: &[&[f64]], labels: &[Label], config: &FfnConfig) -> Result<(FfnModel, TrainingLog)> {
    if x.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if x.len() != labels.len() {
        return Err(Error::InvalidInput("features and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == Label::Pathologic).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass(labels[0].as_u8()));
    }
    let mut model = init_ffn(config, x[0].len())?;
    model.scaler = Scaler::fit(x)?;
    let (xs, ys) = model.scaled_batch(x, labels)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f00d);
    let (train_idx, val_idx) = validation_split(labels, config.val_fraction, &mut rng);
    let (x_train, y_train) = gather(&xs, &ys, &train_idx);
    let (x_val, y_val) = if val_idx.is_empty() {
        (x_train.clone(), y_train.clone())
    } else {
        gather(&xs, &ys, &val_idx)
    };

    let mut state = AdamState::zeros(model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut best = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut early_stopped = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (bx, by) = gather(&x_train, &y_train, chunk);
            let loss = model.loss_and_gradient_into(bx.view(), by.view(), config.l2, &mut grad)?;
            loss_sum += loss * chunk.len() as f64;
            step += 1;
            adam_step_in_place(&mut model.params, &grad, &mut state, step, config.learning_rate, config.beta1, config.beta2);
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = model.loss_scaled(x_val.view(), y_val.view(), config.l2)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                loss: if train_loss.is_finite() { val_loss } else { train_loss },
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val - config.min_delta {
            best_val = val_loss;
            best_epoch = epoch;
            best.copy_from_slice(&model.params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                early_stopped = true;
                break;
            }
        }
    }
    model.params = best;
    Ok((
        model,
        TrainingLog {
            epochs,
            best_epoch,
            best_val_loss: best_val,
            early_stopped,
            n_train: train_idx.len(),
            n_val: val_idx.len(),
        },
    ))
}
