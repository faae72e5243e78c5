//! Residual convolutional classifier with hand-written backpropagation.
//!
//! Layer stack (default sizes):
//!
//! ```text
//! input [24,35,4]
//!   conv_1 5x5 valid -> [20,31,20] -> relu_1 ---------------+
//!   conv_2 3x3 pad 1 -> [20,31,20] -> relu_2                |
//!   conv_3 3x3 pad 1 -> [20,31,20] -> relu_3 -> add <-------+
//!   fc 12400 -> 2 -> sigmoid -> argmax
//! ```
//!
//! Activations are stored `[H][W][C]`, convolution weights
//! `[out][kh][kw][in]`, so one kernel row over one input row is a contiguous
//! slice of `k * in` values.
//!
//! Training minimizes per-unit binary cross-entropy of the two sigmoid
//! outputs against one-hot targets, summed over units and averaged over the
//! batch. Per-sample gradients are reduced in sample order, so results do not
//! depend on the rayon thread count.

use std::fmt::Debug;
use std::fs;
use std::iter::Sum;
use std::path::Path;
use std::time::Instant;

use num_traits::{Float, NumCast};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureShape, Label, LabeledSample};
use crate::error::{invalid, Error, Result};
use crate::seed::derive;

pub const MODEL_MAGIC: &[u8; 4] = b"PRNN";
pub const MODEL_VERSION: u32 = 1;

pub trait Scalar: Float + Default + Send + Sync + Debug + Sum + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

fn cast<T: Scalar>(v: f64) -> T {
    <T as NumCast>::from(v).unwrap()
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub input: FeatureShape,
    pub conv1_kernel: usize,
    pub channels: usize,
    pub block_kernel: usize,
    pub outputs: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input: [24, 35, 4],
            conv1_kernel: 5,
            channels: 20,
            block_kernel: 3,
            outputs: 2,
        }
    }
}

/// One row of the layer listing echoed into model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input;
        if c == 0 || self.channels == 0 || self.outputs == 0 {
            return invalid("model dimensions must be positive");
        }
        if self.conv1_kernel == 0 || self.conv1_kernel > h || self.conv1_kernel > w {
            return invalid("conv_1 kernel does not fit the input");
        }
        if self.block_kernel % 2 == 0 {
            return invalid("block kernel must be odd to preserve shape");
        }
        Ok(())
    }

    /// Shape shared by relu_1, relu_2, relu_3 and the add layer.
    pub fn feature_map(&self) -> [usize; 3] {
        let [h, w, _] = self.input;
        [h - self.conv1_kernel + 1, w - self.conv1_kernel + 1, self.channels]
    }

    pub fn fc_inputs(&self) -> usize {
        self.feature_map().iter().product()
    }

    fn block_pad(&self) -> usize {
        (self.block_kernel - 1) / 2
    }

    pub fn layers(&self) -> Vec<LayerDesc> {
        let fm = self.feature_map().to_vec();
        let row = |name: &str, kind: &str, shape: Vec<usize>| LayerDesc {
            name: name.into(),
            kind: kind.into(),
            output_shape: shape,
        };
        vec![
            row("input", "ImageInput", self.input.to_vec()),
            row("conv_1", &format!("Conv{0}x{0}", self.conv1_kernel), fm.clone()),
            row("relu_1", "ReLU", fm.clone()),
            row("conv_2", &format!("Conv{0}x{0}Pad{1}", self.block_kernel, self.block_pad()), fm.clone()),
            row("relu_2", "ReLU", fm.clone()),
            row("conv_3", &format!("Conv{0}x{0}Pad{1}", self.block_kernel, self.block_pad()), fm.clone()),
            row("relu_3", "ReLU", fm.clone()),
            row("add", "Addition(relu_1, relu_3)", fm),
            row("fc", "FullyConnected", vec![self.outputs]),
            row("sigmoid", "Sigmoid", vec![self.outputs]),
            row("classoutput", "Argmax", vec![1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub pad: usize,
    /// `[out][kh][kw][in]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + *x * *y;
    }
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

fn pad_input<T: Scalar>(x: &[T], h: usize, w: usize, c: usize, pad: usize) -> Vec<T> {
    if pad == 0 {
        return x.to_vec();
    }
    let wp = w + 2 * pad;
    let mut out = vec![T::zero(); (h + 2 * pad) * wp * c];
    for r in 0..h {
        let dst = ((r + pad) * wp + pad) * c;
        out[dst..dst + w * c].copy_from_slice(&x[r * w * c..(r + 1) * w * c]);
    }
    out
}

impl<T: Scalar> Conv2d<T> {
    fn he_uniform(kernel: usize, in_ch: usize, out_ch: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = kernel * kernel * in_ch;
        let limit = (6.0 / fan_in as f64).sqrt();
        let weight = (0..out_ch * fan_in)
            .map(|_| cast(rng.random_range(-limit..limit)))
            .collect();
        Self {
            kernel,
            in_ch,
            out_ch,
            pad,
            weight,
            bias: vec![T::zero(); out_ch],
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h + 2 * self.pad + 1 - self.kernel, w + 2 * self.pad + 1 - self.kernel)
    }

    fn forward(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        let xp = pad_input(x, h, w, cin, self.pad);
        let wp = w + 2 * self.pad;
        let (oh, ow) = self.out_dims(h, w);
        let row = k * cin;
        let mut out = vec![T::zero(); oh * ow * cout];
        for r in 0..oh {
            for c in 0..ow {
                let dst = &mut out[(r * ow + c) * cout..(r * ow + c + 1) * cout];
                for (o, y) in dst.iter_mut().enumerate() {
                    let wo = &self.weight[o * k * row..(o + 1) * k * row];
                    let mut acc = self.bias[o];
                    for kh in 0..k {
                        let s = ((r + kh) * wp + c) * cin;
                        acc = acc + dot(&xp[s..s + row], &wo[kh * row..(kh + 1) * row]);
                    }
                    *y = acc;
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when asked.
    fn backward(
        &self,
        x: &[T],
        h: usize,
        w: usize,
        dy: &[T],
        grad: &mut Conv2d<T>,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        let xp = pad_input(x, h, w, cin, self.pad);
        let wp = w + 2 * self.pad;
        let (oh, ow) = self.out_dims(h, w);
        let row = k * cin;
        let mut dxp = if want_dx {
            vec![T::zero(); xp.len()]
        } else {
            Vec::new()
        };
        for r in 0..oh {
            for c in 0..ow {
                let g = &dy[(r * ow + c) * cout..(r * ow + c + 1) * cout];
                for (o, &go) in g.iter().enumerate() {
                    if go == T::zero() {
                        continue;
                    }
                    grad.bias[o] = grad.bias[o] + go;
                    for kh in 0..k {
                        let s = ((r + kh) * wp + c) * cin;
                        let wofs = o * k * row + kh * row;
                        axpy(go, &xp[s..s + row], &mut grad.weight[wofs..wofs + row]);
                        if want_dx {
                            axpy(go, &self.weight[wofs..wofs + row], &mut dxp[s..s + row]);
                        }
                    }
                }
            }
        }
        if !want_dx {
            return None;
        }
        if self.pad == 0 {
            return Some(dxp);
        }
        let mut dx = vec![T::zero(); h * w * cin];
        for rr in 0..h {
            let src = ((rr + self.pad) * wp + self.pad) * cin;
            dx[rr * w * cin..(rr + 1) * w * cin].copy_from_slice(&dxp[src..src + w * cin]);
        }
        Some(dx)
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
            ..*self
        }
    }

    fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            kernel: self.kernel,
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            pad: self.pad,
            weight: self.weight.iter().map(|v| cast(to_f64(*v))).collect(),
            bias: self.bias.iter().map(|v| cast(to_f64(*v))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub conv3: Conv2d<T>,
    /// `[outputs][fc_inputs]`
    pub fc_weight: Vec<T>,
    pub fc_bias: Vec<T>,
    /// Bumped on every parameter update; ties a [`ForwardCache`] to the weights it saw.
    version: u64,
}

/// Activations retained by [`Model::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub input: Vec<T>,
    pub relu1: Vec<T>,
    pub relu2: Vec<T>,
    pub relu3: Vec<T>,
    pub add: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    spec: ModelSpec,
    version: u64,
}

/// Gradients mirroring the model's parameters, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub conv3: Conv2d<T>,
    pub fc_weight: Vec<T>,
    pub fc_bias: Vec<T>,
    pub input: Option<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn slices(&self) -> [&[T]; 8] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.conv3.weight,
            &self.conv3.bias,
            &self.fc_weight,
            &self.fc_bias,
        ]
    }

    fn accumulate(&mut self, other: &Gradients<T>) {
        let pairs = [
            (&mut self.conv1.weight, &other.conv1.weight),
            (&mut self.conv1.bias, &other.conv1.bias),
            (&mut self.conv2.weight, &other.conv2.weight),
            (&mut self.conv2.bias, &other.conv2.bias),
            (&mut self.conv3.weight, &other.conv3.weight),
            (&mut self.conv3.bias, &other.conv3.bias),
            (&mut self.fc_weight, &other.fc_weight),
            (&mut self.fc_bias, &other.fc_bias),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn relu_mask<T: Scalar>(grad: &mut [T], activation: &[T]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Summed per-unit binary cross-entropy, evaluated from logits for stability.
pub fn bce_from_logits<T: Scalar>(logits: &[T], target: &[T]) -> f64 {
    logits
        .iter()
        .zip(target)
        .map(|(z, t)| {
            let (z, t) = (to_f64(*z), to_f64(*t));
            t * softplus(-z) + (1.0 - t) * softplus(z)
        })
        .sum()
}

/// Argmax of the sigmoid outputs; ties go to class 1 (interfered).
pub fn decide<T: Scalar>(probs: &[T]) -> Label {
    if probs.len() >= 2 && probs[0] > probs[1] {
        Label::Clean
    } else {
        Label::Interfered
    }
}

pub fn one_hot<T: Scalar>(label: Label, n: usize) -> Vec<T> {
    (0..n)
        .map(|i| if i == label.index() { T::one() } else { T::zero() })
        .collect()
}

impl<T: Scalar> Model<T> {
    /// He-uniform weights, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = spec.channels;
        let pad = spec.block_pad();
        let conv1 = Conv2d::he_uniform(spec.conv1_kernel, spec.input[2], c, 0, &mut rng);
        let conv2 = Conv2d::he_uniform(spec.block_kernel, c, c, pad, &mut rng);
        let conv3 = Conv2d::he_uniform(spec.block_kernel, c, c, pad, &mut rng);
        let fan_in = spec.fc_inputs();
        let limit = (6.0 / fan_in as f64).sqrt();
        let fc_weight = (0..spec.outputs * fan_in)
            .map(|_| cast(rng.random_range(-limit..limit)))
            .collect();
        Ok(Self {
            spec,
            conv1,
            conv2,
            conv3,
            fc_weight,
            fc_bias: vec![T::zero(); spec.outputs],
            version: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> [&[T]; 8] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.conv3.weight,
            &self.conv3.bias,
            &self.fc_weight,
            &self.fc_bias,
        ]
    }

    /// Mutable parameter blocks in file order. Marks outstanding caches stale.
    pub fn params_mut(&mut self) -> [&mut Vec<T>; 8] {
        self.version += 1;
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.conv3.weight,
            &mut self.conv3.bias,
            &mut self.fc_weight,
            &mut self.fc_bias,
        ]
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec,
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            conv3: self.conv3.cast(),
            fc_weight: self.fc_weight.iter().map(|v| cast(to_f64(*v))).collect(),
            fc_bias: self.fc_bias.iter().map(|v| cast(to_f64(*v))).collect(),
            version: 0,
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<ForwardCache<T>> {
        let [h, w, c] = self.spec.input;
        if x.len() != h * w * c {
            return Err(Error::Shape {
                layer: "input",
                expected: self.spec.input.to_vec(),
                got: vec![x.len()],
            });
        }
        let [fh, fw, _] = self.spec.feature_map();

        let mut relu1 = self.conv1.forward(x, h, w);
        relu_in_place(&mut relu1);
        let mut relu2 = self.conv2.forward(&relu1, fh, fw);
        relu_in_place(&mut relu2);
        let mut relu3 = self.conv3.forward(&relu2, fh, fw);
        relu_in_place(&mut relu3);
        let add: Vec<T> = relu1.iter().zip(&relu3).map(|(a, b)| *a + *b).collect();

        let n_in = add.len();
        if n_in * self.spec.outputs != self.fc_weight.len() {
            return Err(Error::Shape {
                layer: "fc",
                expected: vec![self.fc_weight.len() / self.spec.outputs],
                got: vec![n_in],
            });
        }
        let logits: Vec<T> = (0..self.spec.outputs)
            .map(|j| self.fc_bias[j] + dot(&self.fc_weight[j * n_in..(j + 1) * n_in], &add))
            .collect();
        let probs = logits.iter().map(|z| sigmoid(*z)).collect();

        Ok(ForwardCache {
            input: x.to_vec(),
            relu1,
            relu2,
            relu3,
            add,
            logits,
            probs,
            spec: self.spec,
            version: self.version,
        })
    }

    /// Exact gradients of [`bce_from_logits`] for the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache<T>, target: &[T], want_input_grad: bool) -> Result<Gradients<T>> {
        if cache.spec != self.spec || cache.version != self.version {
            return Err(Error::Contract(
                "forward cache does not belong to the current model weights".into(),
            ));
        }
        if target.len() != self.spec.outputs {
            return Err(Error::Shape {
                layer: "classoutput",
                expected: vec![self.spec.outputs],
                got: vec![target.len()],
            });
        }
        let [h, w, _] = self.spec.input;
        let [fh, fw, _] = self.spec.feature_map();
        let n_in = cache.add.len();

        let dz: Vec<T> = cache.probs.iter().zip(target).map(|(p, t)| *p - *t).collect();
        let mut fc_weight = vec![T::zero(); self.fc_weight.len()];
        let mut d_add = vec![T::zero(); n_in];
        for (j, &g) in dz.iter().enumerate() {
            axpy(g, &cache.add, &mut fc_weight[j * n_in..(j + 1) * n_in]);
            axpy(g, &self.fc_weight[j * n_in..(j + 1) * n_in], &mut d_add);
        }

        let mut g3 = d_add.clone();
        relu_mask(&mut g3, &cache.relu3);
        let mut conv3 = self.conv3.zeros_like();
        let mut g2 = self
            .conv3
            .backward(&cache.relu2, fh, fw, &g3, &mut conv3, true)
            .unwrap();
        relu_mask(&mut g2, &cache.relu2);
        let mut conv2 = self.conv2.zeros_like();
        let d_relu1_conv = self
            .conv2
            .backward(&cache.relu1, fh, fw, &g2, &mut conv2, true)
            .unwrap();

        // skip path and conv path meet at relu_1
        let mut g1: Vec<T> = d_add.iter().zip(&d_relu1_conv).map(|(a, b)| *a + *b).collect();
        relu_mask(&mut g1, &cache.relu1);
        let mut conv1 = self.conv1.zeros_like();
        let input = self
            .conv1
            .backward(&cache.input, h, w, &g1, &mut conv1, want_input_grad);

        Ok(Gradients {
            conv1,
            conv2,
            conv3,
            fc_weight,
            fc_bias: dz,
            input,
        })
    }

    fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            conv3: self.conv3.zeros_like(),
            fc_weight: vec![T::zero(); self.fc_weight.len()],
            fc_bias: vec![T::zero(); self.fc_bias.len()],
            input: None,
        }
    }

    /// Loss of one example, for finite-difference checks.
    pub fn loss(&self, x: &[T], target: &[T]) -> Result<f64> {
        Ok(bce_from_logits(&self.forward(x)?.logits, target))
    }

    pub fn predict(&self, x: &[T]) -> Result<(Label, Vec<T>)> {
        let cache = self.forward(x)?;
        Ok((decide(&cache.probs), cache.probs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return invalid("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub train_time_s: f64,
}

impl TrainHistory {
    /// `epoch,train_loss,train_acc,val_loss,val_acc`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: i32,
}

fn check_input(model: &Model<f32>, s: &LabeledSample) -> Result<()> {
    let want: usize = model.spec.input.iter().product();
    if s.features.len() != want {
        return Err(Error::Shape {
            layer: "input",
            expected: model.spec.input.to_vec(),
            got: vec![s.features.len()],
        });
    }
    Ok(())
}

/// Mean loss and accuracy over a sample set.
pub fn evaluate_loss(model: &Model<f32>, samples: &[LabeledSample]) -> Result<(f64, f64)> {
    let per = samples
        .par_iter()
        .map(|s| {
            let cache = model.forward(&s.features)?;
            let loss = bce_from_logits(&cache.logits, &one_hot::<f32>(s.label, model.spec.outputs));
            Ok((loss, decide(&cache.probs) == s.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len().max(1) as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Mini-batch training. Deterministic in `(model, data, cfg)`.
///
/// Train loss and accuracy are running averages over the epoch's batches;
/// validation metrics are computed after the epoch's last update.
pub fn train(model: &mut Model<f32>, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return invalid("training and validation sets must be non-empty");
    }
    for s in train_set.samples.iter().chain(&val_set.samples) {
        check_input(model, s)?;
    }

    let started = Instant::now();
    let mut adam = Adam {
        m: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        v: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        step: 0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, epoch as u64)));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set.samples[i];
                    let target = one_hot::<f32>(s.label, model.spec.outputs);
                    let cache = model.forward(&s.features)?;
                    let loss = bce_from_logits(&cache.logits, &target);
                    let hit = decide(&cache.probs) == s.label;
                    Ok((model.backward(&cache, &target, false)?, loss, hit))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut grads = model.zero_grads();
            for (g, loss, hit) in &per_sample {
                grads.accumulate(g);
                loss_sum += loss;
                correct += *hit as usize;
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            apply_update(model, &grads, batch.len(), cfg, &mut adam);
        }

        let (val_loss, val_acc) = evaluate_loss(model, &val_set.samples)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_loss,
            val_acc,
        });
    }

    Ok(TrainHistory {
        config: cfg.clone(),
        epochs: records,
        train_time_s: started.elapsed().as_secs_f64(),
    })
}

fn apply_update(model: &mut Model<f32>, grads: &Gradients<f32>, batch: usize, cfg: &TrainConfig, adam: &mut Adam) {
    let inv = 1.0 / batch as f32;
    let lr = cfg.learning_rate as f32;
    adam.step += 1;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = 1.0 - b1.powi(adam.step);
    let c2 = 1.0 - b2.powi(adam.step);
    let eps = cfg.epsilon as f32;
    let slices = grads.slices();
    for (k, p) in model.params_mut().into_iter().enumerate() {
        let g = slices[k];
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, gi) in p.iter_mut().zip(g) {
                    *w -= lr * gi * inv;
                }
            }
            Optimizer::Adam => {
                let (m, v) = (&mut adam.m[k], &mut adam.v[k]);
                for i in 0..p.len() {
                    let gi = g[i] * inv;
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    spec: ModelSpec,
    layers: Vec<LayerDesc>,
    param_blocks: Vec<usize>,
    #[serde(default)]
    experiment: Option<serde_json::Value>,
}

/// `"PRNN" | u32 LE version | u64 LE header length | JSON | f32 LE weight blocks`.
pub fn encode_model(model: &Model<f32>, experiment: Option<&serde_json::Value>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ModelHeader {
        spec: model.spec,
        layers: model.spec.layers(),
        param_blocks: model.params().iter().map(|p| p.len()).collect(),
        experiment: experiment.cloned(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + model.param_count() * 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for block in model.params() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns the model and the experiment echo stored with it.
pub fn decode_model(bytes: &[u8]) -> Result<(Model<f32>, Option<serde_json::Value>)> {
    if bytes.len() < 16 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: "PRNN" });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if header_len > body.len() as u64 {
        return Err(Error::CorruptHeader("header length exceeds file size".into()));
    }
    let (header, weights) = body.split_at(header_len as usize);
    let header: ModelHeader =
        serde_json::from_slice(header).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    header
        .spec
        .validate()
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;

    let mut model = Model::<f32>::init(header.spec, 0)?;
    let expected: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if header.param_blocks != expected {
        return Err(Error::CorruptHeader("parameter block sizes disagree with spec".into()));
    }
    let total = expected.iter().sum::<usize>() * 4;
    if weights.len() != total {
        return Err(Error::TruncatedTensor {
            expected: total,
            found: weights.len(),
        });
    }
    let mut values = weights
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    for block in model.params_mut() {
        for v in block.iter_mut() {
            *v = values.next().unwrap();
        }
    }
    if model.params().iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::CorruptHeader("non-finite weight".into()));
    }
    Ok((model, header.experiment))
}

pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>, experiment: Option<&serde_json::Value>) -> Result<()> {
    fs::write(path, encode_model(model, experiment)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Model<f32>, Option<serde_json::Value>)> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelSpec {
        ModelSpec {
            input: [7, 8, 2],
            conv1_kernel: 5,
            channels: 3,
            block_kernel: 3,
            outputs: 2,
        }
    }

    fn random_input<T: Scalar>(spec: &ModelSpec, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..spec.input.iter().product::<usize>())
            .map(|_| cast(rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn default_shapes() {
        let spec = ModelSpec::default();
        assert_eq!(spec.feature_map(), [20, 31, 20]);
        assert_eq!(spec.fc_inputs(), 12400);
        let m = Model::<f32>::init(spec, 1).unwrap();
        let c = m.forward(&random_input(&spec, 2)).unwrap();
        assert_eq!(c.relu1.len(), 20 * 31 * 20);
        assert_eq!(c.relu2.len(), 20 * 31 * 20);
        assert_eq!(c.relu3.len(), 20 * 31 * 20);
        assert_eq!(c.add.len(), 12400);
        assert_eq!(c.probs.len(), 2);
        let shapes: Vec<Vec<usize>> = spec.layers().into_iter().map(|l| l.output_shape).collect();
        assert_eq!(shapes[0], vec![24, 35, 4]);
        assert_eq!(shapes[7], vec![20, 31, 20]);
        assert_eq!(shapes[8], vec![2]);
    }

    #[test]
    fn zero_weights_give_half() {
        let spec = tiny();
        let mut m = Model::<f64>::init(spec, 3).unwrap();
        for p in m.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        let (_, probs) = m.predict(&random_input(&spec, 4)).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
        assert_eq!(decide(&probs), Label::Interfered);
    }

    #[test]
    fn skip_path_passes_relu1_through() {
        let spec = tiny();
        let mut m = Model::<f64>::init(spec, 5).unwrap();
        for (i, p) in m.params_mut().into_iter().enumerate() {
            if (2..6).contains(&i) {
                p.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let c = m.forward(&random_input(&spec, 6)).unwrap();
        assert_eq!(c.add, c.relu1);
    }

    #[test]
    fn input_shape_error_names_layer() {
        let m = Model::<f32>::init(tiny(), 1).unwrap();
        match m.forward(&[0.0; 5]) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "input"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let spec = tiny();
        let mut m = Model::<f64>::init(spec, 1).unwrap();
        let cache = m.forward(&random_input(&spec, 2)).unwrap();
        m.params_mut()[7][0] = 0.25;
        assert!(matches!(
            m.backward(&cache, &[1.0, 0.0], false),
            Err(Error::Contract(_))
        ));
        let other = Model::<f64>::init(ModelSpec { channels: 4, ..spec }, 1).unwrap();
        let cache = other.forward(&random_input(&spec, 2)).unwrap();
        assert!(m.backward(&cache, &[1.0, 0.0], false).is_err());
    }

    #[test]
    fn saturated_correct_output_has_zero_gradient() {
        let spec = tiny();
        let mut m = Model::<f64>::init(spec, 8).unwrap();
        m.params_mut()[7].copy_from_slice(&[800.0, -800.0]);
        let cache = m.forward(&random_input(&spec, 9)).unwrap();
        assert_eq!(cache.probs, vec![1.0, 0.0]);
        let g = m.backward(&cache, &[1.0, 0.0], true).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
        assert!(g.input.unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decision_rule() {
        assert_eq!(decide(&[0.9f32, 0.2]), Label::Clean);
        assert_eq!(decide(&[0.1f32, 0.2]), Label::Interfered);
        assert_eq!(decide(&[0.5f32, 0.5]), Label::Interfered);
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let spec = tiny();
        let m = Model::<f32>::init(spec, 12).unwrap();
        let x = random_input::<f32>(&spec, 13);
        let before = m.predict(&x).unwrap();
        let bytes = encode_model(&m, None).unwrap();
        let (back, _) = decode_model(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        let after = back.predict(&x).unwrap();
        assert_eq!(before.0, after.0);
        assert_eq!(
            before.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        assert!(matches!(decode_model(&bytes[..bytes.len() - 3]), Err(Error::TruncatedTensor { .. })));
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_model(&bad), Err(Error::VersionMismatch { .. })));
        let mut bad = bytes;
        bad[20] = b'!';
        assert!(matches!(decode_model(&bad), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn train_config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
