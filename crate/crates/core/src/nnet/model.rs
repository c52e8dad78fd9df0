//! Model assembly: a compact three-block convolutional backbone feeding the
//! classification head (global average pooling, dropout, dense, softmax).

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::DetRng;

use super::layers::{BatchNorm2d, Conv2d, Dense, DropoutLayer, GlobalAvgPool, Layer, MaxPool2, Relu};
use super::optim::{adam_step, AdamState};
use super::tensor::Tensor;

/// Architecture tag written into checkpoints.
pub const MINI_BACKBONE_TAG: &str = "mini-backbone-16-32-64";

/// Ordered layer stack with a designated backbone/head split.
#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    backbone_len: usize,
    arch_tag: String,
    input_size: usize,
    num_classes: usize,
}

/// Class probabilities and the argmax label for one input.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub label: usize,
}

/// Build the default backbone: three conv/batch-norm/ReLU/pool blocks with
/// 16, 32, and 64 channels over a 1x150x150 input, then GAP, dropout, and a
/// dense softmax head over `num_classes` outputs.
pub fn build_model(num_classes: usize, dropout_rate: f64, seed: u64) -> Result<Model> {
    build_model_sized(num_classes, dropout_rate, seed, 150)
}

/// Same stack over a custom square input size (global average pooling makes
/// the head size-independent).
pub fn build_model_sized(
    num_classes: usize,
    dropout_rate: f64,
    seed: u64,
    input_size: usize,
) -> Result<Model> {
    if input_size < 8 {
        return Err(Error::InvalidArgument(format!(
            "input size {input_size} too small for three pooling stages"
        )));
    }
    let mut rng = DetRng::from_seed_index(seed, 0xB1A5);
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for out_ch in [16usize, 32, 64] {
        layers.push(Layer::Conv2d(Conv2d::new(in_ch, out_ch, 3, 1, 1, &mut rng)));
        layers.push(Layer::BatchNorm(BatchNorm2d::new(out_ch)));
        layers.push(Layer::Relu(Relu::default()));
        layers.push(Layer::MaxPool(MaxPool2::default()));
        in_ch = out_ch;
    }
    let backbone_len = layers.len();
    layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
    layers.push(Layer::Dropout(DropoutLayer::new(dropout_rate)?));
    layers.push(Layer::Dense(Dense::new(64, num_classes, &mut rng)));
    Ok(Model {
        layers,
        backbone_len,
        arch_tag: MINI_BACKBONE_TAG.to_string(),
        input_size,
        num_classes,
    })
}

impl Model {
    pub(crate) fn from_parts(
        layers: Vec<Layer>,
        backbone_len: usize,
        arch_tag: String,
        input_size: usize,
        num_classes: usize,
    ) -> Model {
        Model {
            layers,
            backbone_len,
            arch_tag,
            input_size,
            num_classes,
        }
    }

    pub fn arch_tag(&self) -> &str {
        &self.arch_tag
    }

    pub fn backbone_len(&self) -> usize {
        self.backbone_len
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_values())
            .map(|p| p.len())
            .sum()
    }

    /// Training-mode forward over a batch, caching for backward.
    pub fn forward_train(&mut self, input: Tensor, rng: &mut DetRng) -> Result<Tensor> {
        let mut x = input;
        for layer in &mut self.layers {
            x = layer.forward(x, rng)?;
        }
        Ok(x)
    }

    /// Inference-mode forward (running stats, no dropout, no caches).
    pub fn forward_infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.layers[0].infer(input)?;
        for layer in &self.layers[1..] {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Backpropagate from logit gradients; parameter gradients accumulate
    /// into the layers.
    pub fn backward(&mut self, grad_logits: Tensor) -> Result<()> {
        let mut grad = grad_logits;
        for layer in self.layers[1..].iter_mut().rev() {
            grad = layer.backward(grad)?;
        }
        // The first layer's input gradient has no consumer.
        match &mut self.layers[0] {
            Layer::Conv2d(l) => l.backward_no_input_grad(grad)?,
            other => {
                other.backward(grad)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    /// Number of trainable parameter tensors, for sizing Adam state.
    pub fn num_param_tensors(&mut self) -> usize {
        self.layers.iter_mut().map(|l| l.param_tensors().len()).sum()
    }

    /// Adam state sized for this model, one entry per parameter tensor.
    pub fn fresh_adam_states(&mut self) -> Vec<AdamState> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                l.param_tensors()
                    .into_iter()
                    .map(|(p, _)| AdamState::new(p.len()))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Apply one Adam update to every unfrozen parameter tensor. Frozen
    /// tensors keep both their values and their optimizer state untouched.
    pub fn adam_update(&mut self, states: &mut [AdamState], lr: f64) -> Result<()> {
        let mut idx = 0;
        for layer in &mut self.layers {
            let frozen = layer.frozen();
            for (params, grads) in layer.param_tensors() {
                if idx >= states.len() {
                    return Err(Error::InvalidArgument("adam state count mismatch".into()));
                }
                if !frozen {
                    adam_step(params, grads, &mut states[idx], lr)?;
                }
                idx += 1;
            }
        }
        Ok(())
    }

    /// Flag every backbone layer frozen; gradients still flow but updates
    /// skip them. The head stays trainable.
    pub fn freeze_backbone(&mut self) {
        for layer in &mut self.layers[..self.backbone_len] {
            layer.set_frozen(true);
        }
    }

    pub fn unfreeze_all(&mut self) {
        for layer in &mut self.layers {
            layer.set_frozen(false);
        }
    }

    /// Snapshot of all parameter values in layer order (for drift checks).
    pub fn parameter_snapshot(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| l.param_values().into_iter().cloned())
            .collect()
    }

    /// Snapshot of backbone parameter values only.
    pub fn backbone_snapshot(&self) -> Vec<Vec<f64>> {
        self.layers[..self.backbone_len]
            .iter()
            .flat_map(|l| l.param_values().into_iter().cloned())
            .collect()
    }

    /// Convert one grayscale image to the `[1, 1, H, W]` network input.
    pub fn image_to_input(&self, image: &Image) -> Result<Tensor> {
        if image.width() != self.input_size || image.height() != self.input_size {
            return Err(Error::DimensionMismatch(format!(
                "model expects {0}x{0} input, got {1}x{2}; resize first",
                self.input_size,
                image.width(),
                image.height()
            )));
        }
        Tensor::from_vec(
            vec![1, 1, self.input_size, self.input_size],
            image.pixels().to_vec(),
        )
    }

    /// Deterministic inference on one image.
    pub fn predict(&self, image: &Image) -> Result<Prediction> {
        let input = self.image_to_input(image)?;
        let logits = self.forward_infer(&input)?;
        let probabilities = softmax(&logits.data()[..self.num_classes])?;
        let label = argmax(&probabilities);
        Ok(Prediction {
            probabilities,
            label,
        })
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax over one logit row.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax over non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|v| v / sum).collect())
}

/// Row-wise softmax over `[N, K]` logits.
pub fn softmax_batch(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape().to_vec();
    let k = *shape.last().expect("non-empty shape");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let soft = softmax(row)?;
        row.copy_from_slice(&soft);
    }
    Ok(out)
}

/// Mean categorical cross entropy over a batch: -Σ yᵢ·log(max(ŷᵢ, 1e-12)).
pub fn cce_loss(probs: &Tensor, onehot: &Tensor) -> Result<f64> {
    if probs.shape() != onehot.shape() {
        return Err(Error::DimensionMismatch(format!(
            "cce shapes differ: {:?} vs {:?}",
            probs.shape(),
            onehot.shape()
        )));
    }
    let k = *probs.shape().last().expect("non-empty shape");
    let n = probs.numel() / k;
    let mut total = 0.0;
    for (p_row, y_row) in probs.data().chunks_exact(k).zip(onehot.data().chunks_exact(k)) {
        let ones = y_row.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || y_row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("cce labels must be one-hot rows".into()));
        }
        for (p, y) in p_row.iter().zip(y_row) {
            if *y == 1.0 {
                total -= p.max(1e-12).ln();
            }
        }
    }
    Ok(total / n as f64)
}
