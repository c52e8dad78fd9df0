//! The training recipe: seeded stratified split, per-epoch shuffling,
//! mini-batch Adam on categorical cross entropy, per-epoch validation in
//! inference mode, and reduce-on-plateau scheduling on validation loss.
//! Everything is a pure function of (model init seed, data, config).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::DetRng;

use super::model::{argmax, cce_loss, softmax_batch, Model};
use super::optim::PlateauScheduler;
use super::tensor::Tensor;

// Stream ids keeping the seeded RNG uses independent of one another.
const STREAM_SPLIT: u64 = 0x51;
const STREAM_SHUFFLE: u64 = 0x52 << 32;
const STREAM_DROPOUT: u64 = 0x53 << 48;

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 32,
            epochs: 12,
            dropout_rate: 0.2,
            plateau_patience: 2,
            plateau_factor: 0.3,
            min_lr: 1e-6,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument("dropout_rate must be in [0, 1)".into()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::InvalidArgument("plateau_patience must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) || self.validation_fraction == 0.0 {
            return Err(Error::InvalidArgument(
                "validation_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch training history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurves {
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub lr: Vec<f64>,
}

impl TrainingCurves {
    /// CSV with header `epoch,train_loss,train_acc,val_loss,val_acc,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
        for e in 0..self.train_loss.len() {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6e}",
                e + 1,
                self.train_loss[e],
                self.train_acc[e],
                self.val_loss[e],
                self.val_acc[e],
                self.lr[e]
            );
        }
        out
    }
}

/// Deterministic stratified split into (train indices, validation indices).
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..num_classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect();
        let mut rng = DetRng::from_seed_index(seed, STREAM_SPLIT ^ (class as u64) << 8);
        rng.shuffle(&mut members);
        let val_count = (fraction * members.len() as f64).round() as usize;
        val.extend_from_slice(&members[..val_count]);
        train.extend_from_slice(&members[val_count..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn batch_tensors(
    data: &[(Image, usize)],
    indices: &[usize],
    num_classes: usize,
    input_size: usize,
) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let n = indices.len();
    let mut pixels = Vec::with_capacity(n * input_size * input_size);
    let mut onehot = vec![0.0; n * num_classes];
    let mut labels = Vec::with_capacity(n);
    for (row, &i) in indices.iter().enumerate() {
        let (image, label) = &data[i];
        if image.width() != input_size || image.height() != input_size {
            return Err(Error::DimensionMismatch(format!(
                "training image {i} is {}x{}, expected {input_size}x{input_size}",
                image.width(),
                image.height()
            )));
        }
        pixels.extend_from_slice(image.pixels());
        onehot[row * num_classes + label] = 1.0;
        labels.push(*label);
    }
    Ok((
        Tensor::from_vec(vec![n, 1, input_size, input_size], pixels)?,
        Tensor::from_vec(vec![n, num_classes], onehot)?,
        labels,
    ))
}

/// Loss and accuracy over a split in inference mode.
pub fn evaluate_split(
    model: &Model,
    data: &[(Image, usize)],
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let (input, onehot, labels) =
            batch_tensors(data, chunk, model.num_classes(), model.input_size())?;
        let logits = model.forward_infer(&input)?;
        let probs = softmax_batch(&logits)?;
        total_loss += cce_loss(&probs, &onehot)? * chunk.len() as f64;
        for (row, &label) in labels.iter().enumerate() {
            let k = model.num_classes();
            if argmax(&probs.data()[row * k..][..k]) == label {
                correct += 1;
            }
        }
    }
    let n = indices.len() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

/// Train `model` in place and return the per-epoch curves. The validation
/// split is drawn internally (seeded, stratified by class).
pub fn train(model: &mut Model, data: &[(Image, usize)], config: &TrainConfig) -> Result<TrainingCurves> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let num_classes = model.num_classes();
    check_labels(data, num_classes)?;
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    let (train_idx, val_idx) =
        stratified_split(&labels, num_classes, config.validation_fraction, config.seed);
    train_on_indices(model, data, &train_idx, data, &val_idx, config)
}

/// Train against an explicit validation set (the pipeline keeps augmented
/// derivatives out of validation by construction).
pub fn train_with_validation(
    model: &mut Model,
    train_data: &[(Image, usize)],
    val_data: &[(Image, usize)],
    config: &TrainConfig,
) -> Result<TrainingCurves> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    check_labels(train_data, model.num_classes())?;
    // The validation set only needs in-range labels; two-class coverage is a
    // training-set requirement.
    for (i, (_, label)) in val_data.iter().enumerate() {
        if *label >= model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "validation sample {i} has label {label}, expected < {}",
                model.num_classes()
            )));
        }
    }
    let train_idx: Vec<usize> = (0..train_data.len()).collect();
    let val_idx: Vec<usize> = (0..val_data.len()).collect();
    train_on_indices(model, train_data, &train_idx, val_data, &val_idx, config)
}

fn check_labels(data: &[(Image, usize)], num_classes: usize) -> Result<()> {
    let mut present = vec![false; num_classes];
    for (i, (_, label)) in data.iter().enumerate() {
        if *label >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has label {label}, expected < {num_classes}"
            )));
        }
        present[*label] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidArgument(
            "training needs at least two represented classes".into(),
        ));
    }
    Ok(())
}

fn train_on_indices(
    model: &mut Model,
    data: &[(Image, usize)],
    train_idx: &[usize],
    val_data: &[(Image, usize)],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<TrainingCurves> {
    let num_classes = model.num_classes();
    if train_idx.len() < 2 {
        return Err(Error::InvalidArgument("training split needs at least 2 samples".into()));
    }
    if val_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "validation split is empty; raise validation_fraction".into(),
        ));
    }

    let mut adam_states = model.fresh_adam_states();
    let mut scheduler = PlateauScheduler::new(
        config.learning_rate,
        config.plateau_patience,
        config.plateau_factor,
        config.min_lr,
    )?;
    let mut curves = TrainingCurves::default();
    let mut global_step = 0u64;

    for epoch in 0..config.epochs {
        let lr = scheduler.lr();
        let mut order = train_idx.to_vec();
        DetRng::from_seed_index(config.seed, STREAM_SHUFFLE ^ epoch as u64).shuffle(&mut order);

        // A trailing single sample cannot batch-normalize; fold it into the
        // previous batch instead of dropping it.
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
            let merged_start = (batches.len() - 2) * config.batch_size;
            batches.pop();
            batches.pop();
            batches.push(&order[merged_start..]);
        }

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for batch in batches {
            let (input, onehot, batch_labels) =
                batch_tensors(data, batch, num_classes, model.input_size())?;
            let mut dropout_rng = DetRng::from_seed_index(config.seed, STREAM_DROPOUT ^ global_step);
            global_step += 1;

            model.zero_grads();
            let logits = model.forward_train(input, &mut dropout_rng)?;
            let probs = softmax_batch(&logits)?;
            epoch_loss += cce_loss(&probs, &onehot)? * batch.len() as f64;
            for (row, &label) in batch_labels.iter().enumerate() {
                if argmax(&probs.data()[row * num_classes..][..num_classes]) == label {
                    epoch_correct += 1;
                }
            }

            // Combined softmax + cross-entropy gradient: (p - y) / batch.
            let scale = 1.0 / batch.len() as f64;
            let grad_data: Vec<f64> = probs
                .data()
                .iter()
                .zip(onehot.data())
                .map(|(p, y)| (p - y) * scale)
                .collect();
            let grad = Tensor::from_vec(vec![batch.len(), num_classes], grad_data)?;
            model.backward(grad)?;
            model.adam_update(&mut adam_states, lr)?;
        }

        let (val_loss, val_acc) = evaluate_split(model, val_data, val_idx, config.batch_size)?;
        curves.train_loss.push(epoch_loss / train_idx.len() as f64);
        curves.train_acc.push(epoch_correct as f64 / train_idx.len() as f64);
        curves.val_loss.push(val_loss);
        curves.val_acc.push(val_acc);
        curves.lr.push(lr);
        scheduler.observe(val_loss);
    }
    Ok(curves)
}

/// Build a fresh default model for `num_classes` and train it.
pub fn train_fresh(
    data: &[(Image, usize)],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(Model, TrainingCurves)> {
    let mut model = super::model::build_model(num_classes, config.dropout_rate, config.seed)?;
    let curves = train(&mut model, data, config)?;
    Ok((model, curves))
}
