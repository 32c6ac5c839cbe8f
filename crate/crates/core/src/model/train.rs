//! Minibatch SGD on cross-entropy for the reference CNN.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cnn::{ParamGrads, Tiny3DCnn};
use super::{argmax, softmax};
use crate::error::{Error, Result};
use crate::video::VideoTensor;

/// Keeps the shuffle stream distinct from the weight-init stream.
const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Tiny3DCnn,
    /// Mean cross-entropy over the training set after each epoch.
    pub losses: Vec<f64>,
    /// Training accuracy after the last epoch.
    pub accuracy: f64,
}

/// Trains a fresh [`Tiny3DCnn`] on `(clip, label)` pairs.
///
/// Deterministic for a fixed seed: shuffling and init come from the seed and
/// per-sample gradients are summed in batch order.
pub fn train_toy(dataset: &[(VideoTensor, usize)], classes: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::validation("training set is empty"))?;
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::validation("batch size and learning rate must be positive"));
    }
    let dims = first.0.dims();
    if let Some((v, l)) = dataset.iter().find(|(v, l)| v.dims() != dims || *l >= classes) {
        return Err(Error::validation(format!(
            "sample with dims {} and label {l} does not fit {dims} / {classes} classes",
            v.dims()
        )));
    }

    let mut model = Tiny3DCnn::new(dims, classes, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SHUFFLE_SALT));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<ParamGrads> = batch
                .par_iter()
                .map(|&i| {
                    let (v, l) = &dataset[i];
                    model.loss_and_grads(v, *l).map(|(_, g, _)| g)
                })
                .collect::<Result<_>>()?;
            let mut total = per_sample[0].clone();
            for g in &per_sample[1..] {
                total.add_assign(g);
            }
            total.scale(1.0 / batch.len() as f64);
            model.apply_update(&total, cfg.learning_rate);
        }
        losses.push(evaluate(&model, dataset)?.0);
    }
    let accuracy = evaluate(&model, dataset)?.1;
    Ok(TrainOutcome {
        model,
        losses,
        accuracy,
    })
}

/// Mean cross-entropy and accuracy of a model on a labelled set.
pub fn evaluate(model: &Tiny3DCnn, dataset: &[(VideoTensor, usize)]) -> Result<(f64, f64)> {
    let results: Vec<(f64, bool)> = dataset
        .par_iter()
        .map(|(v, l)| {
            let p = softmax(&model.logits(v)?);
            Ok((-p[*l].max(1e-300).ln(), argmax(&p) == *l))
        })
        .collect::<Result<_>>()?;
    let n = results.len() as f64;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = results.iter().filter(|r| r.1).count() as f64 / n;
    Ok((loss, acc))
}
