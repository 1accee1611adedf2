//! SGD training with momentum and weight decay on softmax cross-entropy.
//!
//! Batch gradients are computed over fixed-size chunks that are summed in
//! chunk order, so results are identical for any rayon worker count.

use super::ModelGraph;
use crate::data::Dataset;
use crate::tensor::{argmax_rows, softmax_cross_entropy, Tensor};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Fixed work-partition size; part of the deterministic-parallelism contract,
/// so do not derive it from the worker count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if self.learning_rate <= 0.0 || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid(
                "learning rate must be positive; momentum and weight decay non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub final_accuracy: f64,
}

/// Mean loss and parameter gradients for one batch, computed chunk-parallel
/// with a deterministic merge.
fn batch_gradients(
    model: &ModelGraph<f32>,
    batch: &Dataset,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
    let n = batch.len();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(n)))
        .collect();
    let results: Vec<Result<(f64, usize, BTreeMap<String, Tensor<f32>>)>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let indices: Vec<usize> = (start..end).collect();
            let part = batch.gather(&indices)?;
            let (logits, tape) = model.forward(&part.images)?;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, &part.labels)?;
            let (grads, _) = model.backward_train(&tape, &grad_logits)?;
            Ok((loss as f64, end - start, grads))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut merged: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for result in results {
        let (loss, count, grads) = result?;
        let weight = count as f32 / n as f32;
        total_loss += loss * count as f64 / n as f64;
        for (name, grad) in grads {
            let scaled = grad.scale(weight);
            match merged.remove(&name) {
                Some(existing) => {
                    merged.insert(name, existing.add(&scaled)?);
                }
                None => {
                    merged.insert(name, scaled);
                }
            }
        }
    }
    Ok((total_loss, merged))
}

/// Fraction of examples the model classifies correctly.
pub fn evaluate_accuracy(model: &ModelGraph<f32>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate accuracy on an empty set"));
    }
    let n = data.len();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(64)
        .map(|start| (start, (start + 64).min(n)))
        .collect();
    let correct: Result<usize> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let indices: Vec<usize> = (start..end).collect();
            let part = data.gather(&indices)?;
            let logits = model.forward_logits(&part.images)?;
            let preds = argmax_rows(&logits)?;
            Ok(preds
                .iter()
                .zip(&part.labels)
                .filter(|(p, y)| p == y)
                .count())
        })
        .try_reduce(|| 0, |a, b| Ok(a + b));
    Ok(correct? as f64 / n as f64)
}

/// Trains in place, reporting per-epoch train loss and held-out accuracy.
pub fn train(
    model: &mut ModelGraph<f32>,
    train_set: &Dataset,
    heldout: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if heldout.is_empty() {
        return Err(Error::invalid("held-out set is empty"));
    }

    let mut velocities: BTreeMap<String, Tensor<f32>> = model
        .param_entries()
        .iter()
        .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let lr = cfg.learning_rate as f32;
    let mu = cfg.momentum as f32;
    let wd = cfg.weight_decay as f32;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_indices in order.chunks(cfg.batch_size) {
            let batch = train_set.gather(batch_indices)?;
            let (loss, grads) = batch_gradients(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss became non-finite in epoch {epoch}"
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();

            for (name, param) in model.param_entries_mut() {
                let grad = grads
                    .get(&name)
                    .ok_or_else(|| Error::invalid(format!("missing gradient for `{name}`")))?;
                let vel = velocities.get_mut(&name).expect("velocity registered");
                for ((v, p), &g) in vel
                    .data_mut()
                    .iter_mut()
                    .zip(param.data_mut())
                    .zip(grad.data())
                {
                    *v = mu * *v + g + wd * *p;
                    *p -= lr * *v;
                }
            }
        }

        let heldout_accuracy = evaluate_accuracy(model, heldout)?;
        epochs.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / seen as f64,
            heldout_accuracy,
        });
    }

    let final_accuracy = epochs.last().map(|m| m.heldout_accuracy).unwrap_or(0.0);
    Ok(TrainReport {
        epochs,
        final_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchitectureSpec};

    /// Two-class set separated by stripe orientation (rows vs columns);
    /// linearly separable in pixel space.
    fn separable_set(n: usize) -> Dataset {
        let size = 12;
        let mut data = vec![0f32; n * size * size];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            labels.push(class);
            let level = 0.7 + 0.25 * ((i % 7) as f32 / 7.0);
            let image = &mut data[i * size * size..(i + 1) * size * size];
            for y in 0..size {
                for x in 0..size {
                    let on = if class == 0 { y % 2 == 0 } else { x % 2 == 0 };
                    if on {
                        image[y * size + x] = level;
                    }
                }
            }
        }
        Dataset::new(
            Tensor::new(vec![n, 1, size, size], data).unwrap(),
            labels,
            2,
        )
        .unwrap()
    }

    #[test]
    fn learns_linearly_separable_set() {
        let spec = ArchitectureSpec::plain_cnn((1, 12, 12), 2, &[8]);
        let mut model = build_model(&spec, 9).unwrap();
        let data = separable_set(200);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.1,
            ..Default::default()
        };
        train(&mut model, &data, &data, &cfg).unwrap();
        let train_acc = evaluate_accuracy(&model, &data).unwrap();
        assert!(train_acc >= 0.99, "train accuracy {train_acc}");
    }

    #[test]
    fn loss_decreases_over_first_epochs() {
        let spec = ArchitectureSpec::plain_cnn((1, 12, 12), 2, &[4]);
        let mut model = build_model(&spec, 10).unwrap();
        let data = separable_set(128);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 32,
            ..Default::default()
        };
        let report = train(&mut model, &data, &data, &cfg).unwrap();
        assert!(report.epochs[1].train_loss < report.epochs[0].train_loss);
    }

    #[test]
    fn fixed_seed_reproduces_parameters_exactly() {
        let spec = ArchitectureSpec::plain_cnn((1, 12, 12), 2, &[4]);
        let data = separable_set(96);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 32,
            ..Default::default()
        };
        let mut a = build_model(&spec, 11).unwrap();
        let mut b = build_model(&spec, 11).unwrap();
        let ra = train(&mut a, &data, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &data, &cfg).unwrap();
        assert_eq!(ra.final_accuracy, rb.final_accuracy);
        for ((_, ta), (_, tb)) in a.param_entries().iter().zip(b.param_entries().iter()) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let spec = ArchitectureSpec::plain_cnn((1, 12, 12), 2, &[4]);
        let mut model = build_model(&spec, 12).unwrap();
        let empty = Dataset::new(Tensor::zeros(&[0, 1, 12, 12]), vec![], 2).unwrap();
        let data = separable_set(8);
        assert!(train(&mut model, &empty, &data, &TrainConfig::default()).is_err());
    }
}
