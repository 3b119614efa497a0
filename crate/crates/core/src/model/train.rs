use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forward::argmax;
use super::spec::ModelSpec;
use super::{ModelError, Tensor};

/// A training window with its class index into the model's label list.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Tensor,
    pub class_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ModelSpec,
    /// Mean sample loss seen during each epoch.
    pub epoch_loss: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[class]
}

/// Mean cross-entropy and accuracy of `model` over `data`.
pub fn evaluate(model: &ModelSpec, data: &[Example]) -> Result<(f64, f64), ModelError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in data {
        let trace = model.forward(&ex.input)?;
        loss += cross_entropy(trace.logits(), ex.class_index);
        if argmax(trace.probabilities()) == ex.class_index {
            correct += 1;
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Seeded mini-batch gradient descent on cross-entropy. The input model is
/// left untouched; a fresh spec is returned.
pub fn train(model: &ModelSpec, data: &[Example], hyper: &Hyper) -> Result<TrainReport, ModelError> {
    if hyper.batch_size == 0 || !hyper.learning_rate.is_finite() || hyper.learning_rate < 0.0 {
        return Err(ModelError::InvalidHyper);
    }
    for ex in data {
        model.check_input(&ex.input)?;
        if ex.class_index >= model.class_count() {
            return Err(ModelError::UnknownClass(ex.class_index));
        }
    }
    let classes: BTreeSet<usize> = data.iter().map(|e| e.class_index).collect();
    if classes.len() < 2 {
        return Err(ModelError::DegenerateDataset);
    }

    let (initial_loss, _) = evaluate(model, data)?;
    let mut layers = model.layers().to_vec();
    let mut current = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(hyper.epochs);

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut acc: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; layers.len()];
            for &idx in batch {
                let ex = &data[idx];
                let trace = current.forward_unchecked(ex.input.data());
                total += cross_entropy(trace.logits(), ex.class_index);
                let mut d_logits = trace.probabilities().to_vec();
                d_logits[ex.class_index] -= 1.0;
                let (_, grads) = current.backward(&trace, &d_logits, true, false);
                for (slot, g) in acc.iter_mut().zip(grads) {
                    if let Some((gw, gb)) = g {
                        match slot {
                            Some((aw, ab)) => {
                                aw.iter_mut().zip(&gw).for_each(|(a, g)| *a += g);
                                ab.iter_mut().zip(&gb).for_each(|(a, g)| *a += g);
                            }
                            None => *slot = Some((gw, gb)),
                        }
                    }
                }
            }
            let step = hyper.learning_rate / batch.len() as f64;
            for (layer, g) in layers.iter_mut().zip(&acc) {
                if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), g) {
                    w.iter_mut().zip(gw).for_each(|(p, g)| *p -= step * g);
                    b.iter_mut().zip(gb).for_each(|(p, g)| *p -= step * g);
                }
            }
            current = model.with_layers(layers.clone()).map_err(|_| ModelError::DivergenceDetected)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(ModelError::DivergenceDetected);
        }
        epoch_loss.push(mean);
    }

    let (final_loss, final_accuracy) = evaluate(&current, data)?;
    if !final_loss.is_finite() {
        return Err(ModelError::DivergenceDetected);
    }
    Ok(TrainReport { model: current, epoch_loss, initial_loss, final_loss, final_accuracy })
}
