use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::spec::{ActShape, Layer, ModelSpec};
use super::{ModelError, Tensor};
use crate::ingest::GaitWindow;
use crate::stage::Stage;

/// Every intermediate activation of one forward pass.
///
/// `activations[i]` is the input of layer `i`; the last element is the
/// softmax output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    /// Pre-softmax scores.
    pub fn logits(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.activations[self.activations.len() - 1]
    }
}

pub(crate) fn conv1d_forward(
    input: &[f64],
    len_in: usize,
    (in_ch, out_ch, kernel, stride): (usize, usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let len_out = (len_in - kernel) / stride + 1;
    let mut out = vec![0.0; out_ch * len_out];
    for o in 0..out_ch {
        let row = &mut out[o * len_out..(o + 1) * len_out];
        row.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..in_ch {
            let w = &weights[(o * in_ch + c) * kernel..][..kernel];
            let x = &input[c * len_in..(c + 1) * len_in];
            for (t, acc) in row.iter_mut().enumerate() {
                let seg = &x[t * stride..t * stride + kernel];
                *acc += w.iter().zip(seg).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    out
}

pub(crate) fn dense_forward(input: &[f64], out_dim: usize, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let in_dim = input.len();
    (0..out_dim)
        .map(|k| bias[k] + weights[k * in_dim..(k + 1) * in_dim].iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl ModelSpec {
    pub fn check_input(&self, input: &Tensor) -> Result<(), ModelError> {
        let expected = self.input_shape().dims();
        if input.shape() != expected.as_slice() {
            return Err(ModelError::InputShapeMismatch { expected, found: input.shape().to_vec() });
        }
        Ok(())
    }

    /// Runs the network and keeps every activation.
    pub fn forward(&self, input: &Tensor) -> Result<Trace, ModelError> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input.data()))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers().len() + 1);
        activations.push(input.to_vec());
        let mut shape = self.input_shape();
        for (i, layer) in self.layers().iter().enumerate() {
            let x = activations.last().expect("non-empty");
            let y = match (layer, shape) {
                (Layer::Conv1d { in_channels, out_channels, kernel, stride, weights, bias }, ActShape::Seq(_, len)) => {
                    conv1d_forward(x, len, (*in_channels, *out_channels, *kernel, *stride), weights, bias)
                }
                (Layer::Relu, _) => x.iter().map(|v| v.max(0.0)).collect(),
                (Layer::GlobalAveragePool, ActShape::Seq(c, len)) => {
                    (0..c).map(|ch| x[ch * len..(ch + 1) * len].iter().sum::<f64>() / len as f64).collect()
                }
                (Layer::Dense { out_dim, weights, bias, .. }, _) => dense_forward(x, *out_dim, weights, bias),
                (Layer::Softmax, _) => softmax(x),
                _ => unreachable!("shapes validated at construction"),
            };
            shape = self.output_shape(i);
            activations.push(y);
        }
        Trace { activations }
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward(input)?.logits().to_vec())
    }
}

/// Stage prediction for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prediction_id: String,
    pub window_id: String,
    pub patient_id: String,
    pub session_id: String,
    pub window_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
    pub class_labels: Vec<Stage>,
    pub predicted_index: usize,
    pub predicted_stage: Stage,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
}

impl Prediction {
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.predicted_index]
    }

    /// Probability-weighted stage.
    pub fn expected_stage(&self) -> f64 {
        self.probabilities.iter().zip(&self.class_labels).map(|(p, s)| p * s.value()).sum()
    }
}

/// Deterministic identifier of the prediction of `model_id` on a window.
pub fn prediction_id(window: &GaitWindow, model_id: &str) -> String {
    format!(
        "{}.{}.w{}.{}",
        window.patient_id,
        window.session_id,
        window.window_index,
        &model_id[..model_id.len().min(12)]
    )
}

/// Forward inference on one window.
pub fn predict(model: &ModelSpec, window: &GaitWindow) -> Result<Prediction, ModelError> {
    let trace = model.forward(&window.samples)?;
    let probabilities = trace.probabilities().to_vec();
    let predicted_index = argmax(&probabilities);
    Ok(Prediction {
        prediction_id: prediction_id(window, model.model_id()),
        window_id: window.window_id(),
        patient_id: window.patient_id.clone(),
        session_id: window.session_id.clone(),
        window_index: window.window_index,
        start_s: window.start_s,
        end_s: window.end_s,
        logits: trace.logits().to_vec(),
        probabilities,
        class_labels: model.class_labels().to_vec(),
        predicted_index,
        predicted_stage: model.class_labels()[predicted_index],
        model_id: model.model_id().to_string(),
        created_at: Utc::now(),
    })
}
