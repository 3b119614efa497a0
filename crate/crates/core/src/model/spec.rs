use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ModelError;
use crate::canonical::{sha256_hex, to_canonical};
use crate::stage::{default_class_labels, Stage};

pub const REFERENCE_INPUT_CHANNELS: usize = 18;
pub const REFERENCE_INPUT_LENGTH: usize = 1000;

/// One network layer. Weight arrays are row-major: Conv1d weights are
/// `[out_channels][in_channels][kernel]`, Dense weights `[out_dim][in_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv1d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, weights: Vec<f64>, bias: Vec<f64> },
    Relu,
    GlobalAveragePool,
    Dense { in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64> },
    Softmax,
}

const LAYER_KINDS: [&str; 5] = ["conv1d", "relu", "global_average_pool", "dense", "softmax"];

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d { .. } => "conv1d",
            Layer::Relu => "relu",
            Layer::GlobalAveragePool => "global_average_pool",
            Layer::Dense { .. } => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv1d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv1d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => Some((weights, bias)),
            _ => None,
        }
    }
}

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    /// `[channels, length]`
    Seq(usize, usize),
    Flat(usize),
}

impl ActShape {
    pub fn len(self) -> usize {
        match self {
            ActShape::Seq(c, l) => c * l,
            ActShape::Flat(d) => d,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn dims(self) -> Vec<usize> {
        match self {
            ActShape::Seq(c, l) => vec![c, l],
            ActShape::Flat(d) => vec![d],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    class_labels: Vec<Stage>,
    input_channels: usize,
    input_length: usize,
    layers: Vec<Layer>,
}

/// A validated network with its content-derived identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    layers: Vec<Layer>,
    class_labels: Vec<Stage>,
    input_channels: usize,
    input_length: usize,
    /// Output shape of each layer.
    shapes: Vec<ActShape>,
    model_id: String,
}

impl ModelSpec {
    pub fn new(
        layers: Vec<Layer>,
        class_labels: Vec<Stage>,
        input_channels: usize,
        input_length: usize,
    ) -> Result<Self, ModelError> {
        let shapes = validate(&layers, &class_labels, input_channels, input_length)?;
        let mut spec =
            ModelSpec { layers, class_labels, input_channels, input_length, shapes, model_id: String::new() };
        spec.model_id = sha256_hex(spec.to_document().as_bytes());
        Ok(spec)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn class_labels(&self) -> &[Stage] {
        &self.class_labels
    }

    pub fn class_count(&self) -> usize {
        self.class_labels.len()
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn input_shape(&self) -> ActShape {
        ActShape::Seq(self.input_channels, self.input_length)
    }

    pub fn output_shape(&self, layer: usize) -> ActShape {
        self.shapes[layer]
    }

    /// Lowercase hex SHA-256 of the canonical document.
    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Canonical model document: sorted keys, no whitespace, shortest
    /// round-trip numbers.
    pub fn to_document(&self) -> String {
        to_canonical(&ModelDocument {
            class_labels: self.class_labels.clone(),
            input_channels: self.input_channels,
            input_length: self.input_length,
            layers: self.layers.clone(),
        })
        .expect("finite model serializes")
    }

    /// Rebuilds the spec with new parameters, revalidating.
    pub fn with_layers(&self, layers: Vec<Layer>) -> Result<Self, ModelError> {
        ModelSpec::new(layers, self.class_labels.clone(), self.input_channels, self.input_length)
    }

    /// Index of the last Dense or Conv1d layer.
    pub fn last_parameterized(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.params().is_some())
    }
}

/// Parses and validates a model document.
pub fn load_model(document: &str) -> Result<ModelSpec, ModelError> {
    let value: Value = serde_json::from_str(document).map_err(|e| ModelError::Malformed(e.to_string()))?;
    if let Some(layers) = value.get("layers").and_then(Value::as_array) {
        for (i, layer) in layers.iter().enumerate() {
            let kind = layer.get("kind").and_then(Value::as_str).unwrap_or("");
            if !LAYER_KINDS.contains(&kind) {
                return Err(ModelError::UnknownLayerKind { layer_index: i, kind: kind.to_string() });
            }
        }
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| ModelError::Malformed(e.to_string()))?;
    ModelSpec::new(doc.layers, doc.class_labels, doc.input_channels, doc.input_length)
}

/// Canonical document for `model`; `save_model(&load_model(d)?)` is `d` in
/// canonical form.
pub fn save_model(model: &ModelSpec) -> String {
    model.to_document()
}

fn validate(
    layers: &[Layer],
    class_labels: &[Stage],
    input_channels: usize,
    input_length: usize,
) -> Result<Vec<ActShape>, ModelError> {
    if input_channels == 0 || input_length == 0 {
        return Err(ModelError::ShapeMismatch { layer_index: 0, detail: "empty input shape".into() });
    }
    let mismatch = |layer_index: usize, detail: String| ModelError::ShapeMismatch { layer_index, detail };
    let mut shape = ActShape::Seq(input_channels, input_length);
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        if let Some((w, b)) = layer.params() {
            if w.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteWeight { layer_index: i });
            }
        }
        shape = match (layer, shape) {
            (Layer::Conv1d { in_channels, out_channels, kernel, stride, weights, bias }, ActShape::Seq(c, l)) => {
                if *in_channels != c {
                    return Err(mismatch(i, format!("conv expects {in_channels} channels, got {c}")));
                }
                if *kernel == 0 || *stride == 0 || *out_channels == 0 || *kernel > l {
                    return Err(mismatch(i, format!("kernel {kernel} / stride {stride} invalid for length {l}")));
                }
                if weights.len() != out_channels * in_channels * kernel || bias.len() != *out_channels {
                    return Err(mismatch(i, "conv weight or bias length".into()));
                }
                ActShape::Seq(*out_channels, (l - kernel) / stride + 1)
            }
            (Layer::Conv1d { .. }, ActShape::Flat(_)) => return Err(mismatch(i, "conv after flattening".into())),
            (Layer::Relu, s) => s,
            (Layer::GlobalAveragePool, ActShape::Seq(c, _)) => ActShape::Flat(c),
            (Layer::GlobalAveragePool, ActShape::Flat(_)) => {
                return Err(mismatch(i, "pooling needs a sequence".into()))
            }
            (Layer::Dense { in_dim, out_dim, weights, bias }, s) => {
                if *in_dim != s.len() {
                    return Err(mismatch(i, format!("dense expects {in_dim} inputs, got {}", s.len())));
                }
                if *out_dim == 0 || weights.len() != in_dim * out_dim || bias.len() != *out_dim {
                    return Err(mismatch(i, "dense weight or bias length".into()));
                }
                ActShape::Flat(*out_dim)
            }
            (Layer::Softmax, s) => {
                if i + 1 != layers.len() {
                    return Err(mismatch(i, "softmax must be the final layer".into()));
                }
                if let ActShape::Seq(..) = s {
                    return Err(mismatch(i, "softmax needs a flat input".into()));
                }
                s
            }
        };
        shapes.push(shape);
    }
    if !matches!(layers.last(), Some(Layer::Softmax)) {
        return Err(mismatch(layers.len(), "missing terminal softmax".into()));
    }
    if shape.len() != class_labels.len() || class_labels.is_empty() {
        return Err(mismatch(
            layers.len() - 1,
            format!("{} outputs for {} class labels", shape.len(), class_labels.len()),
        ));
    }
    Ok(shapes)
}

/// Layer dimensions of the reference network:
/// Conv1d(C→16, k7, s3) → ReLU → Conv1d(16→32, k5, s2) → ReLU → GAP →
/// Dense(32→classes) → Softmax.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub input_channels: usize,
    pub input_length: usize,
    pub convs: Vec<(usize, usize, usize)>,
    pub class_labels: Vec<Stage>,
}

impl Architecture {
    pub fn reference() -> Self {
        Architecture {
            input_channels: REFERENCE_INPUT_CHANNELS,
            input_length: REFERENCE_INPUT_LENGTH,
            convs: vec![(16, 7, 3), (32, 5, 2)],
            class_labels: default_class_labels(),
        }
    }

    /// Conv stack `(out_channels, kernel, stride)` per conv layer, each
    /// followed by ReLU, then GAP, Dense and Softmax.
    pub fn small(
        input_channels: usize,
        input_length: usize,
        convs: Vec<(usize, usize, usize)>,
        classes: usize,
    ) -> Self {
        Architecture {
            input_channels,
            input_length,
            convs,
            class_labels: (0..classes).map(|i| Stage(i as f64)).collect(),
        }
    }

    /// He-uniform weights from a seeded ChaCha8 stream. `bias_scale = 0`
    /// yields a bias-free network; `input_gain` scales the first layer's
    /// weights (useful for raw Newton inputs).
    pub fn build(&self, seed: u64, bias_scale: f64, input_gain: f64) -> Result<ModelSpec, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut channels = self.input_channels;
        for (i, &(out, kernel, stride)) in self.convs.iter().enumerate() {
            let fan_in = (channels * kernel) as f64;
            let limit = (6.0 / fan_in).sqrt() * if i == 0 { input_gain } else { 1.0 };
            layers.push(Layer::Conv1d {
                in_channels: channels,
                out_channels: out,
                kernel,
                stride,
                weights: (0..out * channels * kernel).map(|_| rng.random_range(-limit..limit)).collect(),
                bias: (0..out).map(|_| bias_scale * rng.random_range(-1.0..1.0)).collect(),
            });
            layers.push(Layer::Relu);
            channels = out;
        }
        layers.push(Layer::GlobalAveragePool);
        let classes = self.class_labels.len();
        let limit = (6.0 / channels as f64).sqrt();
        layers.push(Layer::Dense {
            in_dim: channels,
            out_dim: classes,
            weights: (0..classes * channels).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: (0..classes).map(|_| bias_scale * rng.random_range(-1.0..1.0)).collect(),
        });
        layers.push(Layer::Softmax);
        ModelSpec::new(layers, self.class_labels.clone(), self.input_channels, self.input_length)
    }
}
