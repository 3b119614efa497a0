//! Portable 1D-CNN: model documents, deterministic inference, analytic
//! gradients and seeded mini-batch training. All arithmetic is `f64`.

mod backward;
mod forward;
mod spec;
mod tensor;
mod train;

pub use backward::{gradient, ParamGrads};
pub use forward::{argmax, predict, prediction_id, softmax, Prediction, Trace};
pub use spec::{
    load_model, save_model, ActShape, Architecture, Layer, ModelSpec, REFERENCE_INPUT_CHANNELS, REFERENCE_INPUT_LENGTH,
};
pub use tensor::Tensor;
pub use train::{evaluate, train, Example, Hyper, TrainReport};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("layer {layer_index}: shape mismatch ({detail})")]
    ShapeMismatch { layer_index: usize, detail: String },
    #[error("layer {layer_index}: unknown layer kind {kind:?}")]
    UnknownLayerKind { layer_index: usize, kind: String },
    #[error("layer {layer_index}: non-finite weight")]
    NonFiniteWeight { layer_index: usize },
    #[error("malformed model document: {0}")]
    Malformed(String),
    #[error("input shape {found:?} does not match model input {expected:?}")]
    InputShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor shape {shape:?} does not hold {len} values")]
    TensorShape { shape: Vec<usize>, len: usize },
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("class index {0} out of range")]
    UnknownClass(usize),
    #[error("training data holds fewer than two classes")]
    DegenerateDataset,
    #[error("training loss became non-finite")]
    DivergenceDetected,
    #[error("invalid training hyper-parameters")]
    InvalidHyper,
}

/// The shipped reference network (seeded, untrained), sized for raw Newton
/// inputs.
pub const REFERENCE_MODEL_DOCUMENT: &str = include_str!("../../assets/reference.model");

pub fn reference_model() -> ModelSpec {
    load_model(REFERENCE_MODEL_DOCUMENT).expect("shipped reference model is valid")
}
