use super::forward::Trace;
use super::spec::{ActShape, Layer, ModelSpec};
use super::{ModelError, Tensor};

/// Per-layer `(weights, bias)` gradients; `None` for parameter-free layers.
pub type ParamGrads = Vec<Option<(Vec<f64>, Vec<f64>)>>;

impl ModelSpec {
    fn layer_input_shape(&self, layer: usize) -> ActShape {
        if layer == 0 {
            self.input_shape()
        } else {
            self.output_shape(layer - 1)
        }
    }

    /// Backpropagates `d_logits` (gradient w.r.t. the pre-softmax scores)
    /// through every layer below the softmax.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        d_logits: &[f64],
        want_params: bool,
        want_input: bool,
    ) -> (Option<Vec<f64>>, ParamGrads) {
        let layers = self.layers();
        let mut params: ParamGrads = vec![None; layers.len()];
        let mut grad = d_logits.to_vec();
        // The terminal softmax is skipped: gradients start at its input.
        for i in (0..layers.len() - 1).rev() {
            let a = &trace.activations[i];
            let need_input = i > 0 || want_input;
            let shape = self.layer_input_shape(i);
            grad = match (&layers[i], shape) {
                (Layer::Conv1d { in_channels, out_channels, kernel, stride, weights, .. }, ActShape::Seq(_, len)) => {
                    let (c_in, c_out, k, s) = (*in_channels, *out_channels, *kernel, *stride);
                    let len_out = (len - k) / s + 1;
                    let mut d_in = if need_input { vec![0.0; c_in * len] } else { Vec::new() };
                    let mut d_w = if want_params { vec![0.0; weights.len()] } else { Vec::new() };
                    let mut d_b = if want_params { vec![0.0; c_out] } else { Vec::new() };
                    for o in 0..c_out {
                        let g = &grad[o * len_out..(o + 1) * len_out];
                        if want_params {
                            d_b[o] = g.iter().sum();
                        }
                        for c in 0..c_in {
                            let base = (o * c_in + c) * k;
                            let x = &a[c * len..(c + 1) * len];
                            for (t, &gt) in g.iter().enumerate() {
                                if gt == 0.0 {
                                    continue;
                                }
                                let off = t * s;
                                if want_params {
                                    for u in 0..k {
                                        d_w[base + u] += gt * x[off + u];
                                    }
                                }
                                if need_input {
                                    let w = &weights[base..base + k];
                                    let dx = &mut d_in[c * len + off..c * len + off + k];
                                    for u in 0..k {
                                        dx[u] += gt * w[u];
                                    }
                                }
                            }
                        }
                    }
                    if want_params {
                        params[i] = Some((d_w, d_b));
                    }
                    d_in
                }
                (Layer::Relu, _) => grad.iter().zip(a).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                (Layer::GlobalAveragePool, ActShape::Seq(c, len)) => {
                    let mut d_in = vec![0.0; c * len];
                    for ch in 0..c {
                        let share = grad[ch] / len as f64;
                        d_in[ch * len..(ch + 1) * len].iter_mut().for_each(|v| *v = share);
                    }
                    d_in
                }
                (Layer::Dense { in_dim, out_dim, weights, .. }, _) => {
                    let (n_in, n_out) = (*in_dim, *out_dim);
                    if want_params {
                        let mut d_w = vec![0.0; n_in * n_out];
                        for k in 0..n_out {
                            for j in 0..n_in {
                                d_w[k * n_in + j] = grad[k] * a[j];
                            }
                        }
                        params[i] = Some((d_w, grad.clone()));
                    }
                    if need_input {
                        let mut d_in = vec![0.0; n_in];
                        for k in 0..n_out {
                            let row = &weights[k * n_in..(k + 1) * n_in];
                            for j in 0..n_in {
                                d_in[j] += grad[k] * row[j];
                            }
                        }
                        d_in
                    } else {
                        Vec::new()
                    }
                }
                _ => unreachable!("shapes validated at construction"),
            };
        }
        let input = if want_input { Some(grad) } else { None };
        (input, params)
    }
}

/// Analytic ∂logit[target_class]/∂input, same shape as the input.
pub fn gradient(model: &ModelSpec, input: &Tensor, target_class: usize) -> Result<Tensor, ModelError> {
    if target_class >= model.class_count() {
        return Err(ModelError::UnknownClass(target_class));
    }
    let trace = model.forward(input)?;
    let mut seed = vec![0.0; model.class_count()];
    seed[target_class] = 1.0;
    let (d_in, _) = model.backward(&trace, &seed, false, true);
    Tensor::new(input.shape().to_vec(), d_in.expect("input gradient requested"))
}
