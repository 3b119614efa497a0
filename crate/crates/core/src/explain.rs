//! Layer-wise relevance propagation and sensor/segment summaries.
//!
//! Relevance starts at the target logit (pre-softmax) and is pushed back
//! layer by layer. Dense layers always use the ε-rule; conv layers use the
//! ε-rule or the z⁺ rule per [`LrpConfig`]. ReLU passes relevance through
//! unchanged and global average pooling spreads each channel's relevance
//! uniformly over the pooled positions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Channel, GaitWindow};
use crate::model::{ActShape, Layer, ModelError, ModelSpec, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvRule {
    Epsilon,
    ZPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    pub epsilon: f64,
    pub conv_rule: ConvRule,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig { epsilon: DEFAULT_EPSILON, conv_rule: ConvRule::Epsilon }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("layer {0} is not supported by relevance propagation")]
    UnsupportedLayer(usize),
    #[error("epsilon must be positive for the epsilon rule (got {0})")]
    InvalidEpsilon(f64),
}

/// How much of the target logit did not reach the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub target_logit: f64,
    pub total_relevance: f64,
    /// Relevance absorbed by bias terms, summed over layers.
    pub bias_absorbed: f64,
    /// Relevance absorbed by the ε stabilizer, summed over layers.
    pub epsilon_absorbed: f64,
}

impl Conservation {
    pub fn deficit(&self) -> f64 {
        self.target_logit - self.total_relevance
    }
}

/// Input-shaped relevance for one target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub prediction_id: Option<String>,
    pub target_class: usize,
    /// Same shape as the model input, `[channels, samples]`.
    pub values: Tensor,
    pub rule_config: LrpConfig,
    pub start_s: f64,
    pub sample_rate_hz: f64,
    pub conservation: Conservation,
}

impl RelevanceMap {
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn samples(&self) -> usize {
        self.values.shape()[1]
    }

    /// Per-channel sums, each accumulated left to right over time.
    pub fn channel_sums(&self) -> Vec<f64> {
        let n = self.samples();
        self.values.data().chunks(n).map(|row| row.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    /// Summed absolute relevance over all channels in the segment.
    pub mass: f64,
}

/// Sensor- and time-level summary of a relevance map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRelevance {
    pub prediction_id: Option<String>,
    pub channel_sums: Vec<f64>,
    /// Channel indices by descending absolute sum; ties keep index order.
    pub ranking: Vec<usize>,
    pub top_segments: Vec<Segment>,
}

impl SensorRelevance {
    /// Ranked channels, as names when the map has the standard 18 rows.
    pub fn ranked_channel_names(&self) -> Vec<String> {
        self.ranking
            .iter()
            .map(|&i| Channel::from_index(i).map_or_else(|| format!("ch{i}"), |c| c.to_string()))
            .collect()
    }
}

fn stabilize(z: f64, epsilon: f64) -> f64 {
    if z >= 0.0 {
        z + epsilon
    } else {
        z - epsilon
    }
}

/// Relevance of every input element of `window` for `target_class`.
pub fn lrp(
    model: &ModelSpec,
    window: &GaitWindow,
    target_class: usize,
    config: LrpConfig,
) -> Result<RelevanceMap, ExplainError> {
    let mut map = lrp_tensor(model, &window.samples, target_class, config)?;
    map.start_s = window.start_s;
    map.sample_rate_hz = window.sample_rate_hz;
    Ok(map)
}

/// [`lrp`] on a bare input tensor (start 0 s, rate 1 Hz).
pub fn lrp_tensor(
    model: &ModelSpec,
    input: &Tensor,
    target_class: usize,
    config: LrpConfig,
) -> Result<RelevanceMap, ExplainError> {
    if config.epsilon.is_nan()
        || config.epsilon < 0.0
        || (config.epsilon == 0.0 && config.conv_rule == ConvRule::Epsilon)
    {
        return Err(ExplainError::InvalidEpsilon(config.epsilon));
    }
    if target_class >= model.class_count() {
        return Err(ModelError::UnknownClass(target_class).into());
    }
    let trace = model.forward(input)?;
    let layers = model.layers();
    let target_logit = trace.logits()[target_class];
    let mut relevance = vec![0.0; model.class_count()];
    relevance[target_class] = target_logit;
    let mut bias_absorbed = 0.0;
    let mut epsilon_absorbed = 0.0;
    let eps = config.epsilon;

    for i in (0..layers.len() - 1).rev() {
        let a = &trace.activations[i];
        let z = &trace.activations[i + 1];
        let in_shape = if i == 0 { model.input_shape() } else { model.output_shape(i - 1) };
        relevance = match (&layers[i], in_shape) {
            (Layer::Dense { in_dim, out_dim, weights, bias }, _) => {
                let mut r_in = vec![0.0; *in_dim];
                for k in 0..*out_dim {
                    let denom = stabilize(z[k], eps);
                    let s = relevance[k] / denom;
                    bias_absorbed += bias[k] * s;
                    epsilon_absorbed += (denom - z[k]) * s;
                    let row = &weights[k * in_dim..(k + 1) * in_dim];
                    for j in 0..*in_dim {
                        r_in[j] += a[j] * row[j] * s;
                    }
                }
                r_in
            }
            (Layer::Conv1d { in_channels, out_channels, kernel, stride, weights, bias }, ActShape::Seq(_, len)) => {
                let (c_in, c_out, k, st) = (*in_channels, *out_channels, *kernel, *stride);
                let len_out = (len - k) / st + 1;
                let zplus = config.conv_rule == ConvRule::ZPlus;
                let mut r_in = vec![0.0; c_in * len];
                for o in 0..c_out {
                    for t in 0..len_out {
                        let r = relevance[o * len_out + t];
                        if r == 0.0 {
                            continue;
                        }
                        let off = t * st;
                        let zo = if zplus {
                            let mut acc = 0.0;
                            for c in 0..c_in {
                                let w = &weights[(o * c_in + c) * k..][..k];
                                let x = &a[c * len + off..][..k];
                                acc += w.iter().zip(x).map(|(w, x)| w.max(0.0) * x).sum::<f64>();
                            }
                            acc
                        } else {
                            z[o * len_out + t]
                        };
                        let denom = stabilize(zo, eps);
                        let s = r / denom;
                        if !zplus {
                            bias_absorbed += bias[o] * s;
                        }
                        epsilon_absorbed += (denom - zo) * s;
                        for c in 0..c_in {
                            let w = &weights[(o * c_in + c) * k..][..k];
                            let base = c * len + off;
                            for u in 0..k {
                                let wu = if zplus { w[u].max(0.0) } else { w[u] };
                                r_in[base + u] += a[base + u] * wu * s;
                            }
                        }
                    }
                }
                r_in
            }
            (Layer::Relu, _) => relevance,
            (Layer::GlobalAveragePool, ActShape::Seq(c, len)) => {
                let mut r_in = vec![0.0; c * len];
                for ch in 0..c {
                    let share = relevance[ch] / len as f64;
                    r_in[ch * len..(ch + 1) * len].iter_mut().for_each(|v| *v = share);
                }
                r_in
            }
            _ => return Err(ExplainError::UnsupportedLayer(i)),
        };
    }

    let values = Tensor::new(input.shape().to_vec(), relevance).map_err(ExplainError::Model)?;
    let total_relevance = values.sum();
    Ok(RelevanceMap {
        prediction_id: None,
        target_class,
        values,
        rule_config: config,
        start_s: 0.0,
        sample_rate_hz: 1.0,
        conservation: Conservation { target_logit, total_relevance, bias_absorbed, epsilon_absorbed },
    })
}

/// Channel sums, stable ranking and the `k` most relevant time bins of
/// `segment_seconds` each (the last bin may be shorter).
pub fn aggregate_relevance(map: &RelevanceMap, k: usize, segment_seconds: f64) -> SensorRelevance {
    let channel_sums = map.channel_sums();
    let mut ranking: Vec<usize> = (0..channel_sums.len()).collect();
    ranking.sort_by(|&a, &b| channel_sums[b].abs().total_cmp(&channel_sums[a].abs()));

    let n = map.samples();
    let bin = ((segment_seconds * map.sample_rate_hz).round() as usize).clamp(1, n);
    let bins = n.div_ceil(bin);
    let mut masses = vec![0.0; bins];
    for row in map.values.data().chunks(n) {
        for (t, v) in row.iter().enumerate() {
            masses[t / bin] += v.abs();
        }
    }
    let mut order: Vec<usize> = (0..bins).collect();
    order.sort_by(|&a, &b| masses[b].total_cmp(&masses[a]));
    let top_segments = order
        .into_iter()
        .take(k.max(1))
        .map(|b| Segment {
            start_s: map.start_s + (b * bin) as f64 / map.sample_rate_hz,
            end_s: map.start_s + ((b + 1) * bin).min(n) as f64 / map.sample_rate_hz,
            mass: masses[b],
        })
        .collect();

    SensorRelevance { prediction_id: map.prediction_id.clone(), channel_sums, ranking, top_segments }
}

/// Export document consumed by the dashboard heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceExport {
    pub prediction_id: Option<String>,
    pub target_class: usize,
    pub shape: Vec<usize>,
    pub rule_config: LrpConfig,
    pub channel_names: Vec<String>,
    pub channel_sums: Vec<f64>,
    pub ranking: Vec<usize>,
    pub top_segments: Vec<Segment>,
    pub conservation: Conservation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

pub fn export_relevance(map: &RelevanceMap, summary: &SensorRelevance, include_matrix: bool) -> RelevanceExport {
    let n = map.samples();
    RelevanceExport {
        prediction_id: map.prediction_id.clone(),
        target_class: map.target_class,
        shape: map.values.shape().to_vec(),
        rule_config: map.rule_config,
        channel_names: (0..map.channels())
            .map(|i| Channel::from_index(i).map_or_else(|| format!("ch{i}"), |c| c.to_string()))
            .collect(),
        channel_sums: summary.channel_sums.clone(),
        ranking: summary.ranking.clone(),
        top_segments: summary.top_segments.clone(),
        conservation: map.conservation,
        matrix: include_matrix.then(|| map.values.data().chunks(n).map(<[f64]>::to_vec).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelSpec};
    use crate::stage::Stage;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_model(rows: Vec<f64>, in_dim: usize, out_dim: usize) -> ModelSpec {
        ModelSpec::new(
            vec![Layer::Dense { in_dim, out_dim, weights: rows, bias: vec![0.0; out_dim] }, Layer::Softmax],
            (0..out_dim).map(|i| Stage(i as f64)).collect(),
            1,
            in_dim,
        )
        .unwrap()
    }

    fn window(rng: &mut ChaCha8Rng, c: usize, l: usize) -> Tensor {
        Tensor::new(vec![c, l], (0..c * l).map(|_| rng.random_range(0.0..800.0)).collect()).unwrap()
    }

    /// Straightforward per-layer re-implementation that recomputes every
    /// pre-activation from its definition instead of reusing a forward
    /// trace.
    fn naive_lrp(model: &ModelSpec, x: &[f64], target: usize, eps: f64, zplus: bool) -> Vec<f64> {
        let mut acts: Vec<(Vec<f64>, usize, usize)> = vec![(x.to_vec(), model.input_channels(), model.input_length())];
        for layer in model.layers() {
            let (a, c, l) = acts.last().unwrap().clone();
            let next = match layer {
                Layer::Conv1d { out_channels, kernel, stride, weights, bias, .. } => {
                    let lo = (l - kernel) / stride + 1;
                    let mut y = vec![0.0; out_channels * lo];
                    for o in 0..*out_channels {
                        for t in 0..lo {
                            let mut s = bias[o];
                            for ci in 0..c {
                                for u in 0..*kernel {
                                    s += weights[o * c * kernel + ci * kernel + u] * a[ci * l + t * stride + u];
                                }
                            }
                            y[o * lo + t] = s;
                        }
                    }
                    (y, *out_channels, lo)
                }
                Layer::Relu => (a.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(), c, l),
                Layer::GlobalAveragePool => {
                    ((0..c).map(|ci| a[ci * l..(ci + 1) * l].iter().sum::<f64>() / l as f64).collect(), c, 1)
                }
                Layer::Dense { in_dim, out_dim, weights, bias } => {
                    let y = (0..*out_dim)
                        .map(|k| bias[k] + (0..*in_dim).map(|j| weights[k * in_dim + j] * a[j]).sum::<f64>())
                        .collect();
                    (y, *out_dim, 1)
                }
                Layer::Softmax => (a.clone(), c, l),
            };
            acts.push(next);
        }
        let n = model.layers().len();
        let logits = &acts[n - 1].0;
        let mut r = vec![0.0; logits.len()];
        r[target] = logits[target];
        for i in (0..n - 1).rev() {
            let (a, c, l) = &acts[i];
            let z = &acts[i + 1].0;
            r = match &model.layers()[i] {
                Layer::Relu => r,
                Layer::GlobalAveragePool => (0..c * l).map(|idx| r[idx / l] / *l as f64).collect(),
                Layer::Dense { in_dim, out_dim, weights, .. } => (0..*in_dim)
                    .map(|j| {
                        (0..*out_dim)
                            .map(|k| {
                                a[j] * weights[k * in_dim + j] * r[k]
                                    / (z[k] + eps * if z[k] >= 0.0 { 1.0 } else { -1.0 })
                            })
                            .sum()
                    })
                    .collect(),
                Layer::Conv1d { out_channels, kernel, stride, weights, .. } => {
                    let lo = (l - kernel) / stride + 1;
                    let mut out = vec![0.0; c * l];
                    for o in 0..*out_channels {
                        for t in 0..lo {
                            let w = |ci: usize, u: usize| {
                                let v = weights[o * c * kernel + ci * kernel + u];
                                if zplus {
                                    v.max(0.0)
                                } else {
                                    v
                                }
                            };
                            let zo = if zplus {
                                (0..*c)
                                    .flat_map(|ci| (0..*kernel).map(move |u| (ci, u)))
                                    .map(|(ci, u)| w(ci, u) * a[ci * l + t * stride + u])
                                    .sum::<f64>()
                            } else {
                                z[o * lo + t]
                            };
                            let denom = zo + eps * if zo >= 0.0 { 1.0 } else { -1.0 };
                            for ci in 0..*c {
                                for u in 0..*kernel {
                                    let idx = ci * l + t * stride + u;
                                    out[idx] += a[idx] * w(ci, u) * r[o * lo + t] / denom;
                                }
                            }
                        }
                    }
                    out
                }
                Layer::Softmax => unreachable!(),
            };
        }
        r
    }

    #[test]
    fn single_dense_epsilon_rule() {
        let m = dense_model(vec![1.0, 3.0, 0.0, 0.0], 2, 2);
        let x = Tensor::new(vec![1, 2], vec![2.0, 2.0]).unwrap();
        let cfg = LrpConfig { epsilon: 1e-12, conv_rule: ConvRule::Epsilon };
        let map = lrp_tensor(&m, &x, 0, cfg).unwrap();
        assert_eq!(map.conservation.target_logit, 8.0);
        assert!((map.values.data()[0] - 2.0).abs() < 1e-9);
        assert!((map.values.data()[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn zero_input_bias_free_gives_zero_relevance() {
        let m = Architecture::small(3, 30, vec![(4, 3, 1), (5, 3, 2)], 3).build(7, 0.0, 1.0).unwrap();
        let x = Tensor::zeros(vec![3, 30]);
        for rule in [ConvRule::Epsilon, ConvRule::ZPlus] {
            let map = lrp_tensor(&m, &x, 1, LrpConfig { epsilon: 1e-6, conv_rule: rule }).unwrap();
            assert!(map.values.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn matches_naive_reimplementation_on_reference_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..3 {
            let m = Architecture::reference().build(seed, 0.0, 0.002).unwrap();
            let x = window(&mut rng, 18, 1000);
            for (rule, zplus) in [(ConvRule::Epsilon, false), (ConvRule::ZPlus, true)] {
                let map = lrp_tensor(&m, &x, 2, LrpConfig { epsilon: 1e-6, conv_rule: rule }).unwrap();
                let oracle = naive_lrp(&m, x.data(), 2, 1e-6, zplus);
                let scale = map.values.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                for (a, b) in map.values.data().iter().zip(&oracle) {
                    assert!((a - b).abs() <= 1e-9 * scale.max(1e-300), "{a} vs {b}");
                }
                let logit = map.conservation.target_logit;
                assert!((map.total() - logit).abs() <= 1e-3 * logit.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bias_deficit_is_reported() {
        let m = Architecture::small(2, 20, vec![(3, 3, 1)], 2).build(5, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = window(&mut rng, 2, 20);
        let map = lrp_tensor(&m, &x, 0, LrpConfig::default()).unwrap();
        let c = map.conservation;
        let accounted = c.total_relevance + c.bias_absorbed + c.epsilon_absorbed;
        assert!((accounted - c.target_logit).abs() <= 1e-9 * c.target_logit.abs().max(1.0));
    }

    #[test]
    fn class_sensitivity() {
        let m = Architecture::small(3, 25, vec![(4, 3, 1)], 3).build(21, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = window(&mut rng, 3, 25);
        let a = lrp_tensor(&m, &x, 0, LrpConfig::default()).unwrap();
        let b = lrp_tensor(&m, &x, 1, LrpConfig::default()).unwrap();
        assert_ne!(a.conservation.target_logit, b.conservation.target_logit);
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn epsilon_rule_requires_positive_epsilon() {
        let m = dense_model(vec![1.0, 1.0], 2, 1);
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let cfg = LrpConfig { epsilon: 0.0, conv_rule: ConvRule::Epsilon };
        assert_eq!(lrp_tensor(&m, &x, 0, cfg), Err(ExplainError::InvalidEpsilon(0.0)));
    }

    fn map_from(values: Vec<f64>, channels: usize, samples: usize, rate: f64) -> RelevanceMap {
        RelevanceMap {
            prediction_id: None,
            target_class: 0,
            values: Tensor::new(vec![channels, samples], values).unwrap(),
            rule_config: LrpConfig::default(),
            start_s: 0.0,
            sample_rate_hz: rate,
            conservation: Conservation {
                target_logit: 0.0,
                total_relevance: 0.0,
                bias_absorbed: 0.0,
                epsilon_absorbed: 0.0,
            },
        }
    }

    #[test]
    fn concentrated_relevance() {
        let mut v = vec![0.0; 18 * 1000];
        for t in 300..400 {
            v[5 * 1000 + t] = 0.5;
        }
        let s = aggregate_relevance(&map_from(v, 18, 1000, 100.0), 3, 1.0);
        assert_eq!(s.ranking[0], 5);
        assert_eq!((s.top_segments[0].start_s, s.top_segments[0].end_s), (3.0, 4.0));
        assert_eq!(s.top_segments.len(), 3);
    }

    #[test]
    fn uniform_map_ranks_by_index() {
        let s = aggregate_relevance(&map_from(vec![0.25; 18 * 1000], 18, 1000, 100.0), 3, 1.0);
        assert!(s.channel_sums.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.ranking, (0..18).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn top_bins_match_exhaustive_scan(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, n) = (4, 230);
            let v: Vec<f64> = (0..c * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let map = map_from(v.clone(), c, n, 20.0);
            let s = aggregate_relevance(&map, k, 1.0);
            // Exhaustive oracle: every bin's mass, then repeated max-selection.
            let bins: Vec<(usize, f64)> = (0..n.div_ceil(20))
                .map(|b| (b, (0..c).flat_map(|ch| (b * 20..((b + 1) * 20).min(n)).map(move |t| (ch, t))).map(|(ch, t)| v[ch * n + t].abs()).sum()))
                .collect();
            let mut remaining = bins.clone();
            for seg in &s.top_segments {
                let (pos, &(b, mass)) = remaining.iter().enumerate()
                    .fold(None::<(usize, &(usize, f64))>, |best, (i, e)| match best {
                        Some((_, bm)) if bm.1 >= e.1 => best,
                        _ => Some((i, e)),
                    }).unwrap();
                prop_assert_eq!(seg.start_s, b as f64);
                prop_assert!((seg.mass - mass).abs() < 1e-9);
                remaining.remove(pos);
            }
            prop_assert_eq!(s.channel_sums, map.channel_sums());
        }

        #[test]
        fn scale_covariance_bias_free(seed in 0u64..1000, c in 0.1f64..5.0) {
            let m = Architecture::small(2, 16, vec![(3, 3, 1)], 2).build(seed, 0.0, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let x = window(&mut rng, 2, 16);
            let base_map = lrp_tensor(&m, &x, 0, LrpConfig::default()).unwrap();
            let base = base_map.total();
            let z = base_map.conservation.target_logit;
            let mut layers = m.layers().to_vec();
            let last = m.last_parameterized().unwrap();
            if let Some((w, _)) = layers[last].params_mut() {
                w.iter_mut().for_each(|v| *v *= c);
            }
            let scaled = lrp_tensor(&m.with_layers(layers).unwrap(), &x, 0, LrpConfig::default()).unwrap().total();
            // Only the top stabilizer sees the scaled logit, so the exact
            // ratio is c^2 (z + e) / (c z + e) with e the signed epsilon.
            let e = if z >= 0.0 { 1e-6 } else { -1e-6 };
            let expected = base * c * c * (z + e) / (c * z + e);
            prop_assert!((scaled - expected).abs() <= 1e-9 * expected.abs().max(1e-12));
        }
    }
}
