//! Synthetic VGRF walks for demos, tests and benchmarks.
//!
//! Each foot loads a half-sine force pulse during stance, spread over its
//! eight sensors with fixed weights; the right foot lags by half a stride.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{GaitRecord, IngestError, RecordMeta, CHANNEL_COUNT};
use crate::model::{Example, Tensor};

/// Share of the per-foot force carried by each sensor (heel to toe).
const SENSOR_WEIGHTS: [f64; 8] = [0.18, 0.16, 0.12, 0.10, 0.10, 0.12, 0.12, 0.10];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitProfile {
    pub stride_s: f64,
    pub stance_fraction: f64,
    pub peak_force_n: f64,
    /// Half-width of uniform additive noise per sensor.
    pub noise_n: f64,
}

impl GaitProfile {
    pub fn healthy() -> Self {
        GaitProfile { stride_s: 1.05, stance_fraction: 0.60, peak_force_n: 750.0, noise_n: 4.0 }
    }

    /// Slower, shuffling pattern with lower peaks and longer stance.
    pub fn parkinsonian() -> Self {
        GaitProfile { stride_s: 1.45, stance_fraction: 0.68, peak_force_n: 430.0, noise_n: 4.0 }
    }
}

/// Generates `[18][n]` channels for `duration_s` at `rate_hz`.
pub fn synthesize(profile: &GaitProfile, duration_s: f64, rate_hz: f64, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = (duration_s * rate_hz).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase0 = rng.random_range(0.0..profile.stride_s);
    let timestamps: Vec<f64> = (0..n).map(|i| i as f64 / rate_hz).collect();
    let mut channels = vec![vec![0.0; n]; CHANNEL_COUNT];
    let stance = profile.stance_fraction * profile.stride_s;
    for (i, &t) in timestamps.iter().enumerate() {
        for (foot, offset) in [(0usize, 0.0), (1usize, profile.stride_s / 2.0)] {
            let phi = (t + phase0 + offset).rem_euclid(profile.stride_s);
            let force =
                if phi < stance { profile.peak_force_n * (std::f64::consts::PI * phi / stance).sin() } else { 0.0 };
            let mut total = 0.0;
            for (k, w) in SENSOR_WEIGHTS.iter().enumerate() {
                let noise =
                    if profile.noise_n > 0.0 { rng.random_range(-profile.noise_n..profile.noise_n) } else { 0.0 };
                let v = (w * force + noise).max(0.0);
                channels[foot * 8 + k][i] = v;
                total += v;
            }
            channels[16 + foot][i] = total;
        }
    }
    (timestamps, channels)
}

pub fn synthetic_record(
    meta: RecordMeta,
    profile: &GaitProfile,
    duration_s: f64,
    rate_hz: f64,
    seed: u64,
) -> Result<GaitRecord, IngestError> {
    let (timestamps, channels) = synthesize(profile, duration_s, rate_hz, seed);
    GaitRecord::new(meta, rate_hz, timestamps, channels)
}

/// Two-class training set of 10 s windows at 100 Hz: healthy walks labelled
/// `classes.0`, parkinsonian walks labelled `classes.1`, alternating, with
/// per-window jitter on stride, stance and peak force. Forces are in kN so
/// that plain SGD is well conditioned.
pub fn separable_examples(count: usize, classes: (usize, usize), seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (mut profile, class_index) =
                if i % 2 == 0 { (GaitProfile::healthy(), classes.0) } else { (GaitProfile::parkinsonian(), classes.1) };
            profile.stride_s *= rng.random_range(0.95..1.05);
            profile.stance_fraction *= rng.random_range(0.97..1.03);
            profile.peak_force_n *= rng.random_range(0.93..1.07);
            let (_, channels) = synthesize(&profile, 10.0, 100.0, rng.random());
            let len = channels[0].len();
            Example {
                input: Tensor::new(vec![CHANNEL_COUNT, len], channels.concat().iter().map(|v| v * 1e-3).collect())
                    .expect("consistent shape"),
                class_index,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_features, segment_windows, Cohort, DEFAULT_CONTACT_THRESHOLD_N};

    fn meta() -> RecordMeta {
        RecordMeta { patient_id: "p".into(), session_id: "s".into(), cohort: Cohort::Control }
    }

    #[test]
    fn totals_are_sensor_sums() {
        let (_, ch) = synthesize(&GaitProfile::healthy(), 3.0, 100.0, 1);
        for (i, total) in ch[16].iter().enumerate() {
            let left: f64 = ch[..8].iter().map(|c| c[i]).sum();
            assert!((left - total).abs() < 1e-9);
        }
    }

    #[test]
    fn features_track_profile() {
        let profile = GaitProfile { noise_n: 0.0, ..GaitProfile::healthy() };
        let record = synthetic_record(meta(), &profile, 30.0, 100.0, 3).unwrap();
        let w = &segment_windows(&record, 10.0)[1];
        let f = extract_features(w, DEFAULT_CONTACT_THRESHOLD_N);
        assert!((f.stride_time_s.left - profile.stride_s).abs() < 0.03, "{f:?}");
        assert!((f.peak_force_n.left - profile.peak_force_n).abs() < 5.0);
    }

    #[test]
    fn examples_alternate_classes() {
        let ex = separable_examples(4, (0, 3), 9);
        assert_eq!(ex.iter().map(|e| e.class_index).collect::<Vec<_>>(), [0, 3, 0, 3]);
        assert_eq!(ex[0].input.shape(), &[18, 1000]);
    }
}
