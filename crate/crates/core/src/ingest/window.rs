use serde::{Deserialize, Serialize};

use super::record::{Channel, GaitRecord, CHANNEL_COUNT};
use crate::model::Tensor;

pub const DEFAULT_WINDOW_SECONDS: f64 = 10.0;

/// A contiguous fixed-length slice of a recording, as an 18 × N matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitWindow {
    pub patient_id: String,
    pub session_id: String,
    pub window_index: usize,
    /// Seconds from the start of the recording.
    pub start_s: f64,
    pub end_s: f64,
    pub sample_rate_hz: f64,
    /// Shape `[18, N]`, channel-major.
    pub samples: Tensor,
}

impl GaitWindow {
    pub fn len(&self) -> usize {
        self.samples.shape().get(1).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        let n = self.len();
        let start = channel.index() * n;
        &self.samples.data()[start..start + n]
    }

    /// Stable identifier of the window within its session.
    pub fn window_id(&self) -> String {
        format!("{}/{}/w{}", self.patient_id, self.session_id, self.window_index)
    }
}

/// Splits a recording into non-overlapping, left-aligned windows of
/// `round(window_seconds × sample_rate)` samples. The incomplete tail is
/// dropped; a recording shorter than one window yields no windows.
pub fn segment_windows(record: &GaitRecord, window_seconds: f64) -> Vec<GaitWindow> {
    if window_seconds.is_nan() || window_seconds <= 0.0 {
        return Vec::new();
    }
    let n = (window_seconds * record.sample_rate_hz()).round() as usize;
    if n == 0 {
        return Vec::new();
    }
    let count = record.len() / n;
    (0..count)
        .map(|k| {
            let mut data = Vec::with_capacity(CHANNEL_COUNT * n);
            for series in record.channels() {
                data.extend_from_slice(&series[k * n..(k + 1) * n]);
            }
            GaitWindow {
                patient_id: record.patient_id().to_string(),
                session_id: record.session_id().to_string(),
                window_index: k,
                start_s: k as f64 * window_seconds,
                end_s: (k + 1) as f64 * window_seconds,
                sample_rate_hz: record.sample_rate_hz(),
                samples: Tensor::new(vec![CHANNEL_COUNT, n], data).expect("window shape matches data"),
            }
        })
        .collect()
}
