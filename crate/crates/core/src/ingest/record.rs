use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

pub const CHANNEL_COUNT: usize = 18;

/// The 18 model channels: eight sensors under each foot plus per-foot totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    L7,
    L8,
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    LTotal,
    RTotal,
}

impl Channel {
    pub const ALL: [Channel; CHANNEL_COUNT] = [
        Channel::L1,
        Channel::L2,
        Channel::L3,
        Channel::L4,
        Channel::L5,
        Channel::L6,
        Channel::L7,
        Channel::L8,
        Channel::R1,
        Channel::R2,
        Channel::R3,
        Channel::R4,
        Channel::R5,
        Channel::R6,
        Channel::R7,
        Channel::R8,
        Channel::LTotal,
        Channel::RTotal,
    ];

    /// Row index of this channel in window matrices.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Channel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; CHANNEL_COUNT] = [
            "L1", "L2", "L3", "L4", "L5", "L6", "L7", "L8", "R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8", "LTotal",
            "RTotal",
        ];
        NAMES[self.index()]
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown channel {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cohort {
    PD,
    Control,
}

impl FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pd" => Ok(Cohort::PD),
            "control" | "co" => Ok(Cohort::Control),
            _ => Err(format!("unknown cohort {s:?} (expected pd or control)")),
        }
    }
}

/// Descriptors attached to a recording at ingest time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub patient_id: String,
    pub session_id: String,
    pub cohort: Cohort,
}

/// A parsed multichannel VGRF recording.
///
/// All 18 channel series share the timestamp series' length; forces are
/// finite and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitRecord {
    meta: RecordMeta,
    sample_rate_hz: f64,
    timestamps: Vec<f64>,
    channels: Vec<Vec<f64>>,
    clamped_count: usize,
}

impl GaitRecord {
    /// Builds a record from already-validated series. Negative forces are
    /// clamped to zero and counted.
    pub fn new(
        meta: RecordMeta,
        sample_rate_hz: f64,
        timestamps: Vec<f64>,
        mut channels: Vec<Vec<f64>>,
    ) -> Result<Self, IngestError> {
        if channels.len() != CHANNEL_COUNT {
            return Err(IngestError::ChannelCount { found: channels.len() });
        }
        if timestamps.is_empty() {
            return Err(IngestError::EmptyInput);
        }
        if channels.iter().any(|c| c.len() != timestamps.len()) {
            return Err(IngestError::LengthMismatch);
        }
        let mut clamped_count = 0;
        for (row, value) in channels.iter_mut().flat_map(|c| c.iter_mut().enumerate()) {
            if !value.is_finite() {
                return Err(IngestError::NonNumericField { row: row + 1, col: 0 });
            }
            if *value < 0.0 {
                *value = 0.0;
                clamped_count += 1;
            }
        }
        Ok(GaitRecord { meta, sample_rate_hz, timestamps, channels, clamped_count })
    }

    pub fn meta(&self) -> &RecordMeta {
        &self.meta
    }

    pub fn patient_id(&self) -> &str {
        &self.meta.patient_id
    }

    pub fn session_id(&self) -> &str {
        &self.meta.session_id
    }

    pub fn cohort(&self) -> Cohort {
        self.meta.cohort
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        &self.channels[channel.index()]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// Number of negative force samples clamped to zero at construction.
    pub fn clamped_count(&self) -> usize {
        self.clamped_count
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Nominal duration, `samples / sample_rate`.
    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}
