//! VGRF ingestion: parsing, fixed-length windowing, per-window gait features
//! and control-cohort normative baselines.

mod baseline;
mod features;
mod parse;
mod record;
mod window;

pub use baseline::{compute_baseline, percentile, Band, Feature, Indicator, NormativeBaseline};
pub use features::{extract_features, FootPair, WindowFeatures, DEFAULT_CONTACT_THRESHOLD_N};
pub use parse::{parse_vgrf, to_vgrf_text};
pub use record::{Channel, Cohort, GaitRecord, RecordMeta, CHANNEL_COUNT};
pub use window::{segment_windows, GaitWindow, DEFAULT_WINDOW_SECONDS};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("row {row}: expected 19 columns, found {found}")]
    BadColumnCount { row: usize, found: usize },
    #[error("row {row}: timestamp does not increase")]
    NonMonotoneTime { row: usize },
    #[error("row {row}, column {col}: not a finite number")]
    NonNumericField { row: usize, col: usize },
    #[error("row {row}: sample interval deviates more than 10% from nominal")]
    IrregularSampling { row: usize },
    #[error("record has {found} channels, expected 18")]
    ChannelCount { found: usize },
    #[error("channel and timestamp lengths differ")]
    LengthMismatch,
    #[error("no control-cohort windows to build a baseline from")]
    EmptyCohort,
}
