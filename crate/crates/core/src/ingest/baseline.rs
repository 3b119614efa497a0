use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::WindowFeatures;
use super::IngestError;

/// Scalar gait features that carry a normative band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    StrideTimeLeft,
    StrideTimeRight,
    StanceFraction,
    Cadence,
    PeakForceLeft,
    PeakForceRight,
    FreezeIndex,
    StepCount,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::StrideTimeLeft,
        Feature::StrideTimeRight,
        Feature::StanceFraction,
        Feature::Cadence,
        Feature::PeakForceLeft,
        Feature::PeakForceRight,
        Feature::FreezeIndex,
        Feature::StepCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::StrideTimeLeft => "stride_time_left",
            Feature::StrideTimeRight => "stride_time_right",
            Feature::StanceFraction => "stance_fraction",
            Feature::Cadence => "cadence",
            Feature::PeakForceLeft => "peak_force_left",
            Feature::PeakForceRight => "peak_force_right",
            Feature::FreezeIndex => "freeze_index",
            Feature::StepCount => "step_count",
        }
    }

    pub fn value(self, f: &WindowFeatures) -> f64 {
        match self {
            Feature::StrideTimeLeft => f.stride_time_s.left,
            Feature::StrideTimeRight => f.stride_time_s.right,
            Feature::StanceFraction => f.stance_fraction,
            Feature::Cadence => f.cadence_steps_per_min,
            Feature::PeakForceLeft => f.peak_force_n.left,
            Feature::PeakForceRight => f.peak_force_n.right,
            Feature::FreezeIndex => f.freeze_index,
            Feature::StepCount => f.step_count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indicator {
    Green,
    Amber,
    Red,
}

/// Percentile band of one feature over control windows.
///
/// The quartiles are kept alongside the 10/50/90 triple because the amber
/// margin is 1.5 × IQR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

impl Band {
    fn from_values(values: &mut [f64]) -> Band {
        values.sort_by(f64::total_cmp);
        Band {
            p10: percentile(values, 0.10),
            p25: percentile(values, 0.25),
            p50: percentile(values, 0.50),
            p75: percentile(values, 0.75),
            p90: percentile(values, 0.90),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.p75 - self.p25
    }

    pub fn classify(&self, x: f64) -> Indicator {
        if (self.p10..=self.p90).contains(&x) {
            return Indicator::Green;
        }
        let margin = 1.5 * self.iqr();
        if (self.p10 - margin..=self.p90 + margin).contains(&x) {
            Indicator::Amber
        } else {
            Indicator::Red
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormativeBaseline {
    pub bands: BTreeMap<Feature, Band>,
    pub window_count: usize,
}

impl NormativeBaseline {
    pub fn band(&self, feature: Feature) -> &Band {
        &self.bands[&feature]
    }

    pub fn classify(&self, feature: Feature, x: f64) -> Indicator {
        self.band(feature).classify(x)
    }

    /// Indicator for every feature of `f`.
    pub fn classify_all(&self, f: &WindowFeatures) -> BTreeMap<Feature, Indicator> {
        Feature::ALL.iter().map(|&feat| (feat, self.classify(feat, feat.value(f)))).collect()
    }
}

/// Linear interpolation between order statistics at rank `p·(n−1)`.
/// `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Builds per-feature percentile bands from control-cohort windows.
pub fn compute_baseline(features: &[WindowFeatures]) -> Result<NormativeBaseline, IngestError> {
    if features.is_empty() {
        return Err(IngestError::EmptyCohort);
    }
    let bands = Feature::ALL
        .iter()
        .map(|&feat| {
            let mut values: Vec<f64> = features.iter().map(|f| feat.value(f)).collect();
            (feat, Band::from_values(&mut values))
        })
        .collect();
    Ok(NormativeBaseline { bands, window_count: features.len() })
}
