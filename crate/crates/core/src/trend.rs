//! Longitudinal severity series, OLS forecast and medication overlay.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Feature, WindowFeatures};
use crate::model::Prediction;

pub const FORECAST_METHOD: &str = "ols_session_ordinal";
pub const PRE_BASELINE: &str = "pre-baseline";
const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPoint {
    pub session_id: String,
    pub date: NaiveDate,
    /// Mean over windows of the probability-weighted stage.
    pub severity: f64,
    pub mean_features: BTreeMap<Feature, f64>,
    pub window_count: usize,
}

/// One session's inputs to [`session_series`].
#[derive(Debug, Clone, Copy)]
pub struct SessionInput<'a> {
    pub session_id: &'a str,
    pub date: NaiveDate,
    pub predictions: &'a [Prediction],
    pub features: &'a [WindowFeatures],
}

/// One point per session with at least one prediction, ordered by date then
/// session id.
pub fn session_series(sessions: &[SessionInput<'_>]) -> Vec<SessionPoint> {
    let mut points: Vec<SessionPoint> = sessions
        .iter()
        .filter(|s| !s.predictions.is_empty())
        .map(|s| {
            let n = s.predictions.len() as f64;
            let severity = s.predictions.iter().map(Prediction::expected_stage).sum::<f64>() / n;
            let mean_features = if s.features.is_empty() {
                BTreeMap::new()
            } else {
                let m = s.features.len() as f64;
                Feature::ALL.iter().map(|&f| (f, s.features.iter().map(|w| f.value(w)).sum::<f64>() / m)).collect()
            };
            SessionPoint {
                session_id: s.session_id.to_string(),
                date: s.date,
                severity,
                mean_features,
                window_count: s.predictions.len(),
            }
        })
        .collect();
    points.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.session_id.cmp(&b.session_id)));
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// sqrt(SSR / (n - 2)).
    pub residual_sd: f64,
}

/// Least squares of `ys` on the ordinals 0..n. Needs n ≥ 3.
pub fn fit_ols(ys: &[f64]) -> Option<OlsFit> {
    let n = ys.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = ys.iter().enumerate().map(|(k, y)| (y - intercept - slope * k as f64).powi(2)).sum();
    Some(OlsFit { slope, intercept, residual_sd: (ssr / (nf - 2.0)).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub ordinal: usize,
    pub date: NaiveDate,
    pub predicted: f64,
    pub lower95: f64,
    pub upper95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub method: String,
    pub fit: OlsFit,
    pub points: Vec<ForecastPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ForecastOutcome {
    Forecast(Forecast),
    NoForecast { sessions: usize },
}

fn median_spacing_days(dates: &[NaiveDate]) -> i64 {
    let mut gaps: Vec<i64> = dates.windows(2).map(|w| (w[1] - w[0]).num_days()).collect();
    if gaps.is_empty() {
        return 0;
    }
    gaps.sort_unstable();
    let mid = gaps.len() / 2;
    if gaps.len() % 2 == 1 {
        gaps[mid]
    } else {
        // Whole days; halves round up.
        (gaps[mid - 1] + gaps[mid] + 1).div_euclid(2)
    }
}

/// Extrapolates `horizon` sessions past the end of `series`.
pub fn forecast(series: &[SessionPoint], horizon: usize) -> ForecastOutcome {
    let ys: Vec<f64> = series.iter().map(|p| p.severity).collect();
    let Some(fit) = fit_ols(&ys) else {
        return ForecastOutcome::NoForecast { sessions: series.len() };
    };
    let dates: Vec<NaiveDate> = series.iter().map(|p| p.date).collect();
    let spacing = median_spacing_days(&dates);
    let last = *dates.last().expect("at least three sessions");
    let half = Z95 * fit.residual_sd;
    let points = (1..=horizon)
        .map(|h| {
            let ordinal = series.len() - 1 + h;
            let predicted = fit.intercept + fit.slope * ordinal as f64;
            ForecastPoint {
                ordinal,
                date: last + Duration::days(spacing * h as i64),
                predicted,
                lower95: predicted - half,
                upper95: predicted + half,
            }
        })
        .collect();
    ForecastOutcome::Forecast(Forecast { method: FORECAST_METHOD.to_string(), fit, points })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationEvent {
    pub date: NaiveDate,
    /// Drug and dose.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrendError {
    #[error("medication label is empty")]
    EmptyLabel,
}

impl MedicationEvent {
    pub fn validate(&self) -> Result<(), TrendError> {
        if self.label.trim().is_empty() {
            Err(TrendError::EmptyLabel)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum TimelineItem {
    Session(SessionPoint),
    Medication {
        event: MedicationEvent,
        /// Session id of the nearest session on or before the event date,
        /// or `pre-baseline`.
        anchor: String,
    },
}

/// Merges sessions and medication events by date. On the same date a
/// session comes first, so an event on a session day is tagged with it.
pub fn overlay(series: &[SessionPoint], events: &[MedicationEvent]) -> Vec<TimelineItem> {
    let mut sorted_events: Vec<&MedicationEvent> = events.iter().collect();
    sorted_events.sort_by_key(|e| e.date);
    let mut out = Vec::with_capacity(series.len() + events.len());
    let mut sessions = series.iter().peekable();
    let mut anchor = PRE_BASELINE.to_string();
    for event in sorted_events {
        while let Some(s) = sessions.next_if(|s| s.date <= event.date) {
            anchor = s.session_id.clone();
            out.push(TimelineItem::Session(s.clone()));
        }
        out.push(TimelineItem::Medication { event: event.clone(), anchor: anchor.clone() });
    }
    out.extend(sessions.cloned().map(TimelineItem::Session));
    out
}
