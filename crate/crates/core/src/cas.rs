//! Contestability Assessment Score.
//!
//! CAS = Σ λ·s/max over the criteria. The total is kept unrounded; the
//! three-decimal string is for display only.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical};

pub const DEFAULT_CAS_CONFIG: &str = include_str!("../assets/cas_config.json");
pub const DEFAULT_CAS_RATINGS: &str = include_str!("../assets/cas_ratings.json");

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Observed,
    PersonaRated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasCriterion {
    pub name: String,
    pub max_score: f64,
    pub weight: f64,
    pub score: f64,
    pub basis: Basis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl CasCriterion {
    pub fn contribution(&self) -> f64 {
        self.weight * self.score / self.max_score
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CasError {
    #[error("weights sum to {0}, expected 1")]
    WeightSumInvalid(f64),
    #[error("score for {0} is outside [0, max]")]
    ScoreOutOfRange(String),
    #[error("criterion {0} has a non-positive or non-finite weight")]
    InvalidWeight(String),
    #[error("criterion {0} has a non-positive or non-finite maximum")]
    InvalidMax(String),
    #[error("criterion {0} is listed twice")]
    DuplicateCriterion(String),
    #[error("no score given for {0}")]
    MissingScore(String),
    #[error("score given for unknown criterion {0}")]
    UnknownCriterion(String),
    #[error("no criteria")]
    Empty,
    #[error("malformed document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasReport {
    pub criteria: Vec<CasCriterion>,
    pub contributions: Vec<f64>,
    pub total: f64,
    /// `total` rounded to three decimals.
    pub total_display: String,
    pub computed_at: DateTime<Utc>,
    /// SHA-256 of the canonical (name, max, weight) rows.
    pub config_hash: String,
}

impl CasReport {
    pub fn contribution_display(&self) -> Vec<String> {
        self.contributions.iter().map(|c| format!("{c:.3}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRow {
    pub name: String,
    pub max_score: f64,
    pub weight: f64,
    pub basis: Basis,
}

/// Validated criterion set without scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasTemplate {
    pub criteria: Vec<TemplateRow>,
}

/// Scores keyed by criterion name, with optional rater notes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ratings {
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl Ratings {
    pub fn from_json(text: &str) -> Result<Self, CasError> {
        serde_json::from_str(text).map_err(|e| CasError::Parse(e.to_string()))
    }
}

fn check_rows<'a>(rows: impl Iterator<Item = (&'a str, f64, f64)>) -> Result<(), CasError> {
    let mut seen = HashSet::new();
    let mut sum = 0.0;
    let mut any = false;
    for (name, max, weight) in rows {
        any = true;
        if !seen.insert(name) {
            return Err(CasError::DuplicateCriterion(name.to_string()));
        }
        if !(weight.is_finite() && weight > 0.0 && weight <= 1.0) {
            return Err(CasError::InvalidWeight(name.to_string()));
        }
        if !(max.is_finite() && max > 0.0) {
            return Err(CasError::InvalidMax(name.to_string()));
        }
        sum += weight;
    }
    if !any {
        return Err(CasError::Empty);
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(CasError::WeightSumInvalid(sum));
    }
    Ok(())
}

pub fn load_cas_config(document: &str) -> Result<CasTemplate, CasError> {
    let template: CasTemplate = serde_json::from_str(document).map_err(|e| CasError::Parse(e.to_string()))?;
    check_rows(template.criteria.iter().map(|r| (r.name.as_str(), r.max_score, r.weight)))?;
    Ok(template)
}

impl CasTemplate {
    pub fn shipped() -> Self {
        load_cas_config(DEFAULT_CAS_CONFIG).expect("bundled CAS config is valid")
    }

    /// Fills every criterion from `ratings`; all must be scored.
    pub fn apply(&self, ratings: &Ratings) -> Result<Vec<CasCriterion>, CasError> {
        if let Some(unknown) = ratings.scores.keys().find(|k| !self.criteria.iter().any(|r| &r.name == *k)) {
            return Err(CasError::UnknownCriterion(unknown.clone()));
        }
        self.criteria
            .iter()
            .map(|row| {
                let score = *ratings.scores.get(&row.name).ok_or_else(|| CasError::MissingScore(row.name.clone()))?;
                Ok(CasCriterion {
                    name: row.name.clone(),
                    max_score: row.max_score,
                    weight: row.weight,
                    score,
                    basis: row.basis,
                    notes: ratings.notes.get(&row.name).cloned(),
                })
            })
            .collect()
    }
}

fn config_hash(criteria: &[CasCriterion]) -> String {
    let rows: Vec<(&str, f64, f64)> = criteria.iter().map(|c| (c.name.as_str(), c.max_score, c.weight)).collect();
    sha256_hex(to_canonical(&rows).expect("rows serialize").as_bytes())
}

pub fn compute_cas(criteria: &[CasCriterion]) -> Result<CasReport, CasError> {
    compute_cas_at(criteria, Utc::now())
}

pub fn compute_cas_at(criteria: &[CasCriterion], at: DateTime<Utc>) -> Result<CasReport, CasError> {
    check_rows(criteria.iter().map(|c| (c.name.as_str(), c.max_score, c.weight)))?;
    if let Some(c) = criteria.iter().find(|c| !(0.0..=c.max_score).contains(&c.score)) {
        return Err(CasError::ScoreOutOfRange(c.name.clone()));
    }
    let contributions: Vec<f64> = criteria.iter().map(CasCriterion::contribution).collect();
    let total: f64 = contributions.iter().sum();
    Ok(CasReport {
        criteria: criteria.to_vec(),
        contributions,
        total,
        total_display: format!("{total:.3}"),
        computed_at: at,
        config_hash: config_hash(criteria),
    })
}
