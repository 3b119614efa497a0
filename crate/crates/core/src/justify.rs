//! Rule-grounded justifications for predictions.
//!
//! A justification answers whether a predicted stage is defensible against
//! the Hoehn & Yahr criteria, citing the stage rule and the channels that
//! carried the relevance. An external chat-style language model can write
//! the prose; without one, or when it fails, a deterministic template does.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contest::ArgumentType;
use crate::explain::SensorRelevance;
use crate::ingest::Feature;
use crate::model::Prediction;
use crate::stage::Stage;

pub const DEFAULT_RULEBASE_DOCUMENT: &str = include_str!("../assets/rulebase.json");
pub const DEFAULT_CLIENT_TIMEOUT: Duration = Duration::from_secs(10);

/// Channels cited per justification.
pub const CITED_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerDirection {
    WithinNorm,
    Reduced,
    Elevated,
}

impl fmt::Display for MarkerDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarkerDirection::WithinNorm => "within norm",
            MarkerDirection::Reduced => "reduced",
            MarkerDirection::Elevated => "elevated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitMarker {
    pub feature: Feature,
    pub direction: MarkerDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRule {
    pub stage: Stage,
    pub criteria_text: String,
    #[serde(default)]
    pub gait_markers: Vec<GaitMarker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBase {
    pub rules: Vec<ClinicalRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleIssue {
    #[error("no rule for stage {0}")]
    Missing(Stage),
    #[error("stage {0} has more than one rule")]
    Duplicate(Stage),
    #[error("rule for stage {0} has empty criteria text")]
    EmptyCriteria(Stage),
}

#[derive(Debug, Error)]
pub enum JustifyError {
    #[error("rule base has no rule for predicted stage {0}")]
    RuleBaseMissingStage(Stage),
    #[error("relevance belongs to {relevance}, not prediction {prediction}")]
    WindowMismatch { prediction: String, relevance: String },
    #[error("relevance ranking is empty")]
    EmptyRanking,
    #[error("rule base document: {0}")]
    Parse(#[from] serde_json::Error),
}

impl RuleBase {
    pub fn from_json(text: &str) -> Result<Self, JustifyError> {
        Ok(serde_json::from_str(text)?)
    }

    /// The rule base bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_RULEBASE_DOCUMENT).expect("bundled rule base parses")
    }

    pub fn rule(&self, stage: Stage) -> Option<&ClinicalRule> {
        self.rules.iter().find(|r| r.stage == stage)
    }
}

/// Checks that every class label has exactly one rule with non-empty text.
/// Rules for stages outside the class set are allowed.
pub fn validate_rulebase(rulebase: &RuleBase, class_labels: &[Stage]) -> Result<(), Vec<RuleIssue>> {
    let mut issues = Vec::new();
    for &stage in class_labels {
        let matching: Vec<&ClinicalRule> = rulebase.rules.iter().filter(|r| r.stage == stage).collect();
        match matching.len() {
            0 => issues.push(RuleIssue::Missing(stage)),
            1 => {}
            _ => issues.push(RuleIssue::Duplicate(stage)),
        }
        if matching.iter().any(|r| r.criteria_text.trim().is_empty()) {
            issues.push(RuleIssue::EmptyCriteria(stage));
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JustificationSource {
    ExternalModel,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Justification {
    pub prediction_id: String,
    pub contest_id: Option<String>,
    pub text: String,
    pub cited_rules: Vec<Stage>,
    pub cited_channels: Vec<String>,
    pub source: JustificationSource,
    pub round: u32,
}

/// The contest a justification answers.
#[derive(Debug, Clone, PartialEq)]
pub struct ContestContext {
    pub contest_id: String,
    pub argument_type: ArgumentType,
    pub note: String,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body sent to the external model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unusable response: {0}")]
    BadResponse(String),
}

/// An external chat-completion backend.
pub trait JustificationClient: Send + Sync {
    fn model(&self) -> &str;

    /// Returns the text of the first choice.
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composed {
    pub justification: Justification,
    /// Set when a configured client failed and the template was used.
    pub degraded: Option<ClientError>,
}

const SYSTEM_PROMPT: &str = "You review automated Hoehn & Yahr staging of Parkinson's gait recordings. \
Given the predicted stage, the stage criteria and a summary of the relevance attribution, \
write a short clinical justification of whether the stage is supported. \
Refer to the stage criteria and the named sensor channels. If a clinician contest is included, answer it directly.";

fn format_segments(relevance: &SensorRelevance) -> String {
    if relevance.top_segments.is_empty() {
        return "none".to_string();
    }
    relevance.top_segments.iter().map(|s| format!("{:.1}-{:.1} s", s.start_s, s.end_s)).collect::<Vec<_>>().join(", ")
}

fn format_markers(rule: &ClinicalRule) -> String {
    if rule.gait_markers.is_empty() {
        return "none listed".to_string();
    }
    rule.gait_markers.iter().map(|m| format!("{} {}", m.feature.name(), m.direction)).collect::<Vec<_>>().join(", ")
}

/// Builds the chat request for a prediction.
pub fn build_request(
    model: &str,
    prediction: &Prediction,
    relevance: &SensorRelevance,
    rule: &ClinicalRule,
    channels: &[String],
    contest: Option<&ContestContext>,
) -> ChatRequest {
    let mut user = format!(
        "Predicted stage: {} (probability {:.3})\nTop channels: {}\nTop time segments: {}\nStage {} criteria: {}\nExpected gait markers: {}\n",
        prediction.predicted_stage,
        prediction.confidence(),
        channels.join(", "),
        format_segments(relevance),
        rule.stage,
        rule.criteria_text,
        format_markers(rule),
    );
    if let Some(ctx) = contest {
        user.push_str(&format!(
            "Contest round {}: {} ({})\nClinician note: {}\n",
            ctx.round,
            ctx.argument_type.label(),
            ctx.argument_type.definition(),
            ctx.note
        ));
    }
    ChatRequest {
        model: model.to_string(),
        messages: vec![
            ChatMessage { role: "system".into(), content: SYSTEM_PROMPT.into() },
            ChatMessage { role: "user".into(), content: user },
        ],
    }
}

/// Template text used when no external model answers.
pub fn fallback_text(
    prediction: &Prediction,
    relevance: &SensorRelevance,
    rule: &ClinicalRule,
    channels: &[String],
    contest: Option<&ContestContext>,
) -> String {
    let mut text = format!(
        "Predicted stage {} with probability {:.3}. Stage {} criteria: {} \
The relevance attribution is led by {}, with the strongest time segments at {}. \
Gait markers associated with this stage: {}.",
        prediction.predicted_stage,
        prediction.confidence(),
        rule.stage,
        rule.criteria_text,
        channels.join(" and "),
        format_segments(relevance),
        format_markers(rule),
    );
    if let Some(ctx) = contest {
        let answer = match ctx.argument_type {
            ArgumentType::FactualError => format!(
                "The contest disputes the input data. The window covers {:.1}-{:.1} s of session {}; \
check sensor placement and the raw {} waveforms before relying on this stage.",
                prediction.start_s,
                prediction.end_s,
                prediction.session_id,
                channels.join(" and ")
            ),
            ArgumentType::NormativeConflict => format!(
                "The contest disputes the fit with the clinical context. The stage rests on the criteria above; \
weigh them against the clinician note: \"{}\".",
                ctx.note
            ),
            ArgumentType::ReasoningFlaw => format!(
                "The contest disputes the attribution. Relevance is concentrated in {}; \
if that channel is implausible for stage {}, treat the prediction with caution.",
                channels[0], prediction.predicted_stage
            ),
        };
        text.push_str(&format!("\n\nRound {} response ({}): {}", ctx.round, ctx.argument_type.label(), answer));
    }
    text
}

fn citation_suffix(stage: Stage, channels: &[String]) -> String {
    format!("\n\nCited rules: stage {stage}. Cited channels: {}.", channels.join(", "))
}

/// Writes a justification, through the external client when one is given.
///
/// Client failures never surface as errors; they produce the fallback text
/// and are reported in [`Composed::degraded`].
pub fn compose_justification(
    prediction: &Prediction,
    relevance: &SensorRelevance,
    rulebase: &RuleBase,
    contest: Option<&ContestContext>,
    client: Option<&dyn JustificationClient>,
) -> Result<Composed, JustifyError> {
    if let Some(id) = &relevance.prediction_id {
        if id != &prediction.prediction_id {
            return Err(JustifyError::WindowMismatch {
                prediction: prediction.prediction_id.clone(),
                relevance: id.clone(),
            });
        }
    }
    let stage = prediction.predicted_stage;
    let rule = rulebase.rule(stage).ok_or(JustifyError::RuleBaseMissingStage(stage))?;
    let channels: Vec<String> = relevance.ranked_channel_names().into_iter().take(CITED_CHANNELS).collect();
    if channels.is_empty() {
        return Err(JustifyError::EmptyRanking);
    }

    let mut degraded = None;
    let mut external = None;
    if let Some(client) = client {
        let request = build_request(client.model(), prediction, relevance, rule, &channels, contest);
        match client.complete(&request) {
            Ok(text) if !text.trim().is_empty() => external = Some(text),
            Ok(_) => degraded = Some(ClientError::BadResponse("empty completion".into())),
            Err(e) => degraded = Some(e),
        }
    }
    let (text, source) = match external {
        Some(t) => (t.trim_end().to_string() + &citation_suffix(stage, &channels), JustificationSource::ExternalModel),
        None => (fallback_text(prediction, relevance, rule, &channels, contest), JustificationSource::Fallback),
    };
    Ok(Composed {
        justification: Justification {
            prediction_id: prediction.prediction_id.clone(),
            contest_id: contest.map(|c| c.contest_id.clone()),
            text,
            cited_rules: vec![stage],
            cited_channels: channels,
            source,
            round: contest.map_or(1, |c| c.round),
        },
        degraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::Segment;
    use crate::ingest::Channel;
    use crate::stage::default_class_labels;
    use chrono::TimeZone;

    fn prediction(stage: f64) -> Prediction {
        let class_labels = default_class_labels();
        let idx = class_labels.iter().position(|s| s.value() == stage).unwrap();
        let mut probabilities = vec![0.1; 4];
        probabilities[idx] = 0.7;
        Prediction {
            prediction_id: "p1.s1.w0.abc".into(),
            window_id: "p1/s1/w0".into(),
            patient_id: "p1".into(),
            session_id: "s1".into(),
            window_index: 0,
            start_s: 0.0,
            end_s: 10.0,
            probabilities,
            logits: vec![0.0; 4],
            class_labels,
            predicted_index: idx,
            predicted_stage: Stage(stage),
            model_id: "abc".into(),
            created_at: chrono::Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    fn relevance() -> SensorRelevance {
        let mut sums = vec![0.0_f64; 18];
        sums[Channel::LTotal.index()] = 0.5;
        sums[Channel::R4.index()] = -0.3;
        sums[Channel::L1.index()] = 0.1;
        SensorRelevance {
            prediction_id: Some("p1.s1.w0.abc".into()),
            ranking: {
                let mut r: Vec<usize> = (0..18).collect();
                r.sort_by(|&a, &b| sums[b].abs().total_cmp(&sums[a].abs()));
                r
            },
            channel_sums: sums,
            top_segments: vec![Segment { start_s: 2.0, end_s: 3.0, mass: 0.4 }],
        }
    }

    struct Fixed(Result<String, ClientError>);

    impl JustificationClient for Fixed {
        fn model(&self) -> &str {
            "test-model"
        }
        fn complete(&self, _: &ChatRequest) -> Result<String, ClientError> {
            self.0.clone()
        }
    }

    #[test]
    fn shipped_rulebase_covers_default_classes() {
        assert_eq!(validate_rulebase(&RuleBase::shipped(), &default_class_labels()), Ok(()));
    }

    #[test]
    fn validate_reports_missing_and_duplicate() {
        let mut rb = RuleBase::shipped();
        rb.rules.retain(|r| r.stage != Stage(2.5));
        assert_eq!(validate_rulebase(&rb, &default_class_labels()), Err(vec![RuleIssue::Missing(Stage(2.5))]));

        let mut rb = RuleBase::shipped();
        let dup = rb.rule(Stage(3.0)).unwrap().clone();
        rb.rules.push(dup);
        let issues = validate_rulebase(&rb, &default_class_labels()).unwrap_err();
        assert_eq!(issues, vec![RuleIssue::Duplicate(Stage(3.0))]);
        assert!(issues[0].to_string().contains('3'));
    }

    #[test]
    fn fallback_without_client() {
        let rb = RuleBase::shipped();
        let out = compose_justification(&prediction(3.0), &relevance(), &rb, None, None).unwrap();
        let j = out.justification;
        assert_eq!(j.source, JustificationSource::Fallback);
        assert!(out.degraded.is_none());
        assert!(j.text.contains(&rb.rule(Stage(3.0)).unwrap().criteria_text));
        assert!(j.text.contains("LTotal") && j.text.contains("R4"));
        assert_eq!(j.cited_channels, vec!["LTotal", "R4"]);
        assert_eq!(j.cited_rules, vec![Stage(3.0)]);
        assert_eq!(j.round, 1);
    }

    #[test]
    fn fallback_is_deterministic() {
        let rb = RuleBase::shipped();
        let ctx = ContestContext {
            contest_id: "c1".into(),
            argument_type: ArgumentType::ReasoningFlaw,
            note: "left foot sensor was loose".into(),
            round: 2,
        };
        let a = compose_justification(&prediction(2.0), &relevance(), &rb, Some(&ctx), None).unwrap();
        let b = compose_justification(&prediction(2.0), &relevance(), &rb, Some(&ctx), None).unwrap();
        assert_eq!(a.justification.text.as_bytes(), b.justification.text.as_bytes());
        assert_eq!(a.justification.round, 2);
        assert_eq!(a.justification.contest_id.as_deref(), Some("c1"));
    }

    #[test]
    fn argument_types_change_the_answer() {
        let rb = RuleBase::shipped();
        let texts: Vec<String> = ArgumentType::ALL
            .iter()
            .map(|&argument_type| {
                let ctx = ContestContext { contest_id: "c".into(), argument_type, note: "n".into(), round: 1 };
                compose_justification(&prediction(3.0), &relevance(), &rb, Some(&ctx), None).unwrap().justification.text
            })
            .collect();
        assert_ne!(texts[0], texts[1]);
        assert_ne!(texts[1], texts[2]);
    }

    #[test]
    fn external_text_passes_through_with_citations() {
        let client = Fixed(Ok("Gait supports stage 3.".into()));
        let out =
            compose_justification(&prediction(3.0), &relevance(), &RuleBase::shipped(), None, Some(&client)).unwrap();
        assert_eq!(out.justification.source, JustificationSource::ExternalModel);
        assert!(out.justification.text.starts_with("Gait supports stage 3."));
        assert!(out.justification.text.contains("Cited channels: LTotal, R4"));
        assert!(out.degraded.is_none());
    }

    #[test]
    fn client_failure_degrades() {
        for err in [ClientError::Timeout, ClientError::Transport("refused".into())] {
            let client = Fixed(Err(err.clone()));
            let out = compose_justification(&prediction(3.0), &relevance(), &RuleBase::shipped(), None, Some(&client))
                .unwrap();
            assert_eq!(out.justification.source, JustificationSource::Fallback);
            assert_eq!(out.degraded, Some(err));
        }
        let blank = Fixed(Ok("  ".into()));
        let out =
            compose_justification(&prediction(3.0), &relevance(), &RuleBase::shipped(), None, Some(&blank)).unwrap();
        assert_eq!(out.justification.source, JustificationSource::Fallback);
    }

    #[test]
    fn request_contains_prompt_fields() {
        let rb = RuleBase::shipped();
        let rule = rb.rule(Stage(3.0)).unwrap();
        let ctx = ContestContext {
            contest_id: "c".into(),
            argument_type: ArgumentType::NormativeConflict,
            note: "patient just took levodopa".into(),
            round: 1,
        };
        let channels = vec!["LTotal".to_string(), "R4".to_string()];
        let req = build_request("m", &prediction(3.0), &relevance(), rule, &channels, Some(&ctx));
        assert_eq!(req.messages.len(), 2);
        assert_eq!(req.messages[0].role, "system");
        let user = &req.messages[1].content;
        for needle in [
            "Predicted stage: 3",
            "0.700",
            "LTotal, R4",
            "2.0-3.0 s",
            &rule.criteria_text,
            "Normative Conflict",
            "levodopa",
        ] {
            assert!(user.contains(needle), "missing {needle}");
        }
    }

    #[test]
    fn missing_stage_and_mismatch() {
        let mut rb = RuleBase::shipped();
        rb.rules.retain(|r| r.stage != Stage(3.0));
        assert!(matches!(
            compose_justification(&prediction(3.0), &relevance(), &rb, None, None),
            Err(JustifyError::RuleBaseMissingStage(s)) if s == Stage(3.0)
        ));
        let mut rel = relevance();
        rel.prediction_id = Some("other".into());
        assert!(matches!(
            compose_justification(&prediction(3.0), &rel, &RuleBase::shipped(), None, None),
            Err(JustifyError::WindowMismatch { .. })
        ));
    }
}
