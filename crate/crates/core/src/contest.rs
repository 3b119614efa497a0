//! Contest & Justify deliberation workflow.
//!
//! A clinician opens a case against a prediction with one argument type; the
//! system delegate answers with a justification; the clinician accepts it or
//! contests again. Re-contesting at `round == max_rounds` escalates the case
//! to a reviewer, whose verdict closes it.
//!
//! ```text
//! Open ──attach──▶ Justified ──accept──▶ Accepted
//!                    │    ▲
//!           recontest│    │attach (round+1)
//!                    ▼    │
//!                ReContested
//! Justified ──recontest @ max_rounds──▶ Escalated ──resolve──▶ Resolved
//! ```
//!
//! Every transition takes the caller's expected case version; a mismatch
//! fails with [`ContestError::StaleCase`] and leaves the case untouched.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::justify::Justification;
use crate::stage::Stage;

pub const DEFAULT_MAX_ROUNDS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArgumentType {
    FactualError,
    NormativeConflict,
    ReasoningFlaw,
}

impl ArgumentType {
    pub const ALL: [ArgumentType; 3] =
        [ArgumentType::FactualError, ArgumentType::NormativeConflict, ArgumentType::ReasoningFlaw];

    /// One-line help text shown next to the argument picker.
    pub fn definition(self) -> &'static str {
        match self {
            ArgumentType::FactualError => "The input data behind the prediction is incorrect.",
            ArgumentType::NormativeConflict => "The prediction conflicts with the clinical context.",
            ArgumentType::ReasoningFlaw => "The relevance attribution is implausible.",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ArgumentType::FactualError => "Factual Error",
            ArgumentType::NormativeConflict => "Normative Conflict",
            ArgumentType::ReasoningFlaw => "Reasoning Flaw",
        }
    }
}

impl FromStr for ArgumentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "factualerror" => Ok(ArgumentType::FactualError),
            "normativeconflict" => Ok(ArgumentType::NormativeConflict),
            "reasoningflaw" => Ok(ArgumentType::ReasoningFlaw),
            _ => Err(format!("unknown argument type {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Clinician,
    SystemDelegate,
    Reviewer,
    Admin,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Clinician, Role::SystemDelegate, Role::Reviewer, Role::Admin];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "clinician" => Ok(Role::Clinician),
            "systemdelegate" | "system" => Ok(Role::SystemDelegate),
            "reviewer" => Ok(Role::Reviewer),
            "admin" => Ok(Role::Admin),
            _ => Err(format!("unknown role {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseState {
    Open,
    Justified,
    Accepted,
    ReContested,
    Escalated,
    Resolved,
}

impl CaseState {
    pub const ALL: [CaseState; 6] = [
        CaseState::Open,
        CaseState::Justified,
        CaseState::Accepted,
        CaseState::ReContested,
        CaseState::Escalated,
        CaseState::Resolved,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, CaseState::Accepted | CaseState::Resolved)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Upheld,
    Overturned,
    /// The reviewer corrects the stage; the prediction is flagged, not
    /// retrained.
    Amended {
        new_stage: Stage,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Accept,
    #[serde(alias = "recontest")]
    ReContest {
        note: String,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContestError {
    #[error("prediction {0} does not exist")]
    UnknownPrediction(String),
    #[error("role {role} may not {action}")]
    ForbiddenRole { role: Role, action: &'static str },
    #[error("a contest note is required")]
    EmptyNote,
    #[error("cannot {action} a case in state {state:?}")]
    IllegalTransition { state: CaseState, action: &'static str },
    #[error("justification is for round {found}, case is at round {expected}")]
    RoundMismatch { expected: u32, found: u32 },
    #[error("justification refers to prediction {found}, case is about {expected}")]
    PredictionMismatch { expected: String, found: String },
    #[error("case version is {actual}, caller expected {expected}")]
    StaleCase { expected: u64, actual: u64 },
    #[error("max_rounds must be at least 1")]
    InvalidMaxRounds,
    #[error("event log for case is empty or does not start with an opening")]
    CorruptHistory,
}

/// Lookup used to check that a contested prediction exists.
pub trait PredictionRegistry {
    fn contains_prediction(&self, prediction_id: &str) -> bool;
}

impl<F: Fn(&str) -> bool> PredictionRegistry for F {
    fn contains_prediction(&self, prediction_id: &str) -> bool {
        self(prediction_id)
    }
}

/// A state change, as persisted in the case's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ContestEvent {
    Opened { case_id: String, prediction_id: String, argument_type: ArgumentType, note: String, max_rounds: u32 },
    JustificationAttached { justification: Justification },
    Decided { decision: Decision },
    Resolved { verdict: Verdict },
}

impl ContestEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ContestEvent::Opened { .. } => "opened",
            ContestEvent::JustificationAttached { .. } => "justification_attached",
            ContestEvent::Decided { .. } => "decided",
            ContestEvent::Resolved { .. } => "resolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestCase {
    pub case_id: String,
    pub prediction_id: String,
    pub state: CaseState,
    pub argument_type: ArgumentType,
    /// Clinician note per round, starting with the opening note.
    pub notes: Vec<String>,
    pub justifications: Vec<Justification>,
    pub round: u32,
    pub max_rounds: u32,
    pub verdict: Option<Verdict>,
    pub version: u64,
}

fn require(role: Role, needed: Role, action: &'static str) -> Result<(), ContestError> {
    if role == needed {
        Ok(())
    } else {
        Err(ContestError::ForbiddenRole { role, action })
    }
}

/// Opens a new case in state `Open`, round 1, version 1.
pub fn open_contest(
    registry: &impl PredictionRegistry,
    case_id: impl Into<String>,
    prediction_id: &str,
    argument_type: ArgumentType,
    note: &str,
    author: Role,
    max_rounds: u32,
) -> Result<ContestCase, ContestError> {
    require(author, Role::Clinician, "open a contest")?;
    if max_rounds == 0 {
        return Err(ContestError::InvalidMaxRounds);
    }
    if note.trim().is_empty() {
        return Err(ContestError::EmptyNote);
    }
    if !registry.contains_prediction(prediction_id) {
        return Err(ContestError::UnknownPrediction(prediction_id.to_string()));
    }
    Ok(ContestCase {
        case_id: case_id.into(),
        prediction_id: prediction_id.to_string(),
        state: CaseState::Open,
        argument_type,
        notes: vec![note.to_string()],
        justifications: Vec::new(),
        round: 1,
        max_rounds,
        verdict: None,
        version: 1,
    })
}

impl ContestCase {
    fn check_version(&self, expected: u64) -> Result<(), ContestError> {
        if expected == self.version {
            Ok(())
        } else {
            Err(ContestError::StaleCase { expected, actual: self.version })
        }
    }

    fn illegal(&self, action: &'static str) -> ContestError {
        ContestError::IllegalTransition { state: self.state, action }
    }

    /// The system delegate's answer for the current round.
    pub fn attach_justification(
        &self,
        justification: Justification,
        author: Role,
        expected_version: u64,
    ) -> Result<ContestCase, ContestError> {
        const ACTION: &str = "attach a justification to";
        require(author, Role::SystemDelegate, ACTION)?;
        self.check_version(expected_version)?;
        if !matches!(self.state, CaseState::Open | CaseState::ReContested) {
            return Err(self.illegal(ACTION));
        }
        if justification.round != self.round {
            return Err(ContestError::RoundMismatch { expected: self.round, found: justification.round });
        }
        if justification.prediction_id != self.prediction_id {
            return Err(ContestError::PredictionMismatch {
                expected: self.prediction_id.clone(),
                found: justification.prediction_id,
            });
        }
        let mut next = self.clone();
        next.justifications.push(justification);
        next.state = CaseState::Justified;
        next.version += 1;
        Ok(next)
    }

    /// Accept the justification, or contest it again. Re-contesting at the
    /// round limit escalates instead of opening another round.
    pub fn clinician_decision(
        &self,
        decision: &Decision,
        author: Role,
        expected_version: u64,
    ) -> Result<ContestCase, ContestError> {
        const ACTION: &str = "decide on";
        require(author, Role::Clinician, ACTION)?;
        self.check_version(expected_version)?;
        if self.state != CaseState::Justified {
            return Err(self.illegal(ACTION));
        }
        let mut next = self.clone();
        match decision {
            Decision::Accept => next.state = CaseState::Accepted,
            Decision::ReContest { note } => {
                if note.trim().is_empty() {
                    return Err(ContestError::EmptyNote);
                }
                next.notes.push(note.clone());
                if self.round < self.max_rounds {
                    next.state = CaseState::ReContested;
                    next.round += 1;
                } else {
                    next.state = CaseState::Escalated;
                }
            }
        }
        next.version += 1;
        Ok(next)
    }

    /// Reviewer verdict on an escalated case.
    pub fn resolve_escalation(
        &self,
        verdict: Verdict,
        author: Role,
        expected_version: u64,
    ) -> Result<ContestCase, ContestError> {
        const ACTION: &str = "resolve";
        require(author, Role::Reviewer, ACTION)?;
        self.check_version(expected_version)?;
        if self.state != CaseState::Escalated {
            return Err(self.illegal(ACTION));
        }
        let mut next = self.clone();
        next.state = CaseState::Resolved;
        next.verdict = Some(verdict);
        next.version += 1;
        Ok(next)
    }

    /// Applies a non-opening event with the role the event implies.
    pub fn apply(&self, event: &ContestEvent, expected_version: u64) -> Result<ContestCase, ContestError> {
        match event {
            ContestEvent::Opened { .. } => Err(self.illegal("re-open")),
            ContestEvent::JustificationAttached { justification } => {
                self.attach_justification(justification.clone(), Role::SystemDelegate, expected_version)
            }
            ContestEvent::Decided { decision } => self.clinician_decision(decision, Role::Clinician, expected_version),
            ContestEvent::Resolved { verdict } => {
                self.resolve_escalation(verdict.clone(), Role::Reviewer, expected_version)
            }
        }
    }

    /// Folds an event stream back into the current case state.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a ContestEvent>) -> Result<ContestCase, ContestError> {
        let mut iter = events.into_iter();
        let Some(ContestEvent::Opened { case_id, prediction_id, argument_type, note, max_rounds }) = iter.next() else {
            return Err(ContestError::CorruptHistory);
        };
        let mut case = open_contest(
            &|_: &str| true,
            case_id.clone(),
            prediction_id,
            *argument_type,
            note,
            Role::Clinician,
            *max_rounds,
        )?;
        for event in iter {
            case = case.apply(event, case.version)?;
        }
        Ok(case)
    }

    /// Opening event for this case.
    pub fn opened_event(&self) -> ContestEvent {
        ContestEvent::Opened {
            case_id: self.case_id.clone(),
            prediction_id: self.prediction_id.clone(),
            argument_type: self.argument_type,
            note: self.notes[0].clone(),
            max_rounds: self.max_rounds,
        }
    }
}
