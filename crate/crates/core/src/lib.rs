//! Core algorithms for contestable Parkinson's gait decision support.
//!
//! The crate is organized bottom-up:
//!
//! - [`ingest`]: VGRF parsing, windowing, gait features and normative baselines.
//! - [`model`]: a portable 1D-CNN with deterministic inference, backprop and
//!   seeded mini-batch training.
//! - [`explain`]: layer-wise relevance propagation and sensor/segment summaries.
//! - [`justify`]: Hoehn & Yahr rule base and justification composition.
//! - [`contest`]: the contest/justify deliberation state machine.
//! - [`audit`]: hash-chained append-only event log.
//! - [`cas`]: contestability assessment scoring.
//! - [`trend`]: longitudinal severity series, forecasts and medication overlay.
//! - [`synth`]: synthetic VGRF walks for demos and tests.
//!
//! Everything here is pure or file-local; the HTTP service and persistence
//! live in `congait-server`.

pub mod audit;
pub mod canonical;
pub mod cas;
pub mod contest;
pub mod explain;
pub mod ingest;
pub mod justify;
pub mod model;
pub mod stage;
pub mod synth;
pub mod trend;

pub use audit::{AuditEntry, AuditLog, EventKind, Verification};
pub use cas::{CasCriterion, CasReport};
pub use contest::{ArgumentType, CaseState, ContestCase, Role, Verdict};
pub use explain::{LrpConfig, RelevanceMap, SensorRelevance};
pub use ingest::{Channel, Cohort, GaitRecord, GaitWindow, NormativeBaseline, WindowFeatures};
pub use justify::{ClinicalRule, Justification, RuleBase};
pub use model::{ModelSpec, Prediction, Tensor};
pub use stage::Stage;
pub use trend::{Forecast, MedicationEvent, SessionPoint};
