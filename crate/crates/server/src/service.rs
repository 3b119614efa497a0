//! Application service: every operation the HTTP API and CLI expose.
//!
//! Callers hold the service behind one lock, which gives the single-writer
//! discipline the audit log and contest cases need. Each operation checks
//! the caller's role against the access table before doing anything.

use std::collections::BTreeMap;
use std::io;

use chrono::{NaiveDate, Utc};
use congait_core::audit::{read_entries, Actor, AuditBundle, AuditError, AuditLog, EventKind, Verification};
use congait_core::canonical::sha256_hex;
use congait_core::cas::{compute_cas, CasError, CasReport, CasTemplate, Ratings};
use congait_core::contest::{
    open_contest, ArgumentType, CaseState, ContestCase, ContestError, ContestEvent, Decision, Role, Verdict,
};
use congait_core::explain::{aggregate_relevance, export_relevance, lrp, ExplainError, LrpConfig, RelevanceExport};
use congait_core::ingest::{
    compute_baseline, extract_features, parse_vgrf, segment_windows, Channel, Cohort, Feature, GaitRecord, GaitWindow,
    Indicator, IngestError, NormativeBaseline, RecordMeta, WindowFeatures, DEFAULT_CONTACT_THRESHOLD_N,
    DEFAULT_WINDOW_SECONDS,
};
use congait_core::justify::{
    compose_justification, validate_rulebase, ContestContext, JustificationClient, JustifyError, RuleBase,
};
use congait_core::model::{load_model, predict, reference_model, save_model, ModelError, ModelSpec, Prediction};
use congait_core::trend::{
    forecast, overlay, session_series, ForecastOutcome, MedicationEvent, SessionInput, SessionPoint, TimelineItem,
    TrendError,
};
use congait_core::{SensorRelevance, Stage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::access::{allowed, Endpoint};
use crate::config::{Config, Principal};
use crate::llm::HttpChatClient;
use crate::store::{append_json_line, read_json_lines, valid_id, SessionMeta, Store};

/// Number of time segments kept per relevance summary.
pub const TOP_SEGMENTS: usize = 3;
pub const SEGMENT_SECONDS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("missing or unknown credentials")]
    Unauthenticated,
    #[error("role {role} may not call {endpoint:?}")]
    Forbidden { role: Role, endpoint: Endpoint },
    #[error("unknown principal {0}")]
    UnknownPrincipal(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown prediction {0}")]
    UnknownPrediction(String),
    #[error("unknown contest {0}")]
    UnknownCase(String),
    #[error("unknown patient {0}")]
    UnknownPatient(String),
    #[error("session {session} has {count} windows, no window {index}")]
    WindowOutOfRange { session: String, index: usize, count: usize },
    #[error("session {0} already exists")]
    SessionExists(String),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Justify(#[from] JustifyError),
    #[error(transparent)]
    Contest(#[from] ContestError),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error(transparent)]
    Trend(#[from] TrendError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("store is corrupt: {0}")]
    StoreCorrupt(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("storage failure: {0}")]
    Storage(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub patient_id: String,
    pub session_id: String,
    pub cohort: Cohort,
    #[serde(default)]
    pub date: Option<NaiveDate>,
    /// The 19-column recording text.
    pub vgrf: String,
}

/// One persisted prediction with its relevance summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub prediction: Prediction,
    pub relevance: SensorRelevance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionView {
    pub prediction: Prediction,
    pub relevance: SensorRelevance,
    pub contest_ids: Vec<String>,
    /// Corrected stage from an `Amended` reviewer verdict.
    pub flagged_stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatureView {
    pub window_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub features: WindowFeatures,
    /// Absent until at least one control session is ingested.
    pub indicators: Option<BTreeMap<Feature, Indicator>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub session: SessionMeta,
    pub baseline_windows: usize,
    pub windows: Vec<WindowFeatureView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrace {
    pub name: String,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowView {
    pub window_id: String,
    pub window_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub sample_rate_hz: f64,
    pub channels: Vec<ChannelTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendView {
    pub patient_id: String,
    pub series: Vec<SessionPoint>,
    pub forecast: ForecastOutcome,
    pub medications: Vec<MedicationEvent>,
    pub timeline: Vec<TimelineItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
    pub version: String,
    pub audit_entries: u64,
}

/// One line of `contests.events`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContestRecord {
    case_id: String,
    version: u64,
    at: chrono::DateTime<Utc>,
    actor: String,
    change: ContestEvent,
}

pub struct Service {
    config: Config,
    store: Store,
    model: ModelSpec,
    rules: RuleBase,
    cas_template: CasTemplate,
    audit: AuditLog,
    sessions: BTreeMap<String, SessionMeta>,
    predictions: BTreeMap<String, PredictionRecord>,
    contests: BTreeMap<String, ContestCase>,
    client: Option<Box<dyn JustificationClient>>,
    baseline: Option<Option<NormativeBaseline>>,
    system: Actor,
}

impl Service {
    /// Opens the store. Fails with `StoreCorrupt` when the audit chain does
    /// not verify, unless `allow_unverified` is set.
    pub fn open(config: Config, allow_unverified: bool) -> Result<Self> {
        let client = config.llm.as_ref().map(|llm| Box::new(HttpChatClient::new(llm)) as Box<dyn JustificationClient>);
        Self::open_with_client(config, allow_unverified, client)
    }

    pub fn open_with_client(
        config: Config,
        allow_unverified: bool,
        client: Option<Box<dyn JustificationClient>>,
    ) -> Result<Self> {
        let store = Store::open(&config.store_root)?;
        let verification = congait_core::audit::verify_file(&store.audit_log())?;
        if let Verification::FirstBadIndex { index, reason } = &verification {
            if !allow_unverified {
                return Err(ServiceError::StoreCorrupt(format!("audit log fails at entry {index}: {reason:?}")));
            }
            tracing::warn!(index, ?reason, "starting with an unverified audit log");
        }

        let model = match &config.model_path {
            Some(path) => load_model(&std::fs::read_to_string(path)?)?,
            None => reference_model(),
        };
        let model_file = store.model_file(model.model_id());
        if !model_file.exists() {
            crate::store::write_atomic(&model_file, save_model(&model).as_bytes())?;
        }

        let rules_path = store.root().join("rulebase.json");
        let rules = if rules_path.exists() {
            RuleBase::from_json(&std::fs::read_to_string(&rules_path)?)?
        } else {
            RuleBase::shipped()
        };
        if let Err(issues) = validate_rulebase(&rules, model.class_labels()) {
            let text: Vec<String> = issues.iter().map(ToString::to_string).collect();
            return Err(ServiceError::Config(text.join("; ")));
        }
        let cas_path = store.root().join("cas.json");
        let cas_template = if cas_path.exists() {
            congait_core::cas::load_cas_config(&std::fs::read_to_string(&cas_path)?)?
        } else {
            CasTemplate::shipped()
        };

        let sessions = store.list_sessions()?.into_iter().map(|m| (m.session_id.clone(), m)).collect();
        let predictions = read_json_lines::<PredictionRecord>(&store.prediction_index())?
            .into_iter()
            .map(|r| (r.prediction.prediction_id.clone(), r))
            .collect();
        let contests = replay_contests(&read_json_lines(&store.contest_events())?)?;

        let system = config
            .principals
            .iter()
            .find(|p| p.role == Role::SystemDelegate)
            .map_or_else(|| Actor::new(Role::SystemDelegate, "system"), |p| Actor::new(p.role, p.id.clone()));
        let audit = AuditLog::open(store.audit_log())?;
        let mut service = Service {
            config,
            store,
            model,
            rules,
            cas_template,
            audit,
            sessions,
            predictions,
            contests,
            client,
            baseline: None,
            system,
        };
        service.record_config_if_changed()?;
        Ok(service)
    }

    /// Appends `ConfigChanged` when the effective configuration differs from
    /// the last one recorded.
    fn record_config_if_changed(&mut self) -> Result<()> {
        let fingerprint = self.config.fingerprint(self.model.model_id());
        let last = read_entries(self.audit.path())?
            .into_iter()
            .rev()
            .find(|e| e.event_kind == EventKind::ConfigChanged)
            .and_then(|e| e.payload.get("config_hash").and_then(Value::as_str).map(str::to_owned));
        if last.as_deref() != Some(fingerprint.as_str()) {
            let payload = json!({
                "config_hash": fingerprint,
                "model_id": self.model.model_id(),
                "max_rounds": self.config.max_rounds,
                "external_client": self.config.llm.as_ref().map(|l| l.model.clone()),
            });
            self.audit.append(self.system.clone(), EventKind::ConfigChanged, payload)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub fn principal(&self, id: &str) -> Result<Principal> {
        self.config.principal(id).cloned().ok_or_else(|| ServiceError::UnknownPrincipal(id.to_string()))
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal> {
        self.config.principal_by_token(token).cloned().ok_or(ServiceError::Unauthenticated)
    }

    fn authorize(&self, who: &Principal, endpoint: Endpoint) -> Result<Actor> {
        if allowed(endpoint, who.role) {
            Ok(Actor::new(who.role, who.id.clone()))
        } else {
            Err(ServiceError::Forbidden { role: who.role, endpoint })
        }
    }

    fn session(&self, session_id: &str) -> Result<&SessionMeta> {
        self.sessions.get(session_id).ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    fn load_record(&self, meta: &SessionMeta) -> Result<GaitRecord> {
        let text = self.store.read_session_text(meta)?;
        let record_meta = RecordMeta {
            patient_id: meta.patient_id.clone(),
            session_id: meta.session_id.clone(),
            cohort: meta.cohort,
        };
        Ok(parse_vgrf(&text, record_meta)?)
    }

    fn windows(&self, meta: &SessionMeta) -> Result<Vec<GaitWindow>> {
        Ok(segment_windows(&self.load_record(meta)?, DEFAULT_WINDOW_SECONDS))
    }

    pub fn ingest_session(&mut self, who: &Principal, req: IngestRequest) -> Result<SessionMeta> {
        let actor = self.authorize(who, Endpoint::IngestSession)?;
        for id in [&req.patient_id, &req.session_id] {
            if !valid_id(id) {
                return Err(ServiceError::InvalidId(id.clone()));
            }
        }
        if self.sessions.contains_key(&req.session_id) {
            return Err(ServiceError::SessionExists(req.session_id));
        }
        let record = parse_vgrf(
            &req.vgrf,
            RecordMeta { patient_id: req.patient_id.clone(), session_id: req.session_id.clone(), cohort: req.cohort },
        )?;
        let meta = SessionMeta {
            patient_id: req.patient_id,
            session_id: req.session_id,
            cohort: req.cohort,
            date: req.date.unwrap_or_else(|| Utc::now().date_naive()),
            sample_rate_hz: record.sample_rate_hz(),
            rows: record.len(),
            windows: segment_windows(&record, DEFAULT_WINDOW_SECONDS).len(),
        };
        self.store.write_session(&meta, &req.vgrf)?;
        self.audit.append(
            actor,
            EventKind::SessionIngested,
            json!({
                "patient_id": meta.patient_id,
                "session_id": meta.session_id,
                "cohort": meta.cohort,
                "date": meta.date,
                "rows": meta.rows,
                "windows": meta.windows,
                "sample_rate_hz": meta.sample_rate_hz,
                "clamped_samples": record.clamped_count(),
                "sha256": sha256_hex(req.vgrf.as_bytes()),
            }),
        )?;
        self.sessions.insert(meta.session_id.clone(), meta.clone());
        if meta.cohort == Cohort::Control {
            self.baseline = None;
        }
        Ok(meta)
    }

    fn baseline(&mut self) -> Result<Option<NormativeBaseline>> {
        if let Some(b) = &self.baseline {
            return Ok(b.clone());
        }
        let mut features = Vec::new();
        let controls: Vec<SessionMeta> =
            self.sessions.values().filter(|m| m.cohort == Cohort::Control).cloned().collect();
        for meta in &controls {
            for w in self.windows(meta)? {
                let f = extract_features(&w, DEFAULT_CONTACT_THRESHOLD_N);
                if !f.no_steps {
                    features.push(f);
                }
            }
        }
        let baseline = compute_baseline(&features).ok();
        self.baseline = Some(baseline.clone());
        Ok(baseline)
    }

    pub fn session_features(&mut self, who: &Principal, session_id: &str) -> Result<SessionFeatures> {
        self.authorize(who, Endpoint::SessionFeatures)?;
        let meta = self.session(session_id)?.clone();
        let baseline = self.baseline()?;
        let windows = self
            .windows(&meta)?
            .iter()
            .map(|w| {
                let features = extract_features(w, DEFAULT_CONTACT_THRESHOLD_N);
                WindowFeatureView {
                    window_index: w.window_index,
                    start_s: w.start_s,
                    end_s: w.end_s,
                    indicators: baseline.as_ref().map(|b| b.classify_all(&features)),
                    features,
                }
            })
            .collect();
        Ok(SessionFeatures { session: meta, baseline_windows: baseline.map_or(0, |b| b.window_count), windows })
    }

    pub fn session_window(&self, who: &Principal, session_id: &str, index: usize) -> Result<WindowView> {
        self.authorize(who, Endpoint::SessionWindow)?;
        let meta = self.session(session_id)?;
        let windows = self.windows(meta)?;
        let count = windows.len();
        let w = windows.into_iter().nth(index).ok_or_else(|| ServiceError::WindowOutOfRange {
            session: session_id.to_string(),
            index,
            count,
        })?;
        Ok(WindowView {
            window_id: w.window_id(),
            window_index: w.window_index,
            start_s: w.start_s,
            end_s: w.end_s,
            sample_rate_hz: w.sample_rate_hz,
            channels: Channel::ALL
                .iter()
                .map(|&c| ChannelTrace { name: c.to_string(), samples: w.channel(c).to_vec() })
                .collect(),
        })
    }

    /// Predicts and explains every window. Windows already predicted by the
    /// current model are returned from the index without new audit events.
    pub fn run_session(&mut self, who: &Principal, session_id: &str) -> Result<Vec<PredictionRecord>> {
        let actor = self.authorize(who, Endpoint::RunSession)?;
        let meta = self.session(session_id)?.clone();
        let mut out = Vec::new();
        for w in self.windows(&meta)? {
            let id = congait_core::model::prediction_id(&w, self.model.model_id());
            if let Some(existing) = self.predictions.get(&id) {
                out.push(existing.clone());
                continue;
            }
            let prediction = predict(&self.model, &w)?;
            let mut map = lrp(&self.model, &w, prediction.predicted_index, LrpConfig::default())?;
            map.prediction_id = Some(prediction.prediction_id.clone());
            let relevance = aggregate_relevance(&map, TOP_SEGMENTS, SEGMENT_SECONDS);
            let record = PredictionRecord { prediction, relevance };
            append_json_line(&self.store.prediction_index(), &record)?;
            let p = &record.prediction;
            self.audit.append(
                actor.clone(),
                EventKind::PredictionIssued,
                json!({
                    "prediction_id": p.prediction_id,
                    "session_id": p.session_id,
                    "patient_id": p.patient_id,
                    "window_index": p.window_index,
                    "model_id": p.model_id,
                    "predicted_stage": p.predicted_stage,
                    "probabilities": p.probabilities,
                }),
            )?;
            self.audit.append(
                actor.clone(),
                EventKind::ExplanationIssued,
                json!({
                    "prediction_id": p.prediction_id,
                    "target_class": map.target_class,
                    "rule_config": map.rule_config,
                    "ranking": record.relevance.ranked_channel_names(),
                    "top_segments": record.relevance.top_segments,
                    "target_logit": map.conservation.target_logit,
                    "total_relevance": map.conservation.total_relevance,
                }),
            )?;
            self.predictions.insert(p.prediction_id.clone(), record.clone());
            out.push(record);
        }
        Ok(out)
    }

    fn prediction_record(&self, id: &str) -> Result<&PredictionRecord> {
        self.predictions.get(id).ok_or_else(|| ServiceError::UnknownPrediction(id.to_string()))
    }

    pub fn get_prediction(&self, who: &Principal, id: &str) -> Result<PredictionView> {
        self.authorize(who, Endpoint::GetPrediction)?;
        let record = self.prediction_record(id)?;
        let cases: Vec<&ContestCase> = self.contests.values().filter(|c| c.prediction_id == id).collect();
        let flagged_stage = cases.iter().rev().find_map(|c| match &c.verdict {
            Some(Verdict::Amended { new_stage }) => Some(*new_stage),
            _ => None,
        });
        Ok(PredictionView {
            prediction: record.prediction.clone(),
            relevance: record.relevance.clone(),
            contest_ids: cases.iter().map(|c| c.case_id.clone()).collect(),
            flagged_stage,
        })
    }

    /// Recomputes the full relevance map for a stored prediction.
    pub fn get_relevance(&self, who: &Principal, id: &str, include_matrix: bool) -> Result<RelevanceExport> {
        self.authorize(who, Endpoint::GetRelevance)?;
        let record = self.prediction_record(id)?;
        let p = &record.prediction;
        if p.model_id != self.model.model_id() {
            return Err(ServiceError::Config(format!("prediction {id} was made by model {}", p.model_id)));
        }
        let meta = self.session(&p.session_id)?;
        let window = self
            .windows(meta)?
            .into_iter()
            .nth(p.window_index)
            .ok_or_else(|| ServiceError::UnknownPrediction(id.to_string()))?;
        let mut map = lrp(&self.model, &window, p.predicted_index, LrpConfig::default())?;
        map.prediction_id = Some(p.prediction_id.clone());
        Ok(export_relevance(&map, &record.relevance, include_matrix))
    }

    fn persist_contest(&mut self, actor: &Actor, case: &ContestCase, change: ContestEvent) -> Result<()> {
        let record = ContestRecord {
            case_id: case.case_id.clone(),
            version: case.version,
            at: Utc::now(),
            actor: actor.principal.clone(),
            change,
        };
        append_json_line(&self.store.contest_events(), &record)?;
        self.contests.insert(case.case_id.clone(), case.clone());
        Ok(())
    }

    fn transition_payload(before: &ContestCase, after: &ContestCase, detail: Value) -> Value {
        json!({
            "case_id": after.case_id,
            "prediction_id": after.prediction_id,
            "from": before.state,
            "to": after.state,
            "round": after.round,
            "version": after.version,
            "detail": detail,
        })
    }

    /// The system delegate's reply to the current round.
    fn auto_justify(&mut self, case: ContestCase) -> Result<ContestCase> {
        let record = self.prediction_record(&case.prediction_id)?.clone();
        let ctx = ContestContext {
            contest_id: case.case_id.clone(),
            argument_type: case.argument_type,
            note: case.notes.last().cloned().unwrap_or_default(),
            round: case.round,
        };
        let composed = compose_justification(
            &record.prediction,
            &record.relevance,
            &self.rules,
            Some(&ctx),
            self.client.as_deref(),
        )?;
        let system = self.system.clone();
        if let Some(reason) = &composed.degraded {
            self.audit.append(
                system.clone(),
                EventKind::ExternalClientDegraded,
                json!({"case_id": case.case_id, "prediction_id": case.prediction_id, "reason": reason.to_string()}),
            )?;
        }
        let j = composed.justification;
        let next = case.attach_justification(j.clone(), Role::SystemDelegate, case.version)?;
        self.persist_contest(&system, &next, ContestEvent::JustificationAttached { justification: j.clone() })?;
        self.audit.append(
            system,
            EventKind::JustificationIssued,
            Self::transition_payload(
                &case,
                &next,
                json!({
                    "source": j.source,
                    "cited_rules": j.cited_rules,
                    "cited_channels": j.cited_channels,
                    "text_sha256": sha256_hex(j.text.as_bytes()),
                }),
            ),
        )?;
        Ok(next)
    }

    /// Opens a case and immediately attaches the first justification.
    pub fn open_contest(
        &mut self,
        who: &Principal,
        prediction_id: &str,
        argument_type: ArgumentType,
        note: &str,
    ) -> Result<ContestCase> {
        let actor = self.authorize(who, Endpoint::OpenContest)?;
        let case_id = format!("case-{:04}", self.contests.len() + 1);
        let predictions = &self.predictions;
        let case = open_contest(
            &|id: &str| predictions.contains_key(id),
            case_id,
            prediction_id,
            argument_type,
            note,
            who.role,
            self.config.max_rounds,
        )?;
        self.persist_contest(&actor, &case, case.opened_event())?;
        self.audit.append(
            actor,
            EventKind::ContestOpened,
            json!({
                "case_id": case.case_id,
                "prediction_id": case.prediction_id,
                "argument_type": case.argument_type,
                "note": note,
                "round": case.round,
                "max_rounds": case.max_rounds,
                "version": case.version,
            }),
        )?;
        self.auto_justify(case)
    }

    fn case(&self, case_id: &str) -> Result<&ContestCase> {
        self.contests.get(case_id).ok_or_else(|| ServiceError::UnknownCase(case_id.to_string()))
    }

    pub fn get_contest(&self, who: &Principal, case_id: &str) -> Result<ContestCase> {
        self.authorize(who, Endpoint::GetContest)?;
        self.case(case_id).cloned()
    }

    /// Accept or re-contest; a new round is answered right away.
    pub fn decide(
        &mut self,
        who: &Principal,
        case_id: &str,
        decision: Decision,
        expected_version: u64,
    ) -> Result<ContestCase> {
        let actor = self.authorize(who, Endpoint::ContestDecision)?;
        let case = self.case(case_id)?.clone();
        let next = case.clinician_decision(&decision, who.role, expected_version)?;
        self.persist_contest(&actor, &next, ContestEvent::Decided { decision: decision.clone() })?;
        self.audit.append(
            actor,
            EventKind::ContestTransition,
            Self::transition_payload(&case, &next, serde_json::to_value(&decision).expect("decision serializes")),
        )?;
        if next.state == CaseState::ReContested {
            self.auto_justify(next)
        } else {
            Ok(next)
        }
    }

    /// Reviewer verdict; without `expected_version` the current one is used.
    pub fn resolve(
        &mut self,
        who: &Principal,
        case_id: &str,
        verdict: Verdict,
        expected_version: Option<u64>,
    ) -> Result<ContestCase> {
        let actor = self.authorize(who, Endpoint::ResolveContest)?;
        let case = self.case(case_id)?.clone();
        let next = case.resolve_escalation(verdict.clone(), who.role, expected_version.unwrap_or(case.version))?;
        self.persist_contest(&actor, &next, ContestEvent::Resolved { verdict: verdict.clone() })?;
        self.audit.append(
            actor,
            EventKind::ContestTransition,
            Self::transition_payload(&case, &next, serde_json::to_value(&verdict).expect("verdict serializes")),
        )?;
        Ok(next)
    }

    fn medications(&self, patient_id: &str) -> Result<Vec<MedicationEvent>> {
        Ok(self.store.read_json(&self.store.medications_file(patient_id))?)
    }

    pub fn trend(&self, who: &Principal, patient_id: &str, horizon: usize) -> Result<TrendView> {
        self.authorize(who, Endpoint::Trend)?;
        if !self.store.patient_exists(patient_id) {
            return Err(ServiceError::UnknownPatient(patient_id.to_string()));
        }
        let metas: Vec<&SessionMeta> = self.sessions.values().filter(|m| m.patient_id == patient_id).collect();
        let mut per_session = Vec::new();
        for meta in &metas {
            let predictions: Vec<Prediction> = self
                .predictions
                .values()
                .filter(|r| {
                    r.prediction.session_id == meta.session_id && r.prediction.model_id == self.model.model_id()
                })
                .map(|r| r.prediction.clone())
                .collect();
            let features: Vec<WindowFeatures> = if predictions.is_empty() {
                Vec::new()
            } else {
                self.windows(meta)?.iter().map(|w| extract_features(w, DEFAULT_CONTACT_THRESHOLD_N)).collect()
            };
            per_session.push((meta, predictions, features));
        }
        let inputs: Vec<SessionInput<'_>> = per_session
            .iter()
            .map(|(m, p, f)| SessionInput { session_id: &m.session_id, date: m.date, predictions: p, features: f })
            .collect();
        let series = session_series(&inputs);
        let medications = self.medications(patient_id)?;
        Ok(TrendView {
            patient_id: patient_id.to_string(),
            forecast: forecast(&series, horizon),
            timeline: overlay(&series, &medications),
            series,
            medications,
        })
    }

    pub fn add_medication(
        &mut self,
        who: &Principal,
        patient_id: &str,
        event: MedicationEvent,
    ) -> Result<Vec<MedicationEvent>> {
        let actor = self.authorize(who, Endpoint::AddMedication)?;
        if !self.store.patient_exists(patient_id) {
            return Err(ServiceError::UnknownPatient(patient_id.to_string()));
        }
        event.validate()?;
        let mut all = self.medications(patient_id)?;
        all.push(event.clone());
        all.sort_by_key(|e| e.date);
        self.store.write_json(&self.store.medications_file(patient_id), &all)?;
        self.audit.append(
            actor,
            EventKind::MedicationRecorded,
            json!({"patient_id": patient_id, "date": event.date, "label": event.label, "note": event.note}),
        )?;
        Ok(all)
    }

    pub fn compute_cas(&mut self, who: &Principal, ratings: &Ratings) -> Result<CasReport> {
        let actor = self.authorize(who, Endpoint::ComputeCas)?;
        let report = compute_cas(&self.cas_template.apply(ratings)?)?;
        self.audit.append(
            actor,
            EventKind::CasComputed,
            json!({
                "total": report.total,
                "total_display": report.total_display,
                "contributions": report.contributions,
                "config_hash": report.config_hash,
            }),
        )?;
        Ok(report)
    }

    pub fn audit_verify(&self, who: &Principal) -> Result<Verification> {
        self.authorize(who, Endpoint::AuditVerify)?;
        Ok(self.audit.verify()?)
    }

    pub fn audit_export(&self, who: &Principal, from: u64, to: u64) -> Result<AuditBundle> {
        self.authorize(who, Endpoint::AuditExport)?;
        Ok(self.audit.export_range(from, to)?)
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            model_id: self.model.model_id().to_string(),
            version: env!("CARGO_PKG_VERSION").into(),
            audit_entries: self.audit.len(),
        }
    }

    /// All stored predictions, for snapshots and listings.
    pub fn predictions(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.predictions.values()
    }

    pub fn contests(&self) -> impl Iterator<Item = &ContestCase> {
        self.contests.values()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionMeta> {
        self.sessions.values()
    }
}

fn replay_contests(records: &[ContestRecord]) -> Result<BTreeMap<String, ContestCase>> {
    let mut grouped: BTreeMap<&str, Vec<&ContestRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(&r.case_id).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (case_id, recs) in grouped {
        let case = ContestCase::replay(recs.iter().map(|r| &r.change))
            .map_err(|e| ServiceError::StoreCorrupt(format!("contest {case_id}: {e}")))?;
        let last = recs.last().expect("group is non-empty").version;
        if case.version != last {
            return Err(ServiceError::StoreCorrupt(format!(
                "contest {case_id} replays to version {} but log ends at {last}",
                case.version
            )));
        }
        out.insert(case_id.to_string(), case);
    }
    Ok(out)
}
