//! Library-level walk through the whole prediction and contest flow.

use congait_core::audit::{verify_file, Actor, AuditLog, EventKind, Verification};
use congait_core::contest::{open_contest, ArgumentType, CaseState, Decision, Role, Verdict, DEFAULT_MAX_ROUNDS};
use congait_core::explain::{aggregate_relevance, lrp, LrpConfig};
use congait_core::ingest::{parse_vgrf, segment_windows, to_vgrf_text, Cohort, RecordMeta};
use congait_core::justify::{compose_justification, ContestContext, JustificationSource, RuleBase};
use congait_core::model::{predict, reference_model};
use congait_core::synth::{synthetic_record, GaitProfile};
use congait_core::Stage;
use serde_json::json;

#[test]
fn predict_explain_justify_contest_and_audit() {
    let meta = RecordMeta { patient_id: "p01".into(), session_id: "s01".into(), cohort: Cohort::PD };
    let synthetic = synthetic_record(meta.clone(), &GaitProfile::parkinsonian(), 60.0, 100.0, 4).unwrap();
    let record = parse_vgrf(&to_vgrf_text(&synthetic), meta).unwrap();
    let windows = segment_windows(&record, 10.0);
    assert_eq!(windows.len(), 6);

    let model = reference_model();
    let rules = RuleBase::shipped();
    let dir = tempfile::tempdir().unwrap();
    let mut log = AuditLog::open(dir.path().join("audit.log")).unwrap();
    let system = Actor::new(Role::SystemDelegate, "system");
    let clinician = Actor::new(Role::Clinician, "dr-k");

    let mut outputs = Vec::new();
    for w in &windows {
        let prediction = predict(&model, w).unwrap();
        let mut map = lrp(&model, w, prediction.predicted_index, LrpConfig::default()).unwrap();
        map.prediction_id = Some(prediction.prediction_id.clone());
        let deficit = (map.total() - map.conservation.target_logit).abs();
        assert!(deficit <= map.conservation.bias_absorbed.abs() + 1e-3 * map.conservation.target_logit.abs().max(1.0));
        let summary = aggregate_relevance(&map, 3, 1.0);
        assert!(summary.top_segments.iter().all(|s| s.start_s >= w.start_s && s.end_s <= w.end_s + 1e-9));
        log.append(system.clone(), EventKind::PredictionIssued, json!({"prediction_id": prediction.prediction_id}))
            .unwrap();
        log.append(system.clone(), EventKind::ExplanationIssued, json!({"prediction_id": prediction.prediction_id}))
            .unwrap();
        outputs.push((prediction, summary));
    }

    let (prediction, summary) = &outputs[2];
    let registry = |id: &str| outputs.iter().any(|(p, _)| p.prediction_id == id);
    let mut case = open_contest(
        &registry,
        "case-1",
        &prediction.prediction_id,
        ArgumentType::ReasoningFlaw,
        "relevance sits on a channel that was off the foot",
        Role::Clinician,
        DEFAULT_MAX_ROUNDS,
    )
    .unwrap();
    log.append(clinician.clone(), EventKind::ContestOpened, json!({"case_id": case.case_id})).unwrap();

    loop {
        let ctx = ContestContext {
            contest_id: case.case_id.clone(),
            argument_type: case.argument_type,
            note: case.notes.last().unwrap().clone(),
            round: case.round,
        };
        let composed = compose_justification(prediction, summary, &rules, Some(&ctx), None).unwrap();
        assert_eq!(composed.justification.source, JustificationSource::Fallback);
        assert!(composed.justification.cited_channels.iter().all(|c| summary.ranked_channel_names().contains(c)));
        case = case.attach_justification(composed.justification, Role::SystemDelegate, case.version).unwrap();
        log.append(system.clone(), EventKind::JustificationIssued, json!({"case_id": case.case_id})).unwrap();
        case = case
            .clinician_decision(
                &Decision::ReContest { note: format!("round {} unconvincing", case.round) },
                Role::Clinician,
                case.version,
            )
            .unwrap();
        log.append(clinician.clone(), EventKind::ContestTransition, json!({"case_id": case.case_id})).unwrap();
        if case.state == CaseState::Escalated {
            break;
        }
    }
    assert_eq!(case.round, DEFAULT_MAX_ROUNDS);
    assert_eq!(case.justifications.len(), 2);

    let case =
        case.resolve_escalation(Verdict::Amended { new_stage: Stage(2.5) }, Role::Reviewer, case.version).unwrap();
    log.append(Actor::new(Role::Reviewer, "board"), EventKind::ContestTransition, json!({"case_id": case.case_id}))
        .unwrap();
    assert_eq!(case.state, CaseState::Resolved);

    // 6 windows × 2, open, 2 × (justify + decide), resolve.
    assert_eq!(verify_file(log.path()).unwrap(), Verification::Ok { entries: 18 });
}
