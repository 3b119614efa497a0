mod support;

use axum::http::StatusCode;
use congait_core::audit::{read_entries, EventKind};
use congait_core::synth::GaitProfile;
use congait_server::access::{allowed, Endpoint};
use serde_json::{json, Value};
use support::{app, send, vgrf, ROLES};

fn ingest_body(patient: &str, session: &str, cohort: &str, date: &str, text: String) -> Value {
    json!({"patient_id": patient, "session_id": session, "cohort": cohort, "date": date, "vgrf": text})
}

fn request_for(endpoint: Endpoint) -> (&'static str, String, Option<Value>) {
    use Endpoint as E;
    match endpoint {
        E::IngestSession => {
            ("POST", "/sessions".into(), Some(ingest_body("p9", "s9", "PD", "2025-01-01", "junk".into())))
        }
        E::SessionFeatures => ("GET", "/sessions/nope/features".into(), None),
        E::SessionWindow => ("GET", "/sessions/nope/windows/0".into(), None),
        E::RunSession => ("POST", "/sessions/nope/run".into(), None),
        E::GetPrediction => ("GET", "/predictions/nope".into(), None),
        E::GetRelevance => ("GET", "/predictions/nope/relevance".into(), None),
        E::OpenContest => {
            ("POST", "/predictions/nope/contests".into(), Some(json!({"argument_type": "factual_error", "note": "n"})))
        }
        E::GetContest => ("GET", "/contests/nope".into(), None),
        E::ContestDecision => {
            ("POST", "/contests/nope/decision".into(), Some(json!({"decision": "accept", "expected_version": 1})))
        }
        E::ResolveContest => ("POST", "/contests/nope/resolve".into(), Some(json!({"verdict": "upheld"}))),
        E::Trend => ("GET", "/patients/nope/trend".into(), None),
        E::AddMedication => (
            "POST",
            "/patients/nope/medications".into(),
            Some(json!({"date": "2025-01-01", "label": "levodopa 100 mg"})),
        ),
        E::ComputeCas => ("POST", "/cas/compute".into(), Some(json!({"scores": {}}))),
        E::AuditVerify => ("GET", "/audit/verify".into(), None),
        E::AuditExport => ("GET", "/audit/export?from=0&to=0".into(), None),
        E::Health => ("GET", "/health".into(), None),
    }
}

#[tokio::test]
async fn every_endpoint_and_role_matches_the_access_table() {
    let dir = tempfile::tempdir().unwrap();
    let (router, _) = app(dir.path(), None);
    for endpoint in Endpoint::ALL {
        for (id, role) in ROLES {
            let (method, uri, body) = request_for(endpoint);
            let (status, value) = send(&router, method, &uri, Some(id), body).await;
            if allowed(endpoint, role) {
                assert_ne!(status, StatusCode::FORBIDDEN, "{endpoint:?} as {role}: {value}");
                assert_ne!(status, StatusCode::UNAUTHORIZED, "{endpoint:?} as {role}");
            } else {
                assert_eq!(status, StatusCode::FORBIDDEN, "{endpoint:?} as {role}: {value}");
            }
        }
    }
}

#[tokio::test]
async fn missing_or_bad_tokens_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (router, _) = app(dir.path(), None);
    let (status, _) = send(&router, "GET", "/audit/verify", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = send(&router, "GET", "/audit/verify", Some("intruder"), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = send(&router, "GET", "/health", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_id"].as_str().unwrap().len(), 64);
    assert!(body["version"].is_string());
}

/// Audit payloads mention the resource id of each successful mutation.
fn audit_mentions(root: &std::path::Path, id: &str) -> bool {
    read_entries(&root.join("store/audit.log"))
        .unwrap()
        .iter()
        .any(|e| e.payload.to_string().contains(&format!("\"{id}\"")))
}

#[tokio::test]
async fn full_flow_with_audit_coverage_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (router, _) = app(root, None);

    let (status, body) = send(
        &router,
        "POST",
        "/sessions",
        Some("admin"),
        Some(ingest_body("ctl1", "c1", "Control", "2025-01-01", vgrf(&GaitProfile::healthy(), 30.0, 1))),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert!(audit_mentions(root, "c1"));

    for (i, day) in ["2025-01-10", "2025-02-10", "2025-03-10"].iter().enumerate() {
        let sid = format!("s{i}");
        let (status, body) = send(
            &router,
            "POST",
            "/sessions",
            Some("admin"),
            Some(ingest_body("p1", &sid, "PD", day, vgrf(&GaitProfile::parkinsonian(), 60.0, 10 + i as u64))),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        assert_eq!(body["windows"], 6);
        assert!(audit_mentions(root, &sid));
    }
    let (status, _) = send(
        &router,
        "POST",
        "/sessions",
        Some("admin"),
        Some(ingest_body("p1", "s0", "PD", "2025-01-10", vgrf(&GaitProfile::parkinsonian(), 20.0, 3))),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, features) = send(&router, "GET", "/sessions/s0/features", Some("clinician"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(features["windows"].as_array().unwrap().len(), 6);
    assert!(features["windows"][0]["indicators"].is_object());
    let (status, window) = send(&router, "GET", "/sessions/s0/windows/2", Some("clinician"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(window["channels"].as_array().unwrap().len(), 18);
    assert_eq!(window["channels"][0]["samples"].as_array().unwrap().len(), 1000);
    let (status, _) = send(&router, "GET", "/sessions/s0/windows/6", Some("clinician"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let before = read_entries(&root.join("store/audit.log")).unwrap().len();
    let (status, run) = send(&router, "POST", "/sessions/s0/run", Some("clinician"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(run.as_array().unwrap().len(), 6);
    let after = read_entries(&root.join("store/audit.log")).unwrap().len();
    assert_eq!(after - before, 12);
    let (_, again) = send(&router, "POST", "/sessions/s0/run", Some("clinician"), None).await;
    assert_eq!(again, run);
    assert_eq!(read_entries(&root.join("store/audit.log")).unwrap().len(), after);
    for sid in ["s1", "s2"] {
        let (status, _) = send(&router, "POST", &format!("/sessions/{sid}/run"), Some("clinician"), None).await;
        assert_eq!(status, StatusCode::OK);
    }

    let pid = run[0]["prediction"]["prediction_id"].as_str().unwrap().to_string();
    assert!(audit_mentions(root, &pid));
    let (status, relevance) =
        send(&router, "GET", &format!("/predictions/{pid}/relevance?matrix=true"), Some("reviewer"), None).await;
    assert_eq!(status, StatusCode::OK, "{relevance}");

    let (status, case) = send(
        &router,
        "POST",
        &format!("/predictions/{pid}/contests"),
        Some("clinician"),
        Some(json!({"argument_type": "Reasoning Flaw", "note": "heel sensors look noisy"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{case}");
    assert_eq!(case["state"], "Justified");
    let case_id = case["case_id"].as_str().unwrap().to_string();
    assert!(audit_mentions(root, &case_id));

    let stale = case["version"].as_u64().unwrap() - 1;
    let (status, _) = send(
        &router,
        "POST",
        &format!("/contests/{case_id}/decision"),
        Some("clinician"),
        Some(json!({"decision": "accept", "expected_version": stale})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut version = case["version"].as_u64().unwrap();
    let mut state = Value::Null;
    for note in ["still disagree", "cadence is normal"] {
        let (status, next) = send(
            &router,
            "POST",
            &format!("/contests/{case_id}/decision"),
            Some("clinician"),
            Some(json!({"decision": "recontest", "note": note, "expected_version": version})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{next}");
        version = next["version"].as_u64().unwrap();
        state = next["state"].clone();
    }
    assert_eq!(state, "Escalated");
    let (status, _) = send(
        &router,
        "POST",
        &format!("/contests/{case_id}/resolve"),
        Some("clinician"),
        Some(json!({"verdict": "upheld"})),
    )
    .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, resolved) = send(
        &router,
        "POST",
        &format!("/contests/{case_id}/resolve"),
        Some("reviewer"),
        Some(json!({"verdict": "amended", "new_stage": 2.5, "expected_version": version})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{resolved}");
    assert_eq!(resolved["state"], "Resolved");
    let (status, _) = send(
        &router,
        "POST",
        &format!("/contests/{case_id}/decision"),
        Some("clinician"),
        Some(json!({"decision": "accept", "expected_version": resolved["version"]})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, view) = send(&router, "GET", &format!("/predictions/{pid}"), Some("clinician"), None).await;
    assert_eq!(view["flagged_stage"], 2.5);
    assert_eq!(view["contest_ids"], json!([case_id]));

    let (status, meds) = send(
        &router,
        "POST",
        "/patients/p1/medications",
        Some("admin"),
        Some(json!({"date": "2025-02-01", "label": "levodopa 100 mg"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{meds}");
    assert!(audit_mentions(root, "p1"));
    let (status, trend) = send(&router, "GET", "/patients/p1/trend?horizon=2", Some("clinician"), None).await;
    assert_eq!(status, StatusCode::OK, "{trend}");
    assert_eq!(trend["series"].as_array().unwrap().len(), 3);
    assert_eq!(trend["forecast"]["outcome"], "forecast");
    assert_eq!(trend["forecast"]["points"].as_array().unwrap().len(), 2);
    let (status, _) = send(&router, "GET", "/patients/ghost/trend", Some("clinician"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, cas) = send(
        &router,
        "POST",
        "/cas/compute",
        Some("admin"),
        Some(serde_json::from_str(congait_core::cas::DEFAULT_CAS_RATINGS).unwrap()),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{cas}");
    assert_eq!(cas["total_display"], "0.970");
    let entries = read_entries(&root.join("store/audit.log")).unwrap();
    assert_eq!(entries.last().unwrap().event_kind, EventKind::CasComputed);

    let (status, verify) = send(&router, "GET", "/audit/verify", Some("reviewer"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(verify["status"], "Ok", "{verify}");
    let (status, bundle) = send(&router, "GET", "/audit/export?from=2&to=5", Some("admin"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bundle["entries"].as_array().unwrap().len(), 4);
    let (status, _) = send(&router, "GET", "/audit/export?from=2&to=100000", Some("admin"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // Snapshot, drop, reopen.
    let mut snapshot = Vec::new();
    for r in run.as_array().unwrap() {
        let id = r["prediction"]["prediction_id"].as_str().unwrap();
        snapshot.push(send(&router, "GET", &format!("/predictions/{id}"), Some("reviewer"), None).await.1);
    }
    let (_, case_before) = send(&router, "GET", &format!("/contests/{case_id}"), Some("reviewer"), None).await;
    let audit_len = read_entries(&root.join("store/audit.log")).unwrap().len();
    drop(router);

    let (reopened, _) = app(root, None);
    for (r, before) in run.as_array().unwrap().iter().zip(&snapshot) {
        let id = r["prediction"]["prediction_id"].as_str().unwrap();
        let (_, after) = send(&reopened, "GET", &format!("/predictions/{id}"), Some("reviewer"), None).await;
        assert_eq!(&after, before);
    }
    let (_, case_after) = send(&reopened, "GET", &format!("/contests/{case_id}"), Some("reviewer"), None).await;
    assert_eq!(case_after, case_before);
    // Same configuration: no new ConfigChanged entry.
    assert_eq!(read_entries(&root.join("store/audit.log")).unwrap().len(), audit_len);
}

#[tokio::test]
async fn tampered_store_refuses_to_open() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    {
        let (router, _) = app(root, None);
        send(
            &router,
            "POST",
            "/sessions",
            Some("admin"),
            Some(ingest_body("p1", "s1", "PD", "2025-01-01", vgrf(&GaitProfile::parkinsonian(), 20.0, 2))),
        )
        .await;
    }
    let log = root.join("store/audit.log");
    let text = std::fs::read_to_string(&log).unwrap().replace("\"s1\"", "\"s2\"");
    std::fs::write(&log, text).unwrap();
    let err = congait_server::Service::open_with_client(support::config(root), false, None).err().unwrap();
    assert!(matches!(err, congait_server::ServiceError::StoreCorrupt(_)), "{err}");
    assert!(congait_server::Service::open_with_client(support::config(root), true, None).is_ok());
}
