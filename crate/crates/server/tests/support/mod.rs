#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use congait_core::contest::Role;
use congait_core::ingest::{to_vgrf_text, Cohort, RecordMeta};
use congait_core::justify::JustificationClient;
use congait_core::synth::{synthetic_record, GaitProfile};
use congait_server::config::{Config, Principal};
use congait_server::{router, Service};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const ROLES: [(&str, Role); 4] = [
    ("admin", Role::Admin),
    ("clinician", Role::Clinician),
    ("reviewer", Role::Reviewer),
    ("system", Role::SystemDelegate),
];

pub fn token(id: &str) -> String {
    format!("tok-{id}")
}

pub fn config(root: &Path) -> Config {
    Config {
        store_root: root.to_path_buf(),
        principals: ROLES
            .iter()
            .map(|(id, role)| Principal {
                id: (*id).into(),
                display_name: (*id).into(),
                role: *role,
                token: Some(token(id)),
            })
            .collect(),
        ..Config::default()
    }
}

pub fn app(root: &Path, client: Option<Box<dyn JustificationClient>>) -> (Router, Arc<Mutex<Service>>) {
    let service = Service::open_with_client(config(root), false, client).unwrap();
    let shared = Arc::new(Mutex::new(service));
    (router(shared.clone()), shared)
}

pub fn vgrf(profile: &GaitProfile, seconds: f64, seed: u64) -> String {
    let meta = RecordMeta { patient_id: "x".into(), session_id: "x".into(), cohort: Cohort::PD };
    to_vgrf_text(&synthetic_record(meta, profile, seconds, 100.0, seed).unwrap())
}

pub async fn send(
    app: &Router,
    method: &str,
    uri: &str,
    who: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(id) = who {
        req = req.header("authorization", format!("Bearer {}", token(id)));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}
