use chrono::{TimeZone, Utc};
use congait_core::audit::{verify_bytes, Actor, AuditLog, EventKind};
use congait_core::contest::Role;
use congait_core::explain::{aggregate_relevance, lrp, ConvRule, LrpConfig};
use congait_core::ingest::{
    extract_features, parse_vgrf, segment_windows, to_vgrf_text, Cohort, GaitWindow, RecordMeta,
    DEFAULT_CONTACT_THRESHOLD_N,
};
use congait_core::model::{gradient, predict, reference_model};
use congait_core::synth::{synthetic_record, GaitProfile};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use serde_json::json;
use std::hint::black_box;

fn meta() -> RecordMeta {
    RecordMeta { patient_id: "p".into(), session_id: "s".into(), cohort: Cohort::PD }
}

fn session_text() -> String {
    to_vgrf_text(&synthetic_record(meta(), &GaitProfile::parkinsonian(), 60.0, 100.0, 1).unwrap())
}

fn window() -> GaitWindow {
    let record = parse_vgrf(&session_text(), meta()).unwrap();
    segment_windows(&record, 10.0).remove(0)
}

fn ingest(c: &mut Criterion) {
    let text = session_text();
    c.bench_function("parse_and_window_60s", |b| {
        b.iter(|| segment_windows(&parse_vgrf(black_box(&text), meta()).unwrap(), 10.0))
    });
    let w = window();
    c.bench_function("features_10s", |b| b.iter(|| extract_features(black_box(&w), DEFAULT_CONTACT_THRESHOLD_N)));
}

fn model(c: &mut Criterion) {
    let model = reference_model();
    let w = window();
    c.bench_function("predict_window", |b| b.iter(|| predict(&model, black_box(&w)).unwrap()));
    c.bench_function("input_gradient", |b| b.iter(|| gradient(&model, black_box(&w.samples), 0).unwrap()));
    let mut group = c.benchmark_group("lrp");
    for rule in [ConvRule::Epsilon, ConvRule::ZPlus] {
        let config = LrpConfig { conv_rule: rule, ..LrpConfig::default() };
        group.bench_function(format!("{rule:?}"), |b| {
            b.iter(|| aggregate_relevance(&lrp(&model, black_box(&w), 0, config).unwrap(), 3, 1.0))
        });
    }
    group.finish();
}

fn audit(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.log");
    let mut log = AuditLog::open(&path).unwrap();
    let t0 = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    for i in 0..1000i64 {
        let payload = json!({"prediction_id": format!("{i:064x}"), "window_index": i % 6});
        let at = t0 + chrono::Duration::seconds(i);
        log.append_at(at, Actor::new(Role::Clinician, "dr"), EventKind::PredictionIssued, payload).unwrap();
    }
    let bytes = std::fs::read(&path).unwrap();
    c.bench_function("audit_verify_1000", |b| b.iter(|| verify_bytes(black_box(&bytes))));
    c.bench_function("audit_append", |b| {
        b.iter_batched(
            || json!({"case_id": "case-0001"}),
            |payload| log.append(Actor::new(Role::Reviewer, "rv"), EventKind::ContestTransition, payload).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, ingest, model, audit);
criterion_main!(benches);
