//! On-disk layout. Every write in the service goes through here.
//!
//! ```text
//! <root>/patients/<patient>/sessions/<session>.vgrf
//! <root>/patients/<patient>/sessions/<session>.meta.json
//! <root>/patients/<patient>/medications.json
//! <root>/models/<model_id>.model
//! <root>/store/audit.log
//! <root>/store/contests.events
//! <root>/store/predictions.index
//! ```

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use congait_core::ingest::Cohort;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub patient_id: String,
    pub session_id: String,
    pub cohort: Cohort,
    pub date: NaiveDate,
    pub sample_rate_hz: f64,
    pub rows: usize,
    pub windows: usize,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Identifiers become path components, so they are restricted.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("patients"))?;
        fs::create_dir_all(root.join("models"))?;
        fs::create_dir_all(root.join("store"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn audit_log(&self) -> PathBuf {
        self.root.join("store/audit.log")
    }

    pub fn contest_events(&self) -> PathBuf {
        self.root.join("store/contests.events")
    }

    pub fn prediction_index(&self) -> PathBuf {
        self.root.join("store/predictions.index")
    }

    pub fn model_file(&self, model_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{model_id}.model"))
    }

    pub fn patient_dir(&self, patient_id: &str) -> PathBuf {
        self.root.join("patients").join(patient_id)
    }

    pub fn session_file(&self, patient_id: &str, session_id: &str) -> PathBuf {
        self.patient_dir(patient_id).join("sessions").join(format!("{session_id}.vgrf"))
    }

    fn session_meta_file(&self, patient_id: &str, session_id: &str) -> PathBuf {
        self.patient_dir(patient_id).join("sessions").join(format!("{session_id}.meta.json"))
    }

    pub fn medications_file(&self, patient_id: &str) -> PathBuf {
        self.patient_dir(patient_id).join("medications.json")
    }

    pub fn patient_exists(&self, patient_id: &str) -> bool {
        valid_id(patient_id) && self.patient_dir(patient_id).is_dir()
    }

    /// Writes the recording first, then its metadata; a session exists once
    /// its metadata file does.
    pub fn write_session(&self, meta: &SessionMeta, vgrf: &str) -> io::Result<()> {
        fs::create_dir_all(self.patient_dir(&meta.patient_id).join("sessions"))?;
        write_atomic(&self.session_file(&meta.patient_id, &meta.session_id), vgrf.as_bytes())?;
        let json = serde_json::to_vec_pretty(meta).map_err(io::Error::other)?;
        write_atomic(&self.session_meta_file(&meta.patient_id, &meta.session_id), &json)
    }

    pub fn read_session_text(&self, meta: &SessionMeta) -> io::Result<String> {
        fs::read_to_string(self.session_file(&meta.patient_id, &meta.session_id))
    }

    /// All session metadata, sorted by (patient, date, session).
    pub fn list_sessions(&self) -> io::Result<Vec<SessionMeta>> {
        let mut out = Vec::new();
        for patient in fs::read_dir(self.root.join("patients"))? {
            let dir = patient?.path().join("sessions");
            if !dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.to_string_lossy().ends_with(".meta.json") {
                    let meta: SessionMeta = serde_json::from_slice(&fs::read(&path)?).map_err(io::Error::other)?;
                    out.push(meta);
                }
            }
        }
        out.sort_by(|a, b| (&a.patient_id, a.date, &a.session_id).cmp(&(&b.patient_id, b.date, &b.session_id)));
        Ok(out)
    }

    pub fn read_json<T: DeserializeOwned + Default>(&self, path: &Path) -> io::Result<T> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(io::Error::other),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(T::default()),
            Err(e) => Err(e),
        }
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        write_atomic(path, &bytes)
    }
}

/// Temp file + rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(tmp, path)
}

/// Appends one JSON line durably; a failed append leaves no partial line.
pub fn append_json_line<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(io::Error::other)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let before = f.metadata()?.len();
    let result = f.write_all(&line).and_then(|_| f.sync_data());
    if result.is_err() {
        let _ = f.set_len(before);
    }
    result
}

pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(io::Error::other)).collect()
}
