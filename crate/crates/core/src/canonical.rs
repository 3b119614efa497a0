//! Canonical structured-text form used for hashing and model identity.
//!
//! Canonical JSON here means: object keys sorted by byte order, no
//! insignificant whitespace, numbers in shortest round-trip decimal form and
//! UTF-8 output. Any two semantically equal documents produce identical bytes.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Serializes `value` into canonical JSON.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    Ok(canonical_value(&value))
}

/// Canonical text for an already-built JSON value.
pub fn canonical_value(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value);
    out
}

/// Re-encodes an arbitrary JSON document in canonical form.
pub fn canonicalize_str(text: &str) -> serde_json::Result<String> {
    let value: Value = serde_json::from_str(text)?;
    Ok(canonical_value(&value))
}

fn write_value(out: &mut String, value: &Value) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                // String serialization of a &str cannot fail.
                out.push_str(&serde_json::to_string(key).expect("string key"));
                out.push(':');
                write_value(out, &map[key]);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
