//! Canonical serialization for content hashing.
//!
//! The canonical form is a strict subset of JSON:
//!
//! - maps are written with keys in ascending UTF-8 byte order
//! - no insignificant whitespace
//! - integers in shortest decimal form
//! - byte strings as lowercase hex strings
//! - floats and nulls are rejected
//!
//! Decoding is strict: a byte sequence is accepted only if re-encoding the
//! decoded value reproduces it exactly.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value as Json;

use crate::hash::Hash32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonicalError {
    #[error("unsupported value in canonical content: {0}")]
    UnsupportedValue(String),
    #[error("malformed canonical text: {0}")]
    Malformed(String),
    #[error("input is not in canonical form")]
    NonCanonical,
}

/// Encodes any serializable record into canonical bytes.
pub fn canonical_encode<T: Serialize + ?Sized>(record: &T) -> Result<Vec<u8>, CanonicalError> {
    let json = serde_json::to_value(record).map_err(|e| CanonicalError::UnsupportedValue(e.to_string()))?;
    let mut out = Vec::with_capacity(128);
    write_json(&json, &mut out)?;
    Ok(out)
}

/// SHA-256 of the canonical encoding.
pub fn canonical_hash<T: Serialize + ?Sized>(record: &T) -> Result<Hash32, CanonicalError> {
    Ok(Hash32::digest(&canonical_encode(record)?))
}

/// Decodes canonical bytes, rejecting any input that is not the exact
/// canonical encoding of the decoded value.
pub fn canonical_decode<T: Serialize + DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let value: T = serde_json::from_slice(bytes).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    if canonical_encode(&value)? != bytes {
        return Err(CanonicalError::NonCanonical);
    }
    Ok(value)
}

fn write_json(value: &Json, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Json::Null => return Err(CanonicalError::UnsupportedValue("null".into())),
        Json::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Json::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                return Err(CanonicalError::UnsupportedValue(format!("float {n}")));
            }
        }
        Json::String(s) => write_str(s, out),
        Json::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_json(item, out)?;
            }
            out.push(b']');
        }
        Json::Object(map) => {
            // serde_json's map order depends on crate features; sort explicitly.
            let mut entries: Vec<(&String, &Json)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_str(k, out);
                out.push(b':');
                write_json(v, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_str(s: &str, out: &mut Vec<u8>) {
    // serde_json's string escaping is deterministic and minimal.
    serde_json::to_writer(&mut *out, s).expect("writing to a Vec cannot fail");
}

/// A float-free, null-free value tree used for event payloads.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    /// Converts from a JSON tree, rejecting floats, nulls and integers
    /// outside the signed 64-bit range.
    pub fn from_json(json: Json) -> Result<Self, CanonicalError> {
        Ok(match json {
            Json::Null => return Err(CanonicalError::UnsupportedValue("null".into())),
            Json::Bool(b) => Value::Bool(b),
            Json::Number(n) => Value::Int(
                n.as_i64()
                    .ok_or_else(|| CanonicalError::UnsupportedValue(format!("number {n}")))?,
            ),
            Json::String(s) => Value::Str(s),
            Json::Array(items) => Value::List(items.into_iter().map(Value::from_json).collect::<Result<_, _>>()?),
            Json::Object(map) => Value::Map(
                map.into_iter()
                    .map(|(k, v)| Ok((k, Value::from_json(v)?)))
                    .collect::<Result<_, CanonicalError>>()?,
            ),
        })
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(i) => Json::from(*i),
            Value::Str(s) => Json::String(s.clone()),
            Value::List(items) => Json::Array(items.iter().map(Value::to_json).collect()),
            Value::Map(map) => Json::Object(map.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
        }
    }

    /// Whether any string leaf equals `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        match self {
            Value::Str(s) => s == needle,
            Value::List(items) => items.iter().any(|v| v.mentions(needle)),
            Value::Map(map) => map.values().any(|v| v.mentions(needle)),
            Value::Bool(_) | Value::Int(_) => false,
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Bool(b) => serializer.serialize_bool(*b),
            Value::Int(i) => serializer.serialize_i64(*i),
            Value::Str(s) => serializer.serialize_str(s),
            Value::List(items) => items.serialize(serializer),
            Value::Map(map) => map.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = Json::deserialize(deserializer)?;
        Value::from_json(json).map_err(serde::de::Error::custom)
    }
}

/// Payload map: keys unique and ordered.
pub type Payload = BTreeMap<String, Value>;

/// Converts a serializable struct into a payload map.
pub fn to_payload<T: Serialize>(record: &T) -> Result<Payload, CanonicalError> {
    let json = serde_json::to_value(record).map_err(|e| CanonicalError::UnsupportedValue(e.to_string()))?;
    match Value::from_json(json)? {
        Value::Map(map) => Ok(map),
        other => Err(CanonicalError::UnsupportedValue(format!("payload must be a map, got {other:?}"))),
    }
}

/// Reads a payload map back into a typed struct.
pub fn from_payload<T: DeserializeOwned>(payload: &Payload) -> Result<T, CanonicalError> {
    let json = Json::Object(payload.iter().map(|(k, v)| (k.clone(), v.to_json())).collect());
    serde_json::from_value(json).map_err(|e| CanonicalError::Malformed(e.to_string()))
}
