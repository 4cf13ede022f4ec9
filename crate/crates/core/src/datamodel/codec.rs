use serde::ser::{Serialize, Serializer};

use super::{Format, Thing, Timestamp, Value};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

const KEY_MACHINE: &str = "machine";
const KEY_NAME: &str = "name";
const KEY_VALUE: &str = "value";
const KEY_TIMESTAMP: &str = "timestamp";
const KEY_UNIT: &str = "unit";

/// Serializes `thing`. Field order is fixed, so equal things give identical bytes.
pub fn encode(thing: &Thing, format: Format) -> Vec<u8> {
    match format {
        Format::Binary => encode_binary(thing),
        Format::Json => serde_json::to_vec(&JsonThing::from(thing))
            .expect("a validated thing always serializes"),
    }
}

/// Parses a payload produced by [`encode`] (or any producer following the same schema).
///
/// Unknown keys are ignored.
pub fn decode(payload: &[u8], format: Format) -> Result<Thing, CodecError> {
    let fields = match format {
        Format::Binary => binary_fields(payload)?,
        Format::Json => json_fields(payload)?,
    };
    fields.into_thing()
}

fn encode_binary(thing: &Thing) -> Vec<u8> {
    use rmp::encode as mp;

    let mut buf = Vec::with_capacity(64);
    // Writes into a Vec cannot fail.
    let w = &mut buf;
    mp::write_map_len(w, 5).unwrap();
    mp::write_str(w, KEY_MACHINE).unwrap();
    mp::write_str(w, &thing.machine).unwrap();
    mp::write_str(w, KEY_NAME).unwrap();
    mp::write_str(w, &thing.name).unwrap();
    mp::write_str(w, KEY_VALUE).unwrap();
    match &thing.value {
        Value::Integer(v) => {
            mp::write_sint(w, *v).unwrap();
        }
        Value::Float(v) => mp::write_f64(w, *v).unwrap(),
        Value::Boolean(v) => mp::write_bool(w, *v).unwrap(),
        Value::Text(v) => mp::write_str(w, v).unwrap(),
    }
    mp::write_str(w, KEY_TIMESTAMP).unwrap();
    mp::write_sint(w, thing.timestamp.as_millis()).unwrap();
    mp::write_str(w, KEY_UNIT).unwrap();
    match &thing.unit {
        Some(u) => mp::write_str(w, u).unwrap(),
        None => mp::write_nil(w).unwrap(),
    }
    buf
}

#[derive(serde::Serialize)]
struct JsonThing<'a> {
    machine: &'a str,
    name: &'a str,
    value: &'a Value,
    timestamp: i64,
    unit: Option<&'a str>,
}

impl<'a> From<&'a Thing> for JsonThing<'a> {
    fn from(t: &'a Thing) -> Self {
        JsonThing {
            machine: &t.machine,
            name: &t.name,
            value: &t.value,
            timestamp: t.timestamp.as_millis(),
            unit: t.unit.as_deref(),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Integer(v) => s.serialize_i64(*v),
            Value::Float(v) => s.serialize_f64(*v),
            Value::Boolean(v) => s.serialize_bool(*v),
            Value::Text(v) => s.serialize_str(v),
        }
    }
}

/// Format-independent view of a decoded map before validation.
#[derive(Default)]
struct Fields {
    machine: Option<String>,
    name: Option<String>,
    value: Option<Value>,
    timestamp: Option<i64>,
    unit: Option<String>,
}

impl Fields {
    fn into_thing(self) -> Result<Thing, CodecError> {
        let missing = |k: &str| CodecError::SchemaViolation(format!("missing required key {k:?}"));
        let machine = self.machine.ok_or_else(|| missing(KEY_MACHINE))?;
        let name = self.name.ok_or_else(|| missing(KEY_NAME))?;
        let value = self.value.ok_or_else(|| missing(KEY_VALUE))?;
        let timestamp = self.timestamp.ok_or_else(|| missing(KEY_TIMESTAMP))?;
        let thing = Thing::new(machine, name, value, Timestamp::from_millis(timestamp))
            .map_err(|e| CodecError::SchemaViolation(e.to_string()))?;
        Ok(match self.unit {
            Some(u) => thing.with_unit(u),
            None => thing,
        })
    }
}

fn ill_typed(key: &str, expected: &str) -> CodecError {
    CodecError::SchemaViolation(format!("key {key:?} must be {expected}"))
}

fn binary_fields(payload: &[u8]) -> Result<Fields, CodecError> {
    use rmpv::Value as Mp;

    let mut cursor = payload;
    let root = rmpv::decode::read_value(&mut cursor)
        .map_err(|e| CodecError::MalformedPayload(e.to_string()))?;
    if !cursor.is_empty() {
        return Err(CodecError::MalformedPayload(format!(
            "{} trailing bytes after msgpack value",
            cursor.len()
        )));
    }
    let Mp::Map(entries) = root else {
        return Err(CodecError::SchemaViolation(
            "top-level value is not a map".into(),
        ));
    };

    let text = |key: &str, v: Mp| match v {
        Mp::String(s) => s.into_str().ok_or_else(|| ill_typed(key, "a UTF-8 string")),
        _ => Err(ill_typed(key, "a string")),
    };

    let mut fields = Fields::default();
    for (k, v) in entries {
        let Some(key) = k.as_str() else { continue };
        match key {
            KEY_MACHINE => fields.machine = Some(text(key, v)?),
            KEY_NAME => fields.name = Some(text(key, v)?),
            KEY_VALUE => {
                fields.value = Some(match v {
                    Mp::Integer(i) => Value::Integer(
                        i.as_i64()
                            .ok_or_else(|| ill_typed(key, "within the i64 range"))?,
                    ),
                    Mp::F64(f) => Value::Float(f),
                    Mp::F32(f) => Value::Float(f64::from(f)),
                    Mp::Boolean(b) => Value::Boolean(b),
                    Mp::String(_) => Value::Text(text(key, v)?),
                    _ => return Err(ill_typed(key, "an integer, float, boolean or string")),
                })
            }
            KEY_TIMESTAMP => {
                fields.timestamp = Some(
                    v.as_i64()
                        .ok_or_else(|| ill_typed(key, "integer milliseconds"))?,
                )
            }
            KEY_UNIT => {
                fields.unit = match v {
                    Mp::Nil => None,
                    other => Some(text(key, other)?),
                }
            }
            _ => {}
        }
    }
    Ok(fields)
}

fn json_fields(payload: &[u8]) -> Result<Fields, CodecError> {
    use serde_json::Value as Js;

    let root: Js =
        serde_json::from_slice(payload).map_err(|e| CodecError::MalformedPayload(e.to_string()))?;
    let Js::Object(entries) = root else {
        return Err(CodecError::SchemaViolation(
            "top-level value is not an object".into(),
        ));
    };

    let text = |key: &str, v: Js| match v {
        Js::String(s) => Ok(s),
        _ => Err(ill_typed(key, "a string")),
    };

    let mut fields = Fields::default();
    for (key, v) in entries {
        match key.as_str() {
            KEY_MACHINE => fields.machine = Some(text(&key, v)?),
            KEY_NAME => fields.name = Some(text(&key, v)?),
            KEY_VALUE => {
                fields.value = Some(match v {
                    Js::Number(n) if n.is_i64() => Value::Integer(n.as_i64().unwrap()),
                    Js::Number(n) if n.is_u64() => {
                        return Err(ill_typed(&key, "within the i64 range"))
                    }
                    Js::Number(n) => Value::Float(
                        n.as_f64()
                            .ok_or_else(|| ill_typed(&key, "a finite number"))?,
                    ),
                    Js::Bool(b) => Value::Boolean(b),
                    Js::String(s) => Value::Text(s),
                    _ => return Err(ill_typed(&key, "an integer, float, boolean or string")),
                })
            }
            KEY_TIMESTAMP => {
                fields.timestamp = Some(match &v {
                    Js::Number(n) => n
                        .as_i64()
                        .ok_or_else(|| ill_typed(&key, "integer milliseconds"))?,
                    _ => return Err(ill_typed(&key, "integer milliseconds")),
                })
            }
            KEY_UNIT => {
                fields.unit = match v {
                    Js::Null => None,
                    other => Some(text(&key, other)?),
                }
            }
            _ => {}
        }
    }
    Ok(fields)
}
