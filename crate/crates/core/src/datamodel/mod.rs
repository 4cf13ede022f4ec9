//! Shared message types exchanged between services.
//!
//! A [`Thing`] is a single sensor or actuator reading. Things travel through the broker
//! wrapped in an [`Envelope`], encoded either as compact msgpack ([`Format::Binary`], the
//! default between services) or as JSON ([`Format::Json`], for web-facing consumers).

mod codec;
mod subject;

use std::fmt;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

pub use codec::{decode, encode, CodecError};
pub use subject::{is_valid_token, subject_for_thing, Segment, Subject, MAX_SUBJECT_LEN};

/// Largest accepted [`Value::Text`] payload, in bytes.
pub const MAX_TEXT_LEN: usize = 64 * 1024;

/// How far ahead of the local wall clock a timestamp may be.
pub const MAX_CLOCK_SKEW: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DataError {
    #[error("invalid segment {0:?}: must be non-empty and match [A-Za-z0-9_-]+")]
    InvalidSegment(String),
    #[error("invalid subject {subject:?}: {reason}")]
    InvalidSubject {
        subject: String,
        reason: &'static str,
    },
    #[error("wildcard subject {0} cannot be published to")]
    WildcardPublish(String),
    #[error("float values must be finite")]
    NonFiniteFloat,
    #[error("text value of {0} bytes exceeds the 64 KiB limit")]
    TextTooLong(usize),
    #[error("timestamp {0} ms lies more than 24 h in the future")]
    FarFutureTimestamp(i64),
}

/// Milliseconds since the Unix epoch, UTC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_millis(millis: i64) -> Self {
        Timestamp(millis)
    }

    pub fn now() -> Self {
        SystemTime::now().into()
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }
}

impl From<SystemTime> for Timestamp {
    fn from(t: SystemTime) -> Self {
        match t.duration_since(UNIX_EPOCH) {
            Ok(d) => Timestamp(d.as_millis() as i64),
            Err(e) => Timestamp(-(e.duration().as_millis() as i64)),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Measurement payload of a [`Thing`].
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Integer(i64),
    Float(f64),
    Boolean(bool),
    Text(String),
}

impl Value {
    fn validate(&self) -> Result<(), DataError> {
        match self {
            Value::Float(f) if !f.is_finite() => Err(DataError::NonFiniteFloat),
            Value::Text(s) if s.len() > MAX_TEXT_LEN => Err(DataError::TextTooLong(s.len())),
            _ => Ok(()),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Integer(_) | Value::Float(_))
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Integer(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Boolean(v) => write!(f, "{v}"),
            Value::Text(v) => write!(f, "{v:?}"),
        }
    }
}

/// A sensor or actuator reading.
///
/// Construction validates every field, so any `Thing` in hand can be encoded and decoded
/// back to an equal value.
#[derive(Clone, Debug, PartialEq)]
pub struct Thing {
    machine: String,
    name: String,
    value: Value,
    timestamp: Timestamp,
    unit: Option<String>,
}

impl Thing {
    pub fn new(
        machine: impl Into<String>,
        name: impl Into<String>,
        value: impl Into<Value>,
        timestamp: Timestamp,
    ) -> Result<Self, DataError> {
        let machine = machine.into();
        let name = name.into();
        let value = value.into();
        for seg in [&machine, &name] {
            if !is_valid_token(seg) {
                return Err(DataError::InvalidSegment(seg.clone()));
            }
        }
        value.validate()?;
        let horizon = Timestamp::from(SystemTime::now() + MAX_CLOCK_SKEW);
        if timestamp > horizon {
            return Err(DataError::FarFutureTimestamp(timestamp.as_millis()));
        }
        Ok(Thing {
            machine,
            name,
            value,
            timestamp,
            unit: None,
        })
    }

    /// Sets the measurement unit. An empty unit means dimensionless.
    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        let unit = unit.into();
        self.unit = (!unit.is_empty()).then_some(unit);
        self
    }

    pub fn machine(&self) -> &str {
        &self.machine
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Value {
        &self.value
    }

    pub fn timestamp(&self) -> Timestamp {
        self.timestamp
    }

    pub fn unit(&self) -> Option<&str> {
        self.unit.as_deref()
    }

    /// The subject this thing is published on.
    pub fn subject(&self) -> Subject {
        subject_for_thing(&self.machine, &self.name)
            .expect("machine and name are validated at construction")
    }
}

/// Wire encoding of an envelope payload.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// msgpack map, used between services.
    #[default]
    Binary,
    /// UTF-8 JSON object, used for web-facing consumers.
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Binary => "binary",
            Format::Json => "json",
        })
    }
}

/// A serialized message bound to a concrete subject.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    subject: Subject,
    format: Format,
    payload: Bytes,
}

impl Envelope {
    pub fn new(
        subject: Subject,
        format: Format,
        payload: impl Into<Bytes>,
    ) -> Result<Self, DataError> {
        if subject.is_wildcard() {
            return Err(DataError::WildcardPublish(subject.to_string()));
        }
        Ok(Envelope {
            subject,
            format,
            payload: payload.into(),
        })
    }

    pub fn from_thing(thing: &Thing, format: Format) -> Self {
        Envelope {
            subject: thing.subject(),
            format,
            payload: encode(thing, format).into(),
        }
    }

    pub fn subject(&self) -> &Subject {
        &self.subject
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn payload(&self) -> &Bytes {
        &self.payload
    }

    /// Decodes the payload under the declared format.
    pub fn thing(&self) -> Result<Thing, CodecError> {
        decode(&self.payload, self.format)
    }
}
