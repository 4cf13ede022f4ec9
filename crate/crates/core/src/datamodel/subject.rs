use std::fmt;
use std::str::FromStr;

use super::DataError;

/// Longest rendered subject accepted, in bytes.
pub const MAX_SUBJECT_LEN: usize = 255;

/// One dot-separated piece of a [`Subject`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    Literal(String),
    /// `*`, matches exactly one segment.
    Any,
    /// `>`, matches one or more trailing segments.
    Tail,
}

impl Segment {
    fn as_str(&self) -> &str {
        match self {
            Segment::Literal(s) => s,
            Segment::Any => "*",
            Segment::Tail => ">",
        }
    }
}

/// Returns true when `s` is usable as a literal subject segment.
pub fn is_valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// A hierarchical broker routing key such as `v1.thing.filler1.temp_tank`.
///
/// Subjects containing `*` or `>` are patterns and may only be used to subscribe.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subject {
    segments: Vec<Segment>,
    rendered: String,
}

impl Subject {
    pub fn parse(s: &str) -> Result<Self, DataError> {
        let invalid = |reason| DataError::InvalidSubject {
            subject: s.to_owned(),
            reason,
        };
        if s.is_empty() {
            return Err(invalid("empty subject"));
        }
        if s.len() > MAX_SUBJECT_LEN {
            return Err(invalid("longer than 255 bytes"));
        }
        let parts: Vec<&str> = s.split('.').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let seg = match *part {
                "*" => Segment::Any,
                ">" if i + 1 == parts.len() => Segment::Tail,
                ">" => return Err(invalid("'>' is only allowed as the last segment")),
                lit if is_valid_token(lit) => Segment::Literal(lit.to_owned()),
                _ => return Err(invalid("segments must match [A-Za-z0-9_-]+")),
            };
            segments.push(seg);
        }
        Ok(Subject {
            segments,
            rendered: s.to_owned(),
        })
    }

    /// Builds a subject from literal segments only.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut rendered = String::new();
        for (i, t) in tokens.into_iter().enumerate() {
            let t = t.as_ref();
            if !is_valid_token(t) {
                return Err(DataError::InvalidSegment(t.to_owned()));
            }
            if i > 0 {
                rendered.push('.');
            }
            rendered.push_str(t);
        }
        Self::parse(&rendered)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn as_str(&self) -> &str {
        &self.rendered
    }

    pub fn is_wildcard(&self) -> bool {
        self.segments
            .iter()
            .any(|s| !matches!(s, Segment::Literal(_)))
    }

    /// Whether this subject (possibly a pattern) matches the concrete subject `subject`.
    ///
    /// A pattern never matches another pattern.
    pub fn matches(&self, subject: &Subject) -> bool {
        if subject.is_wildcard() {
            return false;
        }
        let mut concrete = subject.segments.iter();
        for seg in &self.segments {
            match seg {
                Segment::Tail => return concrete.next().is_some(),
                Segment::Any => {
                    if concrete.next().is_none() {
                        return false;
                    }
                }
                Segment::Literal(want) => match concrete.next() {
                    Some(Segment::Literal(got)) if got == want => {}
                    _ => return false,
                },
            }
        }
        concrete.next().is_none()
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rendered)
    }
}

impl FromStr for Subject {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subject::parse(s)
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subject a [`Thing`](super::Thing) from `machine` on channel `name` is published on:
/// `v1.thing.<machine>.<name>`.
pub fn subject_for_thing(machine: &str, name: &str) -> Result<Subject, DataError> {
    for seg in [machine, name] {
        if !is_valid_token(seg) {
            return Err(DataError::InvalidSegment(seg.to_owned()));
        }
    }
    Subject::from_tokens(["v1", "thing", machine, name])
}
