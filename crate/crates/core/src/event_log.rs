//! Event-logger line parsing, PV filtering and ordered event streams.
//!
//! Wire format, one event per line:
//!
//! ```text
//! YYYY-MM-DD hh:mm:ss[.f|.ff|.fff] <TAB> pv <TAB> prev_state <TAB> new_state <TAB> description
//! ```
//!
//! The description may be empty but its separating tab is still required.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const FIELD_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected {FIELD_COUNT} tab-separated fields, found {0}")]
    MalformedLine(usize),
    #[error("bad timestamp {0:?}")]
    BadTimestamp(String),
    #[error("empty PV name")]
    EmptyPv,
    #[error("empty state field")]
    EmptyState,
    #[error("line is not valid UTF-8")]
    InvalidUtf8,
}

impl ParseError {
    /// Short machine-readable name used in the diagnostics stream.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::MalformedLine(_) => "MalformedLine",
            ParseError::BadTimestamp(_) => "BadTimestamp",
            ParseError::EmptyPv => "EmptyPV",
            ParseError::EmptyState => "EmptyState",
            ParseError::InvalidUtf8 => "InvalidUtf8",
        }
    }
}

/// Wall-clock label with millisecond resolution. Timezone-naive and never converted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    pub fn as_naive(&self) -> NaiveDateTime {
        self.0
    }

    /// Milliseconds since the Unix epoch, interpreting the label as UTC.
    pub fn millis(&self) -> i64 {
        self.0.and_utc().timestamp_millis()
    }

    pub fn from_millis(ms: i64) -> Option<Self> {
        chrono::DateTime::from_timestamp_millis(ms).map(|dt| Timestamp(dt.naive_utc()))
    }
}

impl FromStr for Timestamp {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseError::BadTimestamp(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, Some(f)),
            None => (s, None),
        };
        // chrono accepts single-digit fields; the wire format does not.
        if whole.len() != 19 {
            return Err(bad());
        }
        let base = NaiveDateTime::parse_from_str(whole, "%Y-%m-%d %H:%M:%S").map_err(|_| bad())?;
        let millis = match frac {
            None => 0,
            Some(f) if (1..=3).contains(&f.len()) && f.bytes().all(|b| b.is_ascii_digit()) => {
                let padded = format!("{f:0<3}");
                padded.parse::<u32>().map_err(|_| bad())?
            }
            Some(_) => return Err(bad()),
        };
        base.with_nanosecond(millis * 1_000_000)
            .map(Timestamp)
            .ok_or_else(bad)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d %H:%M:%S%.3f"))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub timestamp: Timestamp,
    pub pv: String,
    pub prev_state: String,
    pub new_state: String,
    pub description: String,
    pub line_no: u64,
}

impl LogEvent {
    /// Formats the event back into its tab-separated wire form.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.timestamp, self.pv, self.prev_state, self.new_state, self.description
        )
    }
}

/// Parses one logical line (no trailing newline). `line_no` is set to 0.
pub fn parse_line(line: &str) -> Result<LogEvent, ParseError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != FIELD_COUNT {
        return Err(ParseError::MalformedLine(fields.len()));
    }
    let timestamp: Timestamp = fields[0].parse()?;
    if fields[1].is_empty() {
        return Err(ParseError::EmptyPv);
    }
    if fields[2].is_empty() || fields[3].is_empty() {
        return Err(ParseError::EmptyState);
    }
    Ok(LogEvent {
        timestamp,
        pv: fields[1].to_string(),
        prev_state: fields[2].to_string(),
        new_state: fields[3].to_string(),
        description: fields[4].to_string(),
        line_no: 0,
    })
}

/// Exact PV names plus `*`/`?` glob patterns. Matching is case-sensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterList {
    pub exact: BTreeSet<String>,
    pub globs: Vec<String>,
}

impl FilterList {
    pub fn is_empty(&self) -> bool {
        self.exact.is_empty() && self.globs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.globs.len()
    }

    pub fn add(&mut self, entry: &str) {
        if entry.contains(['*', '?']) {
            self.globs.push(entry.to_string());
        } else {
            self.exact.insert(entry.to_string());
        }
    }

    pub fn is_filtered(&self, pv: &str) -> bool {
        self.exact.contains(pv) || self.globs.iter().any(|g| glob_match(g, pv))
    }
}

/// Parses the filter-file format: one entry per line, `#` starts a comment.
pub fn load_filter(text: &str) -> FilterList {
    let mut filter = FilterList::default();
    for raw in text.lines() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if !line.is_empty() {
            filter.add(line);
        }
    }
    filter
}

pub fn is_filtered(filter: &FilterList, pv: &str) -> bool {
    filter.is_filtered(pv)
}

/// Iterative glob matcher with single-star backtracking; linear in practice.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || (p[pi] != '*' && p[pi] == t[ti])) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Inclusive time window applied when selecting a training corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Timestamp>,
}

impl TimeRange {
    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start.is_none_or(|s| ts >= s) && self.end.is_none_or(|e| ts <= e)
    }
}

/// A skipped input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line_no: u64,
    pub error: ParseError,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.line_no, self.error.kind(), self.error)
    }
}

#[derive(Debug, Error)]
#[error("read failed after {yielded} events: {source}")]
pub struct ReadError {
    pub yielded: u64,
    #[source]
    pub source: std::io::Error,
}

/// Streaming reader yielding non-filtered events in input order.
///
/// Malformed lines are skipped and collected as [`Diagnostic`]s; blank lines
/// are ignored. An I/O error ends the stream.
pub struct EventReader<'f, R> {
    source: R,
    filter: &'f FilterList,
    buf: Vec<u8>,
    line_no: u64,
    yielded: u64,
    filtered: u64,
    diagnostics: Vec<Diagnostic>,
    done: bool,
}

impl<'f, R: BufRead> EventReader<'f, R> {
    pub fn new(source: R, filter: &'f FilterList) -> Self {
        EventReader {
            source,
            filter,
            buf: Vec::new(),
            line_no: 0,
            yielded: 0,
            filtered: 0,
            diagnostics: Vec::new(),
            done: false,
        }
    }

    pub fn lines_read(&self) -> u64 {
        self.line_no
    }

    pub fn filtered(&self) -> u64 {
        self.filtered
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// Drains diagnostics gathered so far.
    pub fn take_diagnostics(&mut self) -> Vec<Diagnostic> {
        std::mem::take(&mut self.diagnostics)
    }
}

impl<R: BufRead> Iterator for EventReader<'_, R> {
    type Item = Result<LogEvent, ReadError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.source.read_until(b'\n', &mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line_no += 1;
                    let mut bytes = self.buf.as_slice();
                    if let Some(b) = bytes.strip_suffix(b"\n") {
                        bytes = b;
                    }
                    if let Some(b) = bytes.strip_suffix(b"\r") {
                        bytes = b;
                    }
                    if bytes.is_empty() {
                        continue;
                    }
                    let parsed = std::str::from_utf8(bytes)
                        .map_err(|_| ParseError::InvalidUtf8)
                        .and_then(parse_line);
                    match parsed {
                        Ok(mut ev) => {
                            if self.filter.is_filtered(&ev.pv) {
                                self.filtered += 1;
                                continue;
                            }
                            ev.line_no = self.line_no;
                            self.yielded += 1;
                            return Some(Ok(ev));
                        }
                        Err(error) => self.diagnostics.push(Diagnostic {
                            line_no: self.line_no,
                            error,
                        }),
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(source) => {
                    self.done = true;
                    return Some(Err(ReadError {
                        yielded: self.yielded,
                        source,
                    }));
                }
            }
        }
        None
    }
}

/// Reads a whole source, reporting each malformed line to `on_diagnostic`.
pub fn read_events<R: BufRead>(
    source: R,
    filter: &FilterList,
    mut on_diagnostic: impl FnMut(&Diagnostic),
) -> Result<Vec<LogEvent>, ReadError> {
    let mut reader = EventReader::new(source, filter);
    let mut events = Vec::new();
    while let Some(item) = reader.next() {
        for d in reader.take_diagnostics() {
            on_diagnostic(&d);
        }
        events.push(item?);
    }
    for d in reader.take_diagnostics() {
        on_diagnostic(&d);
    }
    Ok(events)
}
