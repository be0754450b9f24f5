//! Line-based event trace.
//!
//! One record per line, tab separated, fixed field order:
//!
//! ```text
//! time_ns  node  kind  frame  seq  where  verdict  detail
//! ```
//!
//! `frame` and `seq` are `-` when not applicable; `detail` is a
//! space-separated list of `key=value` pairs.

use std::fmt::{self, Write as _};
use std::io::{self, BufRead};
use std::path::Path;

use thiserror::Error;

use crate::engine::SimTime;
use crate::frames::FrameId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub node: String,
    pub kind: String,
    pub frame: Option<FrameId>,
    pub seq: Option<u16>,
    pub place: String,
    pub verdict: String,
    pub detail: String,
}

impl TraceRecord {
    /// Value of `key` in the detail column.
    pub fn detail_value(&self, key: &str) -> Option<&str> {
        self.detail.split(' ').find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.time,
            self.node,
            self.kind,
            opt(self.frame),
            opt(self.seq.map(u64::from)),
            if self.place.is_empty() { "-" } else { &self.place },
            self.verdict,
            self.detail
        )
    }
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("line {line}: expected 8 tab-separated fields, found {found}")]
    Fields { line: usize, found: usize },
    #[error("line {line}: bad number {value:?}")]
    Number { line: usize, value: String },
}

impl TraceRecord {
    pub fn parse(line_no: usize, line: &str) -> Result<Self, TraceParseError> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(TraceParseError::Fields { line: line_no, found: f.len() });
        }
        let num = |s: &str| -> Result<Option<u64>, TraceParseError> {
            if s == "-" {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| TraceParseError::Number { line: line_no, value: s.to_string() })
        };
        Ok(TraceRecord {
            time: SimTime(num(f[0])?.unwrap_or(0)),
            node: f[1].to_string(),
            kind: f[2].to_string(),
            frame: num(f[3])?,
            seq: num(f[4])?.map(|x| x as u16),
            place: if f[5] == "-" { String::new() } else { f[5].to_string() },
            verdict: f[6].to_string(),
            detail: f[7].to_string(),
        })
    }
}

/// In-memory trace sink. Disabled traces drop records without formatting.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    enabled: bool,
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace { enabled, records: vec![] }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, r: TraceRecord) {
        if self.enabled {
            self.records.push(r);
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{r}");
        }
        s
    }

    /// Last `n` records, rendered.
    pub fn tail(&self, n: usize) -> String {
        let start = self.records.len().saturating_sub(n);
        self.records[start..].iter().map(|r| format!("{r}\n")).collect()
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| TraceRecord::parse(i + 1, l))
        .collect()
}

/// Outcome of comparing a trace with a golden trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Comparison {
    Identical,
    /// First differing line (1-based) and the two lines, `None` past EOF.
    Differs { line: usize, ours: Option<String>, golden: Option<String> },
}

pub fn compare_bytes(ours: &[u8], golden: &[u8]) -> Comparison {
    if ours == golden {
        return Comparison::Identical;
    }
    let a: Vec<&[u8]> = ours.split(|b| *b == b'\n').collect();
    let b: Vec<&[u8]> = golden.split(|b| *b == b'\n').collect();
    let n = a.len().max(b.len());
    for i in 0..n {
        let x = a.get(i);
        let y = b.get(i);
        if x != y {
            let s = |v: Option<&&[u8]>| v.map(|l| String::from_utf8_lossy(l).into_owned());
            return Comparison::Differs { line: i + 1, ours: s(x), golden: s(y) };
        }
    }
    // same lines but different bytes cannot happen; fall back to line 1
    Comparison::Differs { line: 1, ours: None, golden: None }
}

pub fn compare_files(ours: &Path, golden: &Path) -> io::Result<Comparison> {
    let a = std::fs::read(ours)?;
    let b = std::fs::read(golden)?;
    Ok(compare_bytes(&a, &b))
}

/// Reads a trace file.
pub fn read_trace(path: &Path) -> io::Result<Vec<TraceRecord>> {
    let f = io::BufReader::new(std::fs::File::open(path)?);
    let mut out = vec![];
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(TraceRecord::parse(i + 1, &line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}
