use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::PathBuf;

use chrono::NaiveDateTime;
use tracing::warn;

use crate::error::Result;
use crate::ingest::{parse_afc, parse_positions, TapEvent, TrainPositionReport, AFC_HEADER};
use crate::network::LineTopology;

pub trait Timestamped {
    fn timestamp(&self) -> NaiveDateTime;
}

impl Timestamped for TapEvent {
    fn timestamp(&self) -> NaiveDateTime {
        self.timestamp
    }
}

impl Timestamped for TrainPositionReport {
    fn timestamp(&self) -> NaiveDateTime {
        self.timestamp
    }
}

/// Something the cycle can pull new records from. A feed may hand out
/// records stamped after `until`; the engine holds them until their bin.
pub trait Feed<T>: Send {
    fn poll(&mut self, until: NaiveDateTime) -> Result<Vec<T>>;
}

/// Records held in memory, released in timestamp order as time passes.
#[derive(Debug, Clone)]
pub struct MemoryFeed<T> {
    items: Vec<T>,
    next: usize,
}

impl<T: Timestamped + Clone> MemoryFeed<T> {
    pub fn new(mut items: Vec<T>) -> Self {
        items.sort_by_key(Timestamped::timestamp);
        Self { items, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.items.len() - self.next
    }
}

impl<T: Timestamped + Clone + Send> Feed<T> for MemoryFeed<T> {
    fn poll(&mut self, until: NaiveDateTime) -> Result<Vec<T>> {
        let end = self.next + self.items[self.next..].partition_point(|t| t.timestamp() < until);
        let out = self.items[self.next..end].to_vec();
        self.next = end;
        Ok(out)
    }
}

/// Follows a file that another process appends to, returning the complete
/// lines written since the previous poll.
#[derive(Debug)]
struct Tail {
    path: PathBuf,
    offset: u64,
}

impl Tail {
    fn read_new(&mut self) -> Result<String> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(String::new()),
            Err(e) => return Err(e.into()),
        };
        let mut reader = BufReader::new(file);
        reader.seek(SeekFrom::Start(self.offset))?;
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf)?;
        let complete = buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        buf.truncate(complete);
        self.offset += complete as u64;
        String::from_utf8(buf).map_err(|e| crate::Error::Parse(format!("{}: {e}", self.path.display())))
    }
}

/// Tails an AFC CSV file. The header is checked once; bad rows are logged
/// and skipped.
#[derive(Debug)]
pub struct AfcFileTail {
    tail: Tail,
    topology: LineTopology,
    header_seen: bool,
    pub row_errors: usize,
}

impl AfcFileTail {
    pub fn new(path: impl Into<PathBuf>, topology: LineTopology) -> Self {
        Self { tail: Tail { path: path.into(), offset: 0 }, topology, header_seen: false, row_errors: 0 }
    }
}

impl Feed<TapEvent> for AfcFileTail {
    fn poll(&mut self, _until: NaiveDateTime) -> Result<Vec<TapEvent>> {
        let text = self.tail.read_new()?;
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let doc = if self.header_seen { format!("{}\n{text}", AFC_HEADER.join(",")) } else { text };
        self.header_seen = true;
        let (taps, errors) = parse_afc(doc.as_bytes(), &self.topology)?;
        for e in &errors {
            warn!(line = e.line, reason = %e.reason, "skipping AFC row");
        }
        self.row_errors += errors.len();
        Ok(taps)
    }
}

/// Tails a JSON-lines train-position feed.
#[derive(Debug)]
pub struct PositionFileTail {
    tail: Tail,
    topology: LineTopology,
    pub row_errors: usize,
}

impl PositionFileTail {
    pub fn new(path: impl Into<PathBuf>, topology: LineTopology) -> Self {
        Self { tail: Tail { path: path.into(), offset: 0 }, topology, row_errors: 0 }
    }
}

impl Feed<TrainPositionReport> for PositionFileTail {
    fn poll(&mut self, _until: NaiveDateTime) -> Result<Vec<TrainPositionReport>> {
        let text = self.tail.read_new()?;
        let (reports, errors) = parse_positions(text.as_bytes(), &self.topology)?;
        for e in &errors {
            warn!(line = e.line, reason = %e.reason, "skipping position report");
        }
        self.row_errors += errors.len();
        Ok(reports)
    }
}

/// A feed that never produces anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFeed;

impl<T> Feed<T> for NoFeed {
    fn poll(&mut self, _until: NaiveDateTime) -> Result<Vec<T>> {
        Ok(Vec::new())
    }
}
