use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LineTopology, StationId};

pub const AFC_HEADER: [&str; 4] = ["card_id", "station_id", "direction", "timestamp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "in")]
    Entry,
    #[serde(rename = "out")]
    Exit,
}

impl Direction {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "in" => Some(Self::Entry),
            "out" => Some(Self::Exit),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Entry => "in",
            Self::Exit => "out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapEvent {
    pub card_id: String,
    pub station: StationId,
    pub direction: Direction,
    pub timestamp: NaiveDateTime,
}

impl TapEvent {
    pub fn entry(card: &str, station: &str, ts: NaiveDateTime) -> Self {
        Self { card_id: card.into(), station: station.into(), direction: Direction::Entry, timestamp: ts }
    }

    pub fn exit(card: &str, station: &str, ts: NaiveDateTime) -> Self {
        Self { card_id: card.into(), station: station.into(), direction: Direction::Exit, timestamp: ts }
    }

    pub fn is_entry(&self) -> bool {
        self.direction == Direction::Entry
    }
}

/// A rejected input row; parsing continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub reason: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    s.trim().parse::<NaiveDateTime>().ok()
}

/// Parse an AFC CSV stream (`card_id,station_id,direction,timestamp`).
///
/// A missing or wrong header and I/O failures are fatal; every other
/// problem is reported per row.
pub fn parse_afc<R: Read>(reader: R, topology: &LineTopology) -> Result<(Vec<TapEvent>, Vec<RowError>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?;
    if header.iter().map(str::trim).ne(AFC_HEADER) {
        return Err(Error::Parse(format!(
            "AFC header must be `{}`, got `{}`",
            AFC_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut taps = Vec::new();
    let mut errors = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line, |p| p.line());
                match parse_row(&record, topology) {
                    Ok(tap) => taps.push(tap),
                    Err(reason) => errors.push(RowError { line, reason }),
                }
            }
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => errors.push(RowError { line: e.position().map_or(line, |p| p.line()), reason: e.to_string() }),
        }
    }
    Ok((taps, errors))
}

fn parse_row(record: &csv::StringRecord, topology: &LineTopology) -> std::result::Result<TapEvent, String> {
    if record.len() != 4 {
        return Err(format!("expected 4 fields, found {}", record.len()));
    }
    let card = record[0].trim();
    if card.is_empty() {
        return Err("empty card id".into());
    }
    let station = StationId::new(record[1].trim()).map_err(|_| "empty station id".to_string())?;
    if !topology.contains(&station) {
        return Err(format!("unknown station `{station}`"));
    }
    let direction = Direction::parse(record[2].trim()).ok_or_else(|| format!("bad direction `{}`", &record[2]))?;
    let timestamp = parse_timestamp(&record[3]).ok_or_else(|| format!("bad timestamp `{}`", &record[3]))?;
    Ok(TapEvent { card_id: card.to_string(), station, direction, timestamp })
}

pub fn write_afc<W: Write>(writer: W, taps: &[TapEvent]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(AFC_HEADER)?;
    for t in taps {
        w.write_record([
            t.card_id.as_str(),
            t.station.as_str(),
            t.direction.as_str(),
            &t.timestamp.format("%Y-%m-%dT%H:%M:%S%.f").to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ExogSchema;

    fn topo() -> LineTopology {
        LineTopology::new(
            vec!["S1".into(), "S2".into(), "S3".into()],
            vec![30.0; 3],
            vec![120.0; 2],
            100,
            180.0,
            ExogSchema::default(),
        )
        .unwrap()
    }

    fn parse(body: &str) -> (Vec<TapEvent>, Vec<RowError>) {
        let text = format!("card_id,station_id,direction,timestamp\n{body}");
        parse_afc(text.as_bytes(), &topo()).unwrap()
    }

    #[test]
    fn well_formed_row() {
        let (taps, errs) = parse("c1,S1,in,2013-02-05T08:01:02\n");
        assert!(errs.is_empty());
        assert_eq!(taps, vec![TapEvent::entry("c1", "S1", "2013-02-05T08:01:02".parse().unwrap())]);
    }

    #[test]
    fn bad_rows_are_collected_not_thrown() {
        let (taps, errs) = parse(
            "c1,S9,in,2013-02-05T08:01:02\n\
             c1,S1,in,not-a-time\n\
             c2,S2,out,2013-02-05T08:03:00\n\
             c3,S1,sideways,2013-02-05T08:03:00\n\
             ,S1,in,2013-02-05T08:03:00\n\
             c4,S1,in\n",
        );
        assert_eq!(taps.len(), 1);
        assert_eq!(taps[0].direction, Direction::Exit);
        let lines: Vec<u64> = errs.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 3, 5, 6, 7]);
        assert!(errs[0].reason.contains("unknown station"));
        assert!(errs[1].reason.contains("bad timestamp"));
    }

    #[test]
    fn header_is_required() {
        let r = parse_afc("c1,S1,in,2013-02-05T08:01:02\n".as_bytes(), &topo());
        assert!(matches!(r, Err(Error::Parse(_))));
    }

    #[test]
    fn write_then_parse_preserves_taps() {
        let taps = vec![
            TapEvent::entry("c1", "S1", "2013-02-05T08:01:02".parse().unwrap()),
            TapEvent::exit("c1", "S3", "2013-02-05T08:11:02".parse().unwrap()),
        ];
        let mut buf = Vec::new();
        write_afc(&mut buf, &taps).unwrap();
        let (back, errs) = parse_afc(buf.as_slice(), &topo()).unwrap();
        assert!(errs.is_empty());
        assert_eq!(back, taps);
    }
}
