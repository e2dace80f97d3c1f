//! Reading and writing record files in CSV and JSON-lines form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bounding::Record;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guesses from the file extension; anything but `.csv` is JSON lines.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json" | "ndjson" => Ok(Format::Jsonl),
            _ => Err(Error::invalid(format!("unknown format {s:?}"))),
        }
    }
}

/// Field names of the input. Headerless CSV uses the order
/// key, value, timestamp, user. Without a value field every record
/// carries 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub key: String,
    pub value: Option<String>,
    pub timestamp: String,
    pub user_id: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            key: "key".into(),
            value: Some("value".into()),
            timestamp: "timestamp".into(),
            user_id: "user_id".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorPolicy {
    /// Drop the row and keep a note of it.
    Skip,
    #[default]
    Abort,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOutput {
    pub records: Vec<Record>,
    /// `(line, message)` of every skipped row.
    pub skipped: Vec<(u64, String)>,
}

struct Collector {
    policy: ErrorPolicy,
    out: IngestOutput,
}

impl Collector {
    fn push(&mut self, line: u64, row: std::result::Result<Record, String>) -> Result<()> {
        match row {
            Ok(r) => self.out.records.push(r),
            Err(message) => match self.policy {
                ErrorPolicy::Skip => self.out.skipped.push((line, message)),
                ErrorPolicy::Abort => return Err(Error::Ingest { line, message }),
            },
        }
        Ok(())
    }
}

pub fn ingest(path: &Path, format: Format, mapping: &ColumnMapping, policy: ErrorPolicy) -> Result<IngestOutput> {
    ingest_reader(File::open(path)?, format, mapping, policy)
}

pub fn ingest_reader<R: Read>(reader: R, format: Format, mapping: &ColumnMapping, policy: ErrorPolicy) -> Result<IngestOutput> {
    let mut c = Collector { policy, out: IngestOutput::default() };
    match format {
        Format::Csv => read_csv(reader, mapping, &mut c)?,
        Format::Jsonl => read_jsonl(reader, mapping, &mut c)?,
    }
    Ok(c.out)
}

fn parse_value(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("value {s:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("value {s:?} is not finite"))
    }
}

fn parse_timestamp(s: &str) -> std::result::Result<i64, String> {
    s.trim().parse().map_err(|_| format!("timestamp {s:?} is not an integer"))
}

fn read_csv<R: Read>(reader: R, m: &ColumnMapping, c: &mut Collector) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut positions: Option<[Option<usize>; 4]> = None;
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                c.push(line, Err(e.to_string()))?;
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let idx = match positions {
            Some(p) => p,
            None => {
                let find = |name: &str| row.iter().position(|f| f.trim() == name);
                let header = find(&m.key).is_some() && find(&m.user_id).is_some();
                let p = if header {
                    [find(&m.key), m.value.as_deref().and_then(find), find(&m.timestamp), find(&m.user_id)]
                } else {
                    [Some(0), m.value.as_ref().map(|_| 1), Some(2), Some(3)]
                };
                positions = Some(p);
                if header {
                    if p[2].is_none() || (m.value.is_some() && p[1].is_none()) {
                        return Err(Error::Ingest { line, message: "header lacks a mapped column".into() });
                    }
                    continue;
                }
                p
            }
        };
        let field = |i: Option<usize>, what: &str| {
            i.and_then(|i| row.get(i)).ok_or_else(|| format!("missing {what} field"))
        };
        let rec = (|| {
            let key = field(idx[0], "key")?.to_string();
            let value = match idx[1] {
                Some(_) => parse_value(field(idx[1], "value")?)?,
                None => 1.0,
            };
            let ts = parse_timestamp(field(idx[2], "timestamp")?)?;
            let user = field(idx[3], "user")?.to_string();
            Ok(Record::new(key, value, ts, user))
        })();
        c.push(line, rec)?;
    }
    Ok(())
}

fn as_text(v: Option<&Value>, what: &str) -> std::result::Result<String, String> {
    match v {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("{what} must be a string or number")),
        None => Err(format!("missing {what} field")),
    }
}

fn json_row(line: &str, m: &ColumnMapping) -> std::result::Result<Record, String> {
    let obj: serde_json::Map<String, Value> = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let key = as_text(obj.get(&m.key), "key")?;
    let value = match &m.value {
        None => 1.0,
        Some(name) => match obj.get(name) {
            Some(Value::Number(n)) => n.as_f64().ok_or("value out of range")?,
            Some(Value::String(s)) => parse_value(s)?,
            Some(_) => return Err("value must be a number".into()),
            None => return Err("missing value field".into()),
        },
    };
    let ts = match obj.get(&m.timestamp) {
        Some(Value::Number(n)) => n.as_i64().ok_or("timestamp is not an integer")?,
        Some(Value::String(s)) => parse_timestamp(s)?,
        Some(_) => return Err("timestamp must be an integer".into()),
        None => return Err("missing timestamp field".into()),
    };
    let user = as_text(obj.get(&m.user_id), "user")?;
    Ok(Record::new(key, value, ts, user))
}

fn read_jsonl<R: Read>(reader: R, m: &ColumnMapping, c: &mut Collector) -> Result<()> {
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        c.push(i as u64 + 1, json_row(&line, m))?;
    }
    Ok(())
}

/// Writes records with the default column names.
pub fn write_records(path: &Path, format: Format, records: &[Record]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
        }
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(&mut w);
            cw.write_record(["key", "value", "timestamp", "user_id"])?;
            for r in records {
                cw.write_record([r.key.clone(), r.value.to_string(), r.timestamp.to_string(), r.user_id.clone()])?;
            }
            cw.flush()?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_in(s: &str, policy: ErrorPolicy) -> Result<IngestOutput> {
        ingest_reader(s.as_bytes(), Format::Csv, &ColumnMapping::default(), policy)
    }

    #[test]
    fn empty_input() {
        assert!(csv_in("", ErrorPolicy::Abort).unwrap().records.is_empty());
        let j = ingest_reader(&b""[..], Format::Jsonl, &ColumnMapping::default(), ErrorPolicy::Abort).unwrap();
        assert!(j.records.is_empty());
    }

    #[test]
    fn headerless_row() {
        let out = csv_in("cats,1,1500000000,u42\n", ErrorPolicy::Abort).unwrap();
        assert_eq!(out.records, vec![Record::new("cats", 1.0, 1_500_000_000, "u42")]);
    }

    #[test]
    fn header_reorders_columns() {
        let out = csv_in("user_id,timestamp,key,value\nu1,5,dogs,2.5\n", ErrorPolicy::Abort).unwrap();
        assert_eq!(out.records, vec![Record::new("dogs", 2.5, 5, "u1")]);
    }

    #[test]
    fn bad_value_reports_line() {
        let input = "cats,1,1,u1\ncats,x,2,u2\ncats,1,3,u3\n";
        match csv_in(input, ErrorPolicy::Abort) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let out = csv_in(input, ErrorPolicy::Skip).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].0, 2);
    }

    #[test]
    fn jsonl_with_custom_mapping() {
        let m = ColumnMapping {
            key: "subreddit".into(),
            value: None,
            timestamp: "created_utc".into(),
            user_id: "author".into(),
        };
        let input = "{\"subreddit\":\"cats\",\"created_utc\":7,\"author\":\"a\"}\n\n{\"subreddit\":\"dogs\",\"author\":\"b\"}\n";
        match ingest_reader(input.as_bytes(), Format::Jsonl, &m, ErrorPolicy::Abort) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let out = ingest_reader(input.as_bytes(), Format::Jsonl, &m, ErrorPolicy::Skip).unwrap();
        assert_eq!(out.records, vec![Record::new("cats", 1.0, 7, "a")]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![Record::new("a", 0.25, -4, "u1"), Record::new("b,c", 3.0, 9, "u2")];
        for fmt in [Format::Csv, Format::Jsonl] {
            let p = dir.path().join(format!("r.{}", if fmt == Format::Csv { "csv" } else { "jsonl" }));
            write_records(&p, fmt, &recs).unwrap();
            assert_eq!(Format::from_path(&p), fmt);
            let back = ingest(&p, fmt, &ColumnMapping::default(), ErrorPolicy::Abort).unwrap();
            assert_eq!(back.records, recs);
        }
    }
}
