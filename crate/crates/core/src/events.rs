//! Trigger-record event files.
//!
//! CSV: header `t_clk_ps,t_s1_ps,t_s2_ps`, one integer row per record, an
//! empty field for a signal channel that did not click.
//!
//! Binary: magic `HPB1`, then three little-endian `i64` per record with
//! `i64::MIN` standing for an absent signal click.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const CSV_HEADER: &str = "t_clk_ps,t_s1_ps,t_s2_ps";
pub const BINARY_MAGIC: &[u8; 4] = b"HPB1";
pub const ABSENT: i64 = i64::MIN;
const RECORD_BYTES: usize = 24;

/// One recorded trigger event. Times are integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriggerRecord {
    /// Trigger time relative to the nearest pump clock edge.
    pub t_clk_ps: i64,
    /// Signal-2 click time relative to the trigger.
    pub t_s1_ps: Option<i64>,
    /// Signal-3 click time relative to the trigger.
    pub t_s2_ps: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventFormat {
    #[default]
    Csv,
    Binary,
}

impl std::str::FromStr for EventFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(EventFormat::Csv),
            "binary" => Ok(EventFormat::Binary),
            other => Err(format!(
                "unknown event format '{other}' (expected csv or binary)"
            )),
        }
    }
}

impl EventFormat {
    pub fn extension(self) -> &'static str {
        match self {
            EventFormat::Csv => "csv",
            EventFormat::Binary => "bin",
        }
    }
}

fn check_writable(r: &TriggerRecord) -> std::result::Result<(), String> {
    if r.t_clk_ps == ABSENT {
        return Err("t_clk_ps collides with the absent sentinel".into());
    }
    if r.t_s1_ps == Some(ABSENT) || r.t_s2_ps == Some(ABSENT) {
        return Err("signal time collides with the absent sentinel".into());
    }
    Ok(())
}

/// Serializes records in `format` to any writer.
pub fn write_records<W: Write>(
    records: &[TriggerRecord],
    format: EventFormat,
    out: W,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    match format {
        EventFormat::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            let field = |v: Option<i64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in records {
                writeln!(
                    out,
                    "{},{},{}",
                    r.t_clk_ps,
                    field(r.t_s1_ps),
                    field(r.t_s2_ps)
                )?;
            }
        }
        EventFormat::Binary => {
            out.write_all(BINARY_MAGIC)?;
            for r in records {
                out.write_all(&r.t_clk_ps.to_le_bytes())?;
                out.write_all(&r.t_s1_ps.unwrap_or(ABSENT).to_le_bytes())?;
                out.write_all(&r.t_s2_ps.unwrap_or(ABSENT).to_le_bytes())?;
            }
        }
    }
    out.flush()
}

pub fn write_events(records: &[TriggerRecord], path: &Path, format: EventFormat) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        check_writable(r).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            location: format!("record {i}"),
            message,
        })?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    write_records(records, format, file).map_err(io_err(path))
}

/// Reads an event file, detecting the format from its first bytes.
pub fn load_events(path: &Path) -> Result<Vec<TriggerRecord>> {
    let mut file = BufReader::new(File::open(path).map_err(io_err(path))?);
    let head = file.fill_buf().map_err(io_err(path))?;
    if head.starts_with(BINARY_MAGIC) {
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(path))?;
        decode_binary(&bytes, path)
    } else {
        decode_csv(file, path)
    }
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<Vec<TriggerRecord>> {
    let body = &bytes[BINARY_MAGIC.len()..];
    let whole = body.len() / RECORD_BYTES * RECORD_BYTES;
    if whole != body.len() {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: (BINARY_MAGIC.len() + whole) as u64,
        });
    }
    body.chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, chunk)| {
            let word = |k: usize| {
                i64::from_le_bytes(chunk[8 * k..8 * k + 8].try_into().expect("8-byte slice"))
            };
            let present = |v: i64| (v != ABSENT).then_some(v);
            let t_clk_ps = word(0);
            if t_clk_ps == ABSENT {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    location: format!("byte offset {}", BINARY_MAGIC.len() + i * RECORD_BYTES),
                    message: "t_clk_ps is absent".into(),
                });
            }
            Ok(TriggerRecord {
                t_clk_ps,
                t_s1_ps: present(word(1)),
                t_s2_ps: present(word(2)),
            })
        })
        .collect()
}

fn decode_csv<R: BufRead>(reader: R, path: &Path) -> Result<Vec<TriggerRecord>> {
    let format_err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        Some(Ok(h)) => {
            return Err(format_err(
                1,
                format!(
                    "unknown header or magic '{}'",
                    h.chars().take(40).collect::<String>()
                ),
            ))
        }
        Some(Err(e)) => {
            return Err(Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
        None => return Err(format_err(1, "empty file, expected header".into())),
    }

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format_err(
                n,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let parse = |s: &str, name: &str| -> Result<i64> {
            let v: i64 = s
                .parse()
                .map_err(|_| format_err(n, format!("{name}: '{s}' is not an integer")))?;
            if v == ABSENT {
                return Err(format_err(
                    n,
                    format!("{name}: value collides with the absent sentinel"),
                ));
            }
            Ok(v)
        };
        let optional = |s: &str, name: &str| -> Result<Option<i64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse(s, name).map(Some)
            }
        };
        if fields[0].is_empty() {
            return Err(format_err(n, "t_clk_ps is empty".into()));
        }
        records.push(TriggerRecord {
            t_clk_ps: parse(fields[0], "t_clk_ps")?,
            t_s1_ps: optional(fields[1], "t_s1_ps")?,
            t_s2_ps: optional(fields[2], "t_s2_ps")?,
        });
    }
    Ok(records)
}
