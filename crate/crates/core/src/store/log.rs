//! Append-only log framing and record codec.
//!
//! Layout: an 8-byte magic, a length-prefixed database name, then frames of
//! `[payload_len: u32 LE][crc32(payload): u32 LE][payload]`. Each row change
//! inside a commit payload is addressed by its absolute byte offset, which is
//! the change's log position.

use chrono::{Datelike, NaiveDate};

use super::{Change, ColumnDef, StoreError, TableId};
use crate::value::{ColumnType, Interval, Value};

pub const MAGIC: &[u8; 8] = b"LIVEFED\x01";
const FRAME_HEADER: usize = 8;
const MAX_FRAME: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub enum LogRecord {
    CreateTable {
        name: String,
        columns: Vec<ColumnDef>,
        primary_key: Vec<String>,
    },
    CreateView {
        name: String,
        definition: String,
    },
    Commit {
        txn_id: u64,
        timestamp_ms: i64,
        tid: Option<String>,
        changes: Vec<Change>,
    },
    Intent {
        tid: String,
        timestamp_ms: i64,
        read_checks: Vec<String>,
        changes: Vec<Change>,
    },
    Abort {
        tid: String,
    },
}

/// A decoded frame: its starting offset, total length, and for commits the
/// absolute position of each change.
#[derive(Clone, Debug)]
pub struct Frame {
    pub offset: u64,
    pub len: u64,
    pub record: LogRecord,
    pub change_positions: Vec<u64>,
}

pub fn encode_header(db_name: &str) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_str(&mut out, db_name);
    out
}

/// Encodes a frame that will start at `offset`. Returns the bytes and the
/// absolute positions of the record's row changes.
pub fn encode_frame(offset: u64, record: &LogRecord) -> (Vec<u8>, Vec<u64>) {
    let payload_base = offset + FRAME_HEADER as u64;
    let mut payload = Vec::with_capacity(64);
    let mut positions = Vec::new();
    match record {
        LogRecord::CreateTable {
            name,
            columns,
            primary_key,
        } => {
            payload.push(1);
            put_str(&mut payload, name);
            put_u32(&mut payload, columns.len() as u32);
            for c in columns {
                put_str(&mut payload, &c.name);
                payload.push(type_tag(c.ty));
                payload.push(c.not_null as u8);
            }
            put_u32(&mut payload, primary_key.len() as u32);
            for k in primary_key {
                put_str(&mut payload, k);
            }
        }
        LogRecord::CreateView { name, definition } => {
            payload.push(2);
            put_str(&mut payload, name);
            put_str(&mut payload, definition);
        }
        LogRecord::Commit {
            txn_id,
            timestamp_ms,
            tid,
            changes,
        } => {
            payload.push(3);
            put_u64(&mut payload, *txn_id);
            put_u64(&mut payload, *timestamp_ms as u64);
            match tid {
                Some(t) => {
                    payload.push(1);
                    put_str(&mut payload, t);
                }
                None => payload.push(0),
            }
            put_u32(&mut payload, changes.len() as u32);
            for c in changes {
                positions.push(payload_base + payload.len() as u64);
                put_change(&mut payload, c);
            }
        }
        LogRecord::Intent {
            tid,
            timestamp_ms,
            read_checks,
            changes,
        } => {
            payload.push(4);
            put_str(&mut payload, tid);
            put_u64(&mut payload, *timestamp_ms as u64);
            put_u32(&mut payload, read_checks.len() as u32);
            for r in read_checks {
                put_str(&mut payload, r);
            }
            put_u32(&mut payload, changes.len() as u32);
            for c in changes {
                put_change(&mut payload, c);
            }
        }
        LogRecord::Abort { tid } => {
            payload.push(5);
            put_str(&mut payload, tid);
        }
    }
    let mut out = Vec::with_capacity(FRAME_HEADER + payload.len());
    put_u32(&mut out, payload.len() as u32);
    put_u32(&mut out, crc32fast::hash(&payload));
    out.extend_from_slice(&payload);
    (out, positions)
}

/// Result of scanning a log image.
pub struct Scan {
    pub db_name: String,
    pub header_len: u64,
    pub frames: Vec<Frame>,
    /// Length of the valid prefix; bytes past it are a torn tail.
    pub valid_len: u64,
}

/// Decodes every complete frame. A frame cut short by the end of the input
/// ends the scan silently; a complete frame with a bad checksum or an
/// undecodable payload is corruption.
pub fn scan(bytes: &[u8]) -> Result<Scan, StoreError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(StoreError::CorruptLog {
            position: 0,
            reason: "missing log header".into(),
        });
    }
    let mut cur = Cursor::new(&bytes[MAGIC.len()..], MAGIC.len() as u64);
    let db_name = cur.str().map_err(|_| StoreError::CorruptLog {
        position: MAGIC.len() as u64,
        reason: "truncated header".into(),
    })?;
    let header_len = cur.position();
    let mut frames = Vec::new();
    let mut offset = header_len as usize;
    loop {
        let rest = &bytes[offset..];
        if rest.len() < FRAME_HEADER {
            break;
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        if len > MAX_FRAME {
            return Err(StoreError::CorruptLog {
                position: offset as u64,
                reason: format!("implausible frame length {len}"),
            });
        }
        if rest.len() < FRAME_HEADER + len {
            break;
        }
        let payload = &rest[FRAME_HEADER..FRAME_HEADER + len];
        if crc32fast::hash(payload) != crc {
            return Err(StoreError::CorruptLog {
                position: offset as u64,
                reason: "checksum mismatch".into(),
            });
        }
        let (record, change_positions) =
            decode_payload(payload, (offset + FRAME_HEADER) as u64).map_err(|reason| {
                StoreError::CorruptLog {
                    position: offset as u64,
                    reason,
                }
            })?;
        frames.push(Frame {
            offset: offset as u64,
            len: (FRAME_HEADER + len) as u64,
            record,
            change_positions,
        });
        offset += FRAME_HEADER + len;
    }
    Ok(Scan {
        db_name,
        header_len,
        frames,
        valid_len: offset as u64,
    })
}

fn decode_payload(payload: &[u8], base: u64) -> Result<(LogRecord, Vec<u64>), String> {
    let mut cur = Cursor::new(payload, base);
    let mut positions = Vec::new();
    let record = match cur.u8()? {
        1 => {
            let name = cur.str()?;
            let n = cur.u32()? as usize;
            let mut columns = Vec::with_capacity(n);
            for _ in 0..n {
                let name = cur.str()?;
                let ty = tag_type(cur.u8()?)?;
                let not_null = cur.u8()? != 0;
                columns.push(ColumnDef { name, ty, not_null });
            }
            let k = cur.u32()? as usize;
            let mut primary_key = Vec::with_capacity(k);
            for _ in 0..k {
                primary_key.push(cur.str()?);
            }
            LogRecord::CreateTable {
                name,
                columns,
                primary_key,
            }
        }
        2 => LogRecord::CreateView {
            name: cur.str()?,
            definition: cur.str()?,
        },
        3 => {
            let txn_id = cur.u64()?;
            let timestamp_ms = cur.u64()? as i64;
            let tid = match cur.u8()? {
                0 => None,
                _ => Some(cur.str()?),
            };
            let n = cur.u32()? as usize;
            let mut changes = Vec::with_capacity(n.min(4096));
            for _ in 0..n {
                positions.push(cur.position());
                changes.push(cur.change()?);
            }
            LogRecord::Commit {
                txn_id,
                timestamp_ms,
                tid,
                changes,
            }
        }
        4 => {
            let tid = cur.str()?;
            let timestamp_ms = cur.u64()? as i64;
            let n = cur.u32()? as usize;
            let mut read_checks = Vec::with_capacity(n.min(4096));
            for _ in 0..n {
                read_checks.push(cur.str()?);
            }
            let n = cur.u32()? as usize;
            let mut changes = Vec::with_capacity(n.min(4096));
            for _ in 0..n {
                changes.push(cur.change()?);
            }
            LogRecord::Intent {
                tid,
                timestamp_ms,
                read_checks,
                changes,
            }
        }
        5 => LogRecord::Abort { tid: cur.str()? },
        k => return Err(format!("unknown record kind {k}")),
    };
    if !cur.is_empty() {
        return Err("trailing bytes in record".into());
    }
    Ok((record, positions))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn type_tag(ty: ColumnType) -> u8 {
    match ty {
        ColumnType::Int => 1,
        ColumnType::Real => 2,
        ColumnType::Char => 3,
        ColumnType::Date => 4,
        ColumnType::DateTime => 5,
        ColumnType::Interval => 6,
        ColumnType::Bool => 7,
    }
}

fn tag_type(tag: u8) -> Result<ColumnType, String> {
    Ok(match tag {
        1 => ColumnType::Int,
        2 => ColumnType::Real,
        3 => ColumnType::Char,
        4 => ColumnType::Date,
        5 => ColumnType::DateTime,
        6 => ColumnType::Interval,
        7 => ColumnType::Bool,
        t => return Err(format!("unknown column type tag {t}")),
    })
}

fn put_values(out: &mut Vec<u8>, values: &[Value]) {
    put_u32(out, values.len() as u32);
    for v in values {
        match v {
            Value::Null => out.push(0),
            Value::Int(i) => {
                out.push(1);
                put_u64(out, *i as u64);
            }
            Value::Real(r) => {
                out.push(2);
                put_u64(out, r.to_bits());
            }
            Value::Str(s) => {
                out.push(3);
                put_str(out, s);
            }
            Value::Date(d) => {
                out.push(4);
                put_u32(out, d.num_days_from_ce() as u32);
            }
            Value::DateTime(dt) => {
                out.push(5);
                put_u64(out, dt.and_utc().timestamp() as u64);
            }
            Value::Interval(iv) => {
                out.push(6);
                put_u32(out, iv.years as u32);
                put_u32(out, iv.months as u32);
                put_u32(out, iv.days as u32);
                put_u64(out, iv.seconds as u64);
            }
            Value::Bool(b) => {
                out.push(7);
                out.push(*b as u8);
            }
        }
    }
}

fn put_change(out: &mut Vec<u8>, change: &Change) {
    match change {
        Change::Insert { table, values } => {
            out.push(1);
            put_u64(out, *table);
            put_values(out, values);
        }
        Change::Update { table, key, values } => {
            out.push(2);
            put_u64(out, *table);
            put_values(out, key);
            put_values(out, values);
        }
        Change::Delete { table, key } => {
            out.push(3);
            put_u64(out, *table);
            put_values(out, key);
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    base: u64,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], base: u64) -> Self {
        Cursor { bytes, at: 0, base }
    }

    fn position(&self) -> u64 {
        self.base + self.at as u64
    }

    fn is_empty(&self) -> bool {
        self.at == self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.bytes.len() - self.at < n {
            return Err("record truncated".into());
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| "invalid utf-8".to_string())
    }

    fn values(&mut self) -> Result<Vec<Value>, String> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            out.push(match self.u8()? {
                0 => Value::Null,
                1 => Value::Int(self.u64()? as i64),
                2 => Value::Real(f64::from_bits(self.u64()?)),
                3 => Value::Str(self.str()?),
                4 => Value::Date(
                    NaiveDate::from_num_days_from_ce_opt(self.u32()? as i32)
                        .ok_or("date out of range")?,
                ),
                5 => Value::DateTime(
                    chrono::DateTime::from_timestamp(self.u64()? as i64, 0)
                        .ok_or("datetime out of range")?
                        .naive_utc(),
                ),
                6 => Value::Interval(Interval {
                    years: self.u32()? as i32,
                    months: self.u32()? as i32,
                    days: self.u32()? as i32,
                    seconds: self.u64()? as i64,
                }),
                7 => Value::Bool(self.u8()? != 0),
                t => return Err(format!("unknown value tag {t}")),
            });
        }
        Ok(out)
    }

    fn change(&mut self) -> Result<Change, String> {
        let kind = self.u8()?;
        let table: TableId = self.u64()?;
        Ok(match kind {
            1 => Change::Insert {
                table,
                values: self.values()?,
            },
            2 => Change::Update {
                table,
                key: self.values()?,
                values: self.values()?,
            },
            3 => Change::Delete {
                table,
                key: self.values()?,
            },
            k => return Err(format!("unknown change kind {k}")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::parse_datetime;

    #[test]
    fn frame_round_trip_and_positions() {
        let rec = LogRecord::Commit {
            txn_id: 7,
            timestamp_ms: 1_700_000_000_000,
            tid: Some("R-1-2".into()),
            changes: vec![
                Change::Insert {
                    table: 20,
                    values: vec![
                        Value::Int(1),
                        Value::Str("Joe".into()),
                        Value::DateTime(parse_datetime("2003-04-12").unwrap()),
                        Value::Null,
                    ],
                },
                Change::Delete {
                    table: 20,
                    key: vec![Value::Int(2)],
                },
            ],
        };
        let mut image = encode_header("Hospital");
        let offset = image.len() as u64;
        let (bytes, positions) = encode_frame(offset, &rec);
        image.extend_from_slice(&bytes);
        let scan = scan(&image).unwrap();
        assert_eq!(scan.db_name, "Hospital");
        assert_eq!(scan.frames.len(), 1);
        assert_eq!(scan.frames[0].record, rec);
        assert_eq!(scan.frames[0].change_positions, positions);
        assert!(positions[0] > offset && positions[1] > positions[0]);
    }

    #[test]
    fn torn_tail_is_dropped_but_flipped_byte_is_corruption() {
        let mut image = encode_header("db");
        for i in 0..3 {
            let (bytes, _) = encode_frame(
                image.len() as u64,
                &LogRecord::Abort {
                    tid: format!("t{i}"),
                },
            );
            image.extend_from_slice(&bytes);
        }
        let full = scan(&image).unwrap();
        assert_eq!(full.frames.len(), 3);
        let cut = &image[..image.len() - 3];
        assert_eq!(scan(cut).unwrap().frames.len(), 2);

        let mut flipped = image.clone();
        let mid = full.frames[1].offset as usize + 10;
        flipped[mid] ^= 0x40;
        assert!(matches!(scan(&flipped), Err(StoreError::CorruptLog { .. })));
    }
}
