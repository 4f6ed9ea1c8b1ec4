//! Journal record encoding.
//!
//! One record per line, comma separated, in this field order:
//!
//! ```text
//! op,request_id,priority,seq,checksum\n
//! ```
//!
//! * `op` is `INS`, `REM` or `PRI`.
//! * `request_id` is a decimal `u64`.
//! * `priority` is a decimal `i64` for `INS`/`PRI` and empty for `REM`.
//! * `seq` is a decimal `u64` for `INS` and empty otherwise.
//! * `checksum` is the CRC-32 (IEEE) of every byte before the last comma,
//!   as 8 lowercase hex digits.
//!
//! A record is complete only with its trailing newline.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::RequestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JournalOp {
    Insert,
    Remove,
    Reprioritize,
}

impl JournalOp {
    fn tag(self) -> &'static str {
        match self {
            JournalOp::Insert => "INS",
            JournalOp::Remove => "REM",
            JournalOp::Reprioritize => "PRI",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalRecord {
    pub op: JournalOp,
    pub request_id: RequestId,
    pub priority: Option<i64>,
    pub seq: Option<u64>,
}

impl JournalRecord {
    pub fn insert(request_id: RequestId, priority: i64, seq: u64) -> Self {
        JournalRecord { op: JournalOp::Insert, request_id, priority: Some(priority), seq: Some(seq) }
    }

    pub fn remove(request_id: RequestId) -> Self {
        JournalRecord { op: JournalOp::Remove, request_id, priority: None, seq: None }
    }

    pub fn reprioritize(request_id: RequestId, priority: i64) -> Self {
        JournalRecord { op: JournalOp::Reprioritize, request_id, priority: Some(priority), seq: None }
    }

    /// The encoded line including its newline.
    pub fn encode(&self) -> String {
        let body = format!(
            "{},{},{},{}",
            self.op.tag(),
            self.request_id.0,
            self.priority.map(|p| p.to_string()).unwrap_or_default(),
            self.seq.map(|s| s.to_string()).unwrap_or_default(),
        );
        let crc = crc32fast::hash(body.as_bytes());
        format!("{body},{crc:08x}\n")
    }

    /// Decodes one line without its newline.
    pub fn decode(line: &str) -> core::result::Result<Self, String> {
        let (body, checksum) = line.rsplit_once(',').ok_or("missing checksum field")?;
        if checksum.len() != 8 {
            return Err("checksum must be 8 hex digits".into());
        }
        let want = u32::from_str_radix(checksum, 16).map_err(|_| "checksum is not hex")?;
        if checksum.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err("checksum must be lowercase hex".into());
        }
        if crc32fast::hash(body.as_bytes()) != want {
            return Err("checksum mismatch".into());
        }
        let fields: Vec<&str> = body.split(',').collect();
        let [op, id, priority, seq] = fields[..] else {
            return Err(format!("expected 5 fields, found {}", fields.len() + 1));
        };
        let op = match op {
            "INS" => JournalOp::Insert,
            "REM" => JournalOp::Remove,
            "PRI" => JournalOp::Reprioritize,
            other => return Err(format!("unknown op `{other}`")),
        };
        let request_id = RequestId(id.parse().map_err(|_| format!("bad request id `{id}`"))?);
        let opt = |s: &str| -> core::result::Result<Option<i64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| format!("bad integer `{s}`"))
            }
        };
        let priority = opt(priority)?;
        let seq = if seq.is_empty() {
            None
        } else {
            Some(seq.parse::<u64>().map_err(|_| format!("bad seq `{seq}`"))?)
        };
        let shape_ok = match op {
            JournalOp::Insert => priority.is_some() && seq.is_some(),
            JournalOp::Remove => priority.is_none() && seq.is_none(),
            JournalOp::Reprioritize => priority.is_some() && seq.is_none(),
        };
        if !shape_ok {
            return Err(format!("fields do not match op {}", op.tag()));
        }
        Ok(JournalRecord { op, request_id, priority, seq })
    }
}

/// Sink for queue journal records. Implementations must make the record
/// durable before returning.
pub trait Journal {
    fn append(&mut self, record: &JournalRecord) -> Result<()>;

    /// Atomically replaces the whole journal with `records`.
    fn rewrite(&mut self, records: &[JournalRecord]) -> Result<()>;
}

impl<J: Journal + ?Sized> Journal for alloc::boxed::Box<J> {
    fn append(&mut self, record: &JournalRecord) -> Result<()> {
        (**self).append(record)
    }

    fn rewrite(&mut self, records: &[JournalRecord]) -> Result<()> {
        (**self).rewrite(records)
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullJournal;

impl Journal for NullJournal {
    fn append(&mut self, _: &JournalRecord) -> Result<()> {
        Ok(())
    }

    fn rewrite(&mut self, _: &[JournalRecord]) -> Result<()> {
        Ok(())
    }
}

/// Keeps the encoded journal in memory.
#[derive(Debug, Default, Clone)]
pub struct MemoryJournal {
    bytes: Vec<u8>,
    /// Byte offset after each record.
    boundaries: Vec<usize>,
}

impl MemoryJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let boundaries = bytes
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == b'\n')
            .map(|(i, _)| i + 1)
            .collect();
        MemoryJournal { bytes, boundaries }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }
}

impl Journal for MemoryJournal {
    fn append(&mut self, record: &JournalRecord) -> Result<()> {
        self.bytes.extend_from_slice(record.encode().as_bytes());
        self.boundaries.push(self.bytes.len());
        Ok(())
    }

    fn rewrite(&mut self, records: &[JournalRecord]) -> Result<()> {
        self.bytes.clear();
        self.boundaries.clear();
        records.iter().try_for_each(|r| self.append(r))
    }
}

/// Splits `bytes` into decoded records. A damaged or unterminated final
/// line is dropped; damage anywhere else is an error. Returns the records
/// and the length of the valid prefix.
pub fn decode_records(bytes: &[u8]) -> Result<(Vec<JournalRecord>, usize)> {
    let mut records = Vec::new();
    let mut offset = 0;
    let mut lines = bytes.split_inclusive(|b| *b == b'\n').enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let is_last = lines.peek().is_none();
        let decoded = match raw.strip_suffix(b"\n") {
            None => Err("record has no terminating newline".to_string()),
            Some(line) => core::str::from_utf8(line)
                .map_err(|_| "record is not UTF-8".to_string())
                .and_then(JournalRecord::decode),
        };
        match decoded {
            Ok(r) => {
                records.push(r);
                offset += raw.len();
            }
            Err(_) if is_last => break,
            Err(reason) => return Err(Error::CorruptJournal { line: idx + 1, reason }),
        }
    }
    Ok((records, offset))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_is_bit_exact() {
        let line = JournalRecord::insert(RequestId(17), 7500, 3).encode();
        let crc = crc32fast::hash(b"INS,17,7500,3");
        assert_eq!(line, format!("INS,17,7500,3,{crc:08x}\n"));
        let rem = JournalRecord::remove(RequestId(4)).encode();
        assert!(rem.starts_with("REM,4,,,"));
        let pri = JournalRecord::reprioritize(RequestId(4), -2).encode();
        assert!(pri.starts_with("PRI,4,-2,,"));
    }

    #[test]
    fn decode_roundtrip_and_rejects_damage() {
        for r in [
            JournalRecord::insert(RequestId(1), -5, 9),
            JournalRecord::remove(RequestId(2)),
            JournalRecord::reprioritize(RequestId(3), 42),
        ] {
            let line = r.encode();
            assert_eq!(JournalRecord::decode(line.trim_end()).unwrap(), r);
        }
        let good = JournalRecord::insert(RequestId(1), 5, 0).encode();
        let bad = good.replacen("5", "6", 1);
        assert!(JournalRecord::decode(bad.trim_end()).is_err());
        assert!(JournalRecord::decode("INS,1,5,0").is_err());
        // Remove carrying a priority is malformed even with a valid checksum.
        let body = "REM,1,5,";
        let forged = format!("{body},{:08x}", crc32fast::hash(body.as_bytes()));
        assert!(JournalRecord::decode(&forged).is_err());
    }

    #[test]
    fn torn_tail_dropped_but_inner_damage_is_fatal() {
        let a = JournalRecord::insert(RequestId(1), 5, 0).encode();
        let b = JournalRecord::insert(RequestId(2), 9, 1).encode();
        let mut bytes = format!("{a}{b}").into_bytes();
        bytes.extend_from_slice(&b.as_bytes()[..7]);
        let (recs, len) = decode_records(&bytes).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(len, a.len() + b.len());

        let corrupt = format!("{}{b}", a.replacen("5", "6", 1));
        assert!(matches!(
            decode_records(corrupt.as_bytes()),
            Err(Error::CorruptJournal { line: 1, .. })
        ));
    }
}
