//! Priority queue of `Scheduling` requests, ordered by (priority desc, seq
//! asc), with every mutation journaled before it is applied.

mod journal;

pub use journal::{decode_records, Journal, JournalOp, JournalRecord, MemoryJournal, NullJournal};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RequestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub request_id: RequestId,
    pub priority: i64,
    pub seq: u64,
    pub retries: u32,
}

type OrderKey = (Reverse<i64>, u64);

fn key(e: &QueueEntry) -> OrderKey {
    (Reverse(e.priority), e.seq)
}

#[derive(Debug)]
pub struct PriorityQueue<J> {
    entries: BTreeMap<RequestId, QueueEntry>,
    order: BTreeSet<(OrderKey, RequestId)>,
    next_seq: u64,
    journal: J,
    compaction_factor: u32,
    /// Records in the journal since the last compaction.
    journal_len: usize,
    /// Records a compacted snapshot of the current state would hold.
    snapshot_len: usize,
    /// Set when the last journal record removed this entry. An insert of the
    /// same id right after it is a retry.
    last_removed: Option<QueueEntry>,
}

impl<J: Journal> PriorityQueue<J> {
    pub fn new(journal: J) -> Self {
        PriorityQueue {
            entries: BTreeMap::new(),
            order: BTreeSet::new(),
            next_seq: 0,
            journal,
            compaction_factor: 0,
            journal_len: 0,
            snapshot_len: 0,
            last_removed: None,
        }
    }

    /// Enables compaction once the journal exceeds `factor` times the
    /// compacted size. 0 keeps the journal strictly append-only.
    pub fn with_compaction(mut self, factor: u32) -> Self {
        self.compaction_factor = factor;
        self
    }

    /// Rebuilds a queue from journal bytes and continues journaling into
    /// `journal`. A torn final record is ignored; the returned length is the
    /// valid prefix the caller should truncate its file to.
    pub fn recover(bytes: &[u8], journal: J) -> Result<(Self, usize)> {
        let (records, valid_len) = decode_records(bytes)?;
        let mut q = PriorityQueue::new(journal);
        for (idx, r) in records.iter().enumerate() {
            let corrupt = |reason: &str| Error::CorruptJournal { line: idx + 1, reason: reason.into() };
            match r.op {
                JournalOp::Insert => {
                    let (priority, seq) = (r.priority.unwrap_or_default(), r.seq.unwrap_or_default());
                    if q.entries.contains_key(&r.request_id) {
                        return Err(corrupt("insert of a queued id"));
                    }
                    let retries = q.retries_for(r.request_id);
                    q.apply_insert(QueueEntry { request_id: r.request_id, priority, seq, retries });
                    q.next_seq = q.next_seq.max(seq + 1);
                    q.last_removed = None;
                }
                JournalOp::Remove => {
                    let e = q.apply_remove(r.request_id).map_err(|_| corrupt("remove of an absent id"))?;
                    q.last_removed = Some(e);
                }
                JournalOp::Reprioritize => {
                    q.apply_reprioritize(r.request_id, r.priority.unwrap_or_default())
                        .map_err(|_| corrupt("reprioritize of an absent id"))?;
                    q.last_removed = None;
                }
            }
        }
        q.journal_len = records.len();
        Ok((q, valid_len))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: RequestId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: RequestId) -> Option<&QueueEntry> {
        self.entries.get(&id)
    }

    pub fn journal(&self) -> &J {
        &self.journal
    }

    pub fn journal_mut(&mut self) -> &mut J {
        &mut self.journal
    }

    pub fn into_journal(self) -> J {
        self.journal
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn retries_for(&self, id: RequestId) -> u32 {
        match self.last_removed {
            Some(e) if e.request_id == id => e.retries + 1,
            _ => 0,
        }
    }

    /// Adds a request with a fresh seq. Inserting the id that the previous
    /// operation removed counts as a retry of it.
    pub fn enqueue(&mut self, id: RequestId, priority: i64) -> Result<QueueEntry> {
        let entry = self.insert(id, priority)?;
        self.maybe_compact()?;
        Ok(entry)
    }

    fn insert(&mut self, id: RequestId, priority: i64) -> Result<QueueEntry> {
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateRequest(id));
        }
        let entry = QueueEntry { request_id: id, priority, seq: self.next_seq, retries: self.retries_for(id) };
        self.write(&JournalRecord::insert(id, priority, entry.seq))?;
        self.next_seq += 1;
        self.apply_insert(entry);
        Ok(entry)
    }

    pub fn remove(&mut self, id: RequestId) -> Result<QueueEntry> {
        let e = self.take(id)?;
        self.maybe_compact()?;
        Ok(e)
    }

    fn take(&mut self, id: RequestId) -> Result<QueueEntry> {
        if !self.entries.contains_key(&id) {
            return Err(Error::UnknownRequest(id));
        }
        self.write(&JournalRecord::remove(id))?;
        let e = self.apply_remove(id)?;
        self.last_removed = Some(e);
        Ok(e)
    }

    /// Puts a request back behind its equals after a failed start: a remove
    /// and an insert with a fresh seq, never split by compaction. The new
    /// entry's `retries` is one more than before.
    pub fn requeue(&mut self, id: RequestId, priority: i64) -> Result<QueueEntry> {
        self.take(id)?;
        let entry = self.insert(id, priority)?;
        self.maybe_compact()?;
        Ok(entry)
    }

    /// Changes the priority of a queued request. Returns whether anything
    /// changed; unchanged priorities are not journaled.
    pub fn reprioritize(&mut self, id: RequestId, priority: i64) -> Result<bool> {
        let current = self.entries.get(&id).ok_or(Error::UnknownRequest(id))?;
        if current.priority == priority {
            return Ok(false);
        }
        self.write(&JournalRecord::reprioritize(id, priority))?;
        self.apply_reprioritize(id, priority)?;
        self.maybe_compact()?;
        Ok(true)
    }

    pub fn iter_ordered(&self) -> impl Iterator<Item = &QueueEntry> + '_ {
        self.order.iter().map(|(_, id)| &self.entries[id])
    }

    pub fn ordered_snapshot(&self) -> Vec<QueueEntry> {
        self.iter_ordered().copied().collect()
    }

    pub fn head(&self) -> Option<&QueueEntry> {
        self.iter_ordered().next()
    }

    /// Replaces the journal with the smallest record list that replays to
    /// the current state.
    pub fn compact(&mut self) -> Result<()> {
        let mut by_seq: Vec<&QueueEntry> = self.entries.values().collect();
        by_seq.sort_by_key(|e| e.seq);
        let mut records = Vec::with_capacity(self.snapshot_len);
        for e in by_seq {
            // Earlier attempts are kept as insert/remove pairs so replay
            // recovers the retry count.
            for _ in 0..e.retries {
                records.push(JournalRecord::insert(e.request_id, e.priority, e.seq));
                records.push(JournalRecord::remove(e.request_id));
            }
            records.push(JournalRecord::insert(e.request_id, e.priority, e.seq));
        }
        self.journal.rewrite(&records)?;
        self.journal_len = records.len();
        self.last_removed = None;
        Ok(())
    }

    fn write(&mut self, record: &JournalRecord) -> Result<()> {
        self.journal.append(record)?;
        self.journal_len += 1;
        self.last_removed = None;
        Ok(())
    }

    fn maybe_compact(&mut self) -> Result<()> {
        let factor = self.compaction_factor as usize;
        if factor > 0 && self.journal_len > factor * self.snapshot_len.max(1) {
            self.compact()?;
        }
        Ok(())
    }

    fn apply_insert(&mut self, e: QueueEntry) {
        self.snapshot_len += 2 * e.retries as usize + 1;
        self.order.insert((key(&e), e.request_id));
        self.entries.insert(e.request_id, e);
    }

    fn apply_remove(&mut self, id: RequestId) -> Result<QueueEntry> {
        let e = self.entries.remove(&id).ok_or(Error::UnknownRequest(id))?;
        self.order.remove(&(key(&e), id));
        self.snapshot_len -= 2 * e.retries as usize + 1;
        Ok(e)
    }

    fn apply_reprioritize(&mut self, id: RequestId, priority: i64) -> Result<()> {
        let e = self.entries.get_mut(&id).ok_or(Error::UnknownRequest(id))?;
        self.order.remove(&(key(e), id));
        e.priority = priority;
        self.order.insert((key(e), id));
        Ok(())
    }
}
