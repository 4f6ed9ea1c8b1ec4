use core::cmp::Ordering;

use crate::director::TransitionRequest;
use crate::model::{NodeId, RequestId, SimTime};

use super::workload::Arrival;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    InstanceEnd(RequestId),
    BatchEnd { node: NodeId, job: u64 },
    TtlExpiry(NodeId),
    TransitionRequest(TransitionRequest),
    /// `stream` is the generator that produced it, if any.
    Arrival { arrival: Arrival, stream: Option<usize> },
    BatchArrival { stream: usize },
    RecalcTick,
    DispatchTick,
    MetricsSnapshot,
}

impl EventKind {
    /// Order of event kinds sharing a timestamp: releases before new work,
    /// priorities before dispatch, and the metrics frame sees the settled
    /// state of its instant.
    pub fn phase(&self) -> u8 {
        match self {
            EventKind::InstanceEnd(_) | EventKind::BatchEnd { .. } => 0,
            EventKind::TtlExpiry(_) => 1,
            EventKind::TransitionRequest(_) => 2,
            EventKind::Arrival { .. } | EventKind::BatchArrival { .. } => 3,
            EventKind::RecalcTick => 4,
            EventKind::DispatchTick => 5,
            EventKind::MetricsSnapshot => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.time, self.kind.phase(), self.seq)
    }
}

impl Eq for Event {}

/// Reversed so `BinaryHeap` pops the earliest event.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
