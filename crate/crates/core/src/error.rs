use alloc::string::String;
use core::fmt;

use crate::model::{HostId, NodeId, ProjectId, RequestClass, RequestId, RequestState, UserId};
use crate::director::NodeState;
use crate::resources::ResourceVector;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Checked subtraction would produce a negative component.
    ResourceUnderflow { have: ResourceVector, take: ResourceVector },
    InvalidFlavor(String),
    InvalidShare(f64),
    UnknownProject(ProjectId),
    UnknownUser(UserId),
    UnknownRequest(RequestId),
    UnknownHost(HostId),
    UnknownNode(NodeId),
    DuplicateRequest(RequestId),
    DuplicateUser(UserId),
    IllegalTransition { id: RequestId, from: RequestState, to: RequestState },
    NormalPreemption(RequestId),
    NotRunning(RequestId),
    WrongClass { id: RequestId, class: RequestClass },
    NegativeDuration,
    UsageOutOfOrder { last: u64, at: u64 },
    /// Private quotas add up to more than the total capacity.
    QuotaOversubscribed { total: ResourceVector, private: ResourceVector },
    /// A quota change would break the allocation invariants.
    QuotaConflict(String),
    HostOverflow { host: HostId, request: RequestId },
    Journal(String),
    CorruptJournal { line: usize, reason: String },
    NodeNotStable { node: NodeId, state: NodeState },
    IllegalNodeTransition { node: NodeId, from: NodeState, to: NodeState },
    NegativeEntitlement { group: ProjectId, entitlement: u64, moved: u64 },
    UnknownGroup(ProjectId),
    InvalidConfig(String),
    ManagerSuspended(String),
    Invariant(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ResourceUnderflow { have, take } => {
                write!(f, "cannot take {take} from {have}")
            }
            Error::InvalidFlavor(name) => write!(f, "flavor `{name}` has no positive component"),
            Error::InvalidShare(s) => write!(f, "share must be positive and finite, got {s}"),
            Error::UnknownProject(p) => write!(f, "unknown project `{p}`"),
            Error::UnknownUser(u) => write!(f, "unknown user `{u}`"),
            Error::UnknownRequest(r) => write!(f, "unknown request {r}"),
            Error::UnknownHost(h) => write!(f, "unknown host {h}"),
            Error::UnknownNode(n) => write!(f, "unknown node {n}"),
            Error::DuplicateRequest(r) => write!(f, "request {r} is already queued"),
            Error::DuplicateUser(u) => write!(f, "user `{u}` is declared twice"),
            Error::IllegalTransition { id, from, to } => {
                write!(f, "request {id}: illegal transition {from:?} -> {to:?}")
            }
            Error::NormalPreemption(id) => write!(f, "request {id} is normal and cannot be preempted"),
            Error::NotRunning(id) => write!(f, "request {id} is not running"),
            Error::WrongClass { id, class } => write!(f, "request {id} has class {class:?}"),
            Error::NegativeDuration => f.write_str("usage duration must be non-negative"),
            Error::UsageOutOfOrder { last, at } => {
                write!(f, "usage record at {at} precedes last record at {last}")
            }
            Error::QuotaOversubscribed { total, private } => {
                write!(f, "private quotas {private} exceed total capacity {total}")
            }
            Error::QuotaConflict(msg) => write!(f, "quota conflict: {msg}"),
            Error::HostOverflow { host, request } => {
                write!(f, "request {request} does not fit on host {host}")
            }
            Error::Journal(msg) => write!(f, "journal: {msg}"),
            Error::CorruptJournal { line, reason } => {
                write!(f, "corrupt journal record at line {line}: {reason}")
            }
            Error::NodeNotStable { node, state } => {
                write!(f, "node {node} is in transitory state {state}")
            }
            Error::IllegalNodeTransition { node, from, to } => {
                write!(f, "node {node}: illegal transition {from} -> {to}")
            }
            Error::NegativeEntitlement { group, entitlement, moved } => write!(
                f,
                "group `{group}` has {entitlement} vcpus of batch entitlement, cannot move {moved}"
            ),
            Error::ManagerSuspended(m) => write!(f, "manager `{m}` is suspended"),
            Error::UnknownGroup(g) => write!(f, "unknown pledge group `{g}`"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Invariant(msg) => write!(f, "invariant violated: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
