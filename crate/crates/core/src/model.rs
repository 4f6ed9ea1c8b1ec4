//! Identifiers, projects, requests and hosts.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resources::{Flavor, ResourceVector};

/// Simulated time in whole seconds.
pub type SimTime = u64;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.into())
            }
        }
    };
}

macro_rules! int_id {
    ($name:ident, $inner:ty) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

string_id!(ProjectId);
string_id!(UserId);
int_id!(RequestId, u64);
int_id!(HostId, u32);
int_id!(NodeId, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    pub share: f64,
    pub private_quota: ResourceVector,
    /// Only projects selected by the administrator may draw on the shared pool.
    pub shared_eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub project: ProjectId,
    pub share: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestClass {
    #[default]
    Normal,
    Preemptible,
}

/// Request lifecycle. Queued requests stay in `Scheduling`; there are no
/// other waiting states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestState {
    Scheduling,
    Running,
    Completed,
    Preempted,
    Failed,
}

impl RequestState {
    pub const ALL: [RequestState; 5] = [
        RequestState::Scheduling,
        RequestState::Running,
        RequestState::Completed,
        RequestState::Preempted,
        RequestState::Failed,
    ];

    pub fn can_transition_to(self, to: RequestState) -> bool {
        use RequestState::*;
        matches!(
            (self, to),
            (Scheduling, Running) | (Scheduling, Failed) | (Running, Completed) | (Running, Preempted)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RequestState::Completed | RequestState::Preempted | RequestState::Failed)
    }
}

/// Which quota a running instance is charged against.
///
/// `Dedicated` covers instances running on nodes the partition director handed
/// to a single tenant; they are charged to neither the private nor the shared
/// quota.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuotaKind {
    Private,
    Shared,
    Dedicated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub user: UserId,
    pub project: ProjectId,
    pub flavor: Flavor,
    pub class: RequestClass,
    pub submit_time: SimTime,
    /// `None` runs until preempted or destroyed.
    pub duration: Option<SimTime>,
    pub state: RequestState,
    pub retries: u32,
    pub priority: i64,
    pub quota_kind: Option<QuotaKind>,
    /// Stops voluntarily when its node announces a TTL.
    pub honors_ttl: bool,
    pub host: Option<HostId>,
    pub started_at: Option<SimTime>,
    pub ended_at: Option<SimTime>,
}

impl Request {
    pub fn new(
        id: RequestId,
        user: UserId,
        project: ProjectId,
        flavor: Flavor,
        class: RequestClass,
        submit_time: SimTime,
        duration: Option<SimTime>,
    ) -> Self {
        Request {
            id,
            user,
            project,
            flavor,
            class,
            submit_time,
            duration,
            state: RequestState::Scheduling,
            retries: 0,
            priority: 0,
            quota_kind: None,
            honors_ttl: false,
            host: None,
            started_at: None,
            ended_at: None,
        }
    }

    pub fn demand(&self) -> ResourceVector {
        self.flavor.size
    }

    pub fn transition(&mut self, to: RequestState) -> Result<()> {
        if to == RequestState::Preempted && self.class == RequestClass::Normal {
            return Err(Error::NormalPreemption(self.id));
        }
        if !self.state.can_transition_to(to) {
            return Err(Error::IllegalTransition { id: self.id, from: self.state, to });
        }
        self.state = to;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub size: ResourceVector,
    pub class: RequestClass,
    pub project: ProjectId,
    /// Quota the instance is charged against.
    pub kind: QuotaKind,
    pub started: SimTime,
}

/// A compute host. `tenant` restricts placement to one project; `accepting`
/// is cleared while the host drains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Host {
    pub id: HostId,
    pub capacity: ResourceVector,
    pub allocations: BTreeMap<RequestId, Allocation>,
    pub tenant: Option<ProjectId>,
    pub accepting: bool,
    used: ResourceVector,
}

impl Host {
    pub fn new(id: HostId, capacity: ResourceVector) -> Self {
        Host {
            id,
            capacity,
            allocations: BTreeMap::new(),
            tenant: None,
            accepting: true,
            used: ResourceVector::ZERO,
        }
    }

    pub fn dedicated(id: HostId, capacity: ResourceVector, tenant: ProjectId) -> Self {
        Host { tenant: Some(tenant), ..Host::new(id, capacity) }
    }

    pub fn used(&self) -> ResourceVector {
        self.used
    }

    pub fn free(&self) -> ResourceVector {
        self.capacity.saturating_sub(&self.used)
    }

    /// Whether `project` may place new instances here.
    pub fn admits(&self, project: &ProjectId) -> bool {
        self.accepting && self.tenant.as_ref().is_none_or(|t| t == project)
    }

    pub fn allocate(&mut self, request: RequestId, alloc: Allocation) -> Result<()> {
        if self.allocations.contains_key(&request) || !alloc.size.fits_in(&self.free()) {
            return Err(Error::HostOverflow { host: self.id, request });
        }
        self.used = self.used + alloc.size;
        self.allocations.insert(request, alloc);
        Ok(())
    }

    pub fn deallocate(&mut self, request: RequestId) -> Result<Allocation> {
        let alloc = self.allocations.remove(&request).ok_or(Error::NotRunning(request))?;
        self.used = self.used.checked_sub(&alloc.size)?;
        Ok(alloc)
    }

    pub fn preemptibles(&self) -> impl Iterator<Item = (RequestId, &Allocation)> + '_ {
        self.allocations
            .iter()
            .filter(|(_, a)| a.class == RequestClass::Preemptible)
            .map(|(id, a)| (*id, a))
    }

    pub fn check(&self) -> Result<()> {
        let sum: ResourceVector = self.allocations.values().map(|a| a.size).sum();
        if sum != self.used || !sum.fits_in(&self.capacity) {
            return Err(Error::Invariant(alloc::format!(
                "host {} allocates {} of capacity {}",
                self.id,
                sum,
                self.capacity
            )));
        }
        Ok(())
    }
}

/// All cloud hosts, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HostPool {
    hosts: BTreeMap<HostId, Host>,
}

impl HostPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, host: Host) {
        self.hosts.insert(host.id, host);
    }

    pub fn remove(&mut self, id: HostId) -> Option<Host> {
        self.hosts.remove(&id)
    }

    pub fn get(&self, id: HostId) -> Result<&Host> {
        self.hosts.get(&id).ok_or(Error::UnknownHost(id))
    }

    pub fn get_mut(&mut self, id: HostId) -> Result<&mut Host> {
        self.hosts.get_mut(&id).ok_or(Error::UnknownHost(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Host> + '_ {
        self.hosts.values()
    }

    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    pub fn capacity(&self) -> ResourceVector {
        self.hosts.values().map(|h| h.capacity).sum()
    }

    pub fn used(&self) -> ResourceVector {
        self.hosts.values().map(|h| h.used()).sum()
    }

    pub fn next_id(&self) -> HostId {
        HostId(self.hosts.keys().next_back().map_or(0, |h| h.0 + 1))
    }

    pub fn check(&self) -> Result<()> {
        self.hosts.values().try_for_each(Host::check)
    }
}

impl FromIterator<Host> for HostPool {
    fn from_iter<I: IntoIterator<Item = Host>>(iter: I) -> Self {
        HostPool { hosts: iter.into_iter().map(|h| (h.id, h)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn request(class: RequestClass) -> Request {
        Request::new(
            RequestId(1),
            "u".into(),
            "p".into(),
            Flavor::new("small", ResourceVector::new(1, 1024)).unwrap(),
            class,
            0,
            Some(10),
        )
    }

    #[test]
    fn lifecycle_happy_paths() {
        let mut r = request(RequestClass::Normal);
        r.transition(RequestState::Running).unwrap();
        r.transition(RequestState::Completed).unwrap();
        assert!(r.transition(RequestState::Running).is_err());

        let mut p = request(RequestClass::Preemptible);
        p.transition(RequestState::Running).unwrap();
        p.transition(RequestState::Preempted).unwrap();
    }

    #[test]
    fn normal_never_preempted() {
        let mut r = request(RequestClass::Normal);
        r.transition(RequestState::Running).unwrap();
        assert_eq!(r.transition(RequestState::Preempted), Err(Error::NormalPreemption(RequestId(1))));
        assert_eq!(r.state, RequestState::Running);
    }

    #[test]
    fn host_rejects_overflow() {
        let mut h = Host::new(HostId(0), ResourceVector::new(4, 4096));
        let a = |v| Allocation {
            size: ResourceVector::new(v, 1024),
            class: RequestClass::Normal,
            project: "p".into(),
            kind: QuotaKind::Shared,
            started: 0,
        };
        h.allocate(RequestId(1), a(3)).unwrap();
        assert!(h.allocate(RequestId(2), a(2)).is_err());
        h.allocate(RequestId(2), a(1)).unwrap();
        assert_eq!(h.free(), ResourceVector::new(0, 2048));
        h.deallocate(RequestId(1)).unwrap();
        assert!(h.deallocate(RequestId(1)).is_err());
        h.check().unwrap();
    }

    fn state() -> impl Strategy<Value = RequestState> {
        prop::sample::select(RequestState::ALL.to_vec())
    }

    proptest! {
        /// Walking random target states only ever follows the four legal edges.
        #[test]
        fn random_transitions_follow_edge_set(
            preemptible in any::<bool>(),
            targets in prop::collection::vec(state(), 1..12),
        ) {
            let class = if preemptible { RequestClass::Preemptible } else { RequestClass::Normal };
            let mut r = request(class);
            for to in targets {
                let from = r.state;
                let legal = from.can_transition_to(to)
                    && !(to == RequestState::Preempted && class == RequestClass::Normal);
                let res = r.transition(to);
                prop_assert_eq!(res.is_ok(), legal);
                prop_assert_eq!(r.state, if legal { to } else { from });
            }
        }
    }
}
