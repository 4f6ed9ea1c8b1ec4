//! Victim selection for preemptible instances.
//!
//! When a normal request fits nowhere, hosts where `free + Σ preemptible`
//! covers the demand are candidates. Each candidate's victim sets are scored
//! by the configured ranker cascade, and the best set over all hosts wins
//! (lower host id on a full tie).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::config::{PreemptConfig, Ranker};
use crate::dispatch::{release, start_request};
use crate::dispatch::QuotaState;
use crate::error::{Error, Result};
use crate::model::{Allocation, HostId, HostPool, QuotaKind, Request, RequestClass, RequestId, RequestState, SimTime};
use crate::resources::ResourceVector;

/// Hosts with at most this many preemptibles are searched exhaustively.
pub const EXACT_SEARCH_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VictimFilter {
    Any,
    MaxVictims(usize),
}

impl VictimFilter {
    fn accepts(&self, _host: HostId, victims: &[Candidate]) -> bool {
        match self {
            VictimFilter::Any => true,
            VictimFilter::MaxVictims(n) => victims.len() <= *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VictimPolicy {
    pub filter: VictimFilter,
    pub rankers: Vec<Ranker>,
}

impl Default for VictimPolicy {
    fn default() -> Self {
        (&PreemptConfig::default()).into()
    }
}

impl From<&PreemptConfig> for VictimPolicy {
    fn from(c: &PreemptConfig) -> Self {
        VictimPolicy {
            filter: c.max_victims.map_or(VictimFilter::Any, VictimFilter::MaxVictims),
            rankers: c.rankers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VictimSelection {
    pub host: HostId,
    /// Sorted by id.
    pub victims: Vec<RequestId>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    id: RequestId,
    size: ResourceVector,
    started: SimTime,
    /// Terminating it gives back quota the request needs.
    reclaims: bool,
}

/// Quota still missing when a request is denied: the kind's free amount,
/// topped up by the victims that reclaim it.
#[derive(Debug, Clone, Copy)]
struct QuotaNeed {
    free: ResourceVector,
}

#[derive(Debug, Clone)]
struct Scored {
    host: HostId,
    victims: Vec<Candidate>,
    surplus: (u64, u64),
    /// Start times ascending; larger compares as younger.
    starts: Vec<SimTime>,
}

impl Scored {
    fn new(host: HostId, free: ResourceVector, demand: ResourceVector, mut victims: Vec<Candidate>) -> Self {
        victims.sort_by_key(|c| c.id);
        let freed: ResourceVector = victims.iter().map(|c| c.size).sum();
        let avail = free + freed;
        let surplus = (avail.vcpus - demand.vcpus, avail.memory_mb - demand.memory_mb);
        let mut starts: Vec<SimTime> = victims.iter().map(|c| c.started).collect();
        starts.sort_unstable();
        Scored { host, victims, surplus, starts }
    }

    /// `Less` means `self` is preferred.
    fn cmp_by(&self, other: &Scored, rankers: &[Ranker]) -> Ordering {
        rankers
            .iter()
            .map(|r| match r {
                Ranker::FewestVictims => self.victims.len().cmp(&other.victims.len()),
                Ranker::SmallestFreedSurplus => self.surplus.cmp(&other.surplus),
                Ranker::YoungestFirst => other.starts.cmp(&self.starts),
            })
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    /// Cascade, then victim ids, for a deterministic pick within one host.
    fn cmp_within_host(&self, other: &Scored, rankers: &[Ranker]) -> Ordering {
        self.cmp_by(other, rankers).then_with(|| {
            let a = self.victims.iter().map(|c| c.id);
            let b = other.victims.iter().map(|c| c.id);
            a.cmp(b)
        })
    }
}

fn covers(free: ResourceVector, victims: &[Candidate], demand: &ResourceVector, need: Option<QuotaNeed>) -> bool {
    demand.fits_in(&(free + victims.iter().map(|c| c.size).sum()))
        && need.is_none_or(|q| {
            demand.fits_in(&(q.free + victims.iter().filter(|c| c.reclaims).map(|c| c.size).sum()))
        })
}

fn best_on_host(
    host: HostId,
    free: ResourceVector,
    demand: ResourceVector,
    mut pool: Vec<Candidate>,
    policy: &VictimPolicy,
    need: Option<QuotaNeed>,
) -> Option<Scored> {
    let mut options: Vec<Vec<Candidate>> = Vec::new();
    if pool.len() <= EXACT_SEARCH_LIMIT {
        for mask in 1u32..(1 << pool.len()) {
            let set: Vec<Candidate> =
                pool.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, c)| *c).collect();
            options.push(set);
        }
    } else {
        options.extend(pool.iter().map(|c| alloc::vec![*c]));
        // Youngest first; on equal start the higher id goes first.
        pool.sort_by(|a, b| b.started.cmp(&a.started).then(b.id.cmp(&a.id)));
        let mut greedy = Vec::new();
        for c in pool {
            greedy.push(c);
            if covers(free, &greedy, &demand, need) {
                break;
            }
        }
        options.push(greedy);
    }
    options
        .into_iter()
        .filter(|set| covers(free, set, &demand, need) && policy.filter.accepts(host, set))
        .map(|set| Scored::new(host, free, demand, set))
        .min_by(|a, b| a.cmp_within_host(b, &policy.rankers))
}

/// Picks the host and preemptible instances to terminate so that `request`
/// can start. Hosts the request already fits on are not considered, so an
/// empty victim set is never returned.
pub fn find_victims(request: &Request, hosts: &HostPool, policy: &VictimPolicy) -> Result<Option<VictimSelection>> {
    search(request, hosts, policy, None, |_| false)
}

/// Like [`find_victims`] for a request its project's quota denies: the
/// victims must also give back enough quota of one kind. Private quota is
/// reclaimed from the project's own private preemptibles, the shared pool
/// from any shared preemptible. Returns the kind to charge.
pub fn find_victims_reclaiming(
    request: &Request,
    hosts: &HostPool,
    policy: &VictimPolicy,
    quota: &QuotaState,
) -> Result<Option<(VictimSelection, QuotaKind)>> {
    let q = quota.project(&request.project)?;
    let private_free = q.private_quota.saturating_sub(&q.private_allocated);
    let need = Some(QuotaNeed { free: private_free });
    let private = search(request, hosts, policy, need, |a| {
        a.kind == QuotaKind::Private && a.project == request.project
    })?;
    if let Some(sel) = private {
        return Ok(Some((sel, QuotaKind::Private)));
    }
    if !q.shared_eligible {
        return Ok(None);
    }
    let need = Some(QuotaNeed { free: quota.shared_pool().saturating_sub(&quota.shared_allocated()) });
    let shared = search(request, hosts, policy, need, |a| a.kind == QuotaKind::Shared)?;
    Ok(shared.map(|sel| (sel, QuotaKind::Shared)))
}

fn search(
    request: &Request,
    hosts: &HostPool,
    policy: &VictimPolicy,
    need: Option<QuotaNeed>,
    reclaims: impl Fn(&Allocation) -> bool,
) -> Result<Option<VictimSelection>> {
    if request.class != RequestClass::Normal {
        return Err(Error::WrongClass { id: request.id, class: request.class });
    }
    let demand = request.demand();
    let mut best: Option<Scored> = None;
    for host in hosts.iter().filter(|h| h.tenant.is_none() && h.admits(&request.project)) {
        if need.is_none() && demand.fits_in(&host.free()) {
            continue;
        }
        let pool: Vec<Candidate> = host
            .preemptibles()
            .map(|(id, a)| Candidate { id, size: a.size, started: a.started, reclaims: reclaims(a) })
            .collect();
        if pool.is_empty() || !covers(host.free(), &pool, &demand, need) {
            continue;
        }
        if let Some(s) = best_on_host(host.id, host.free(), demand, pool, policy, need) {
            // Hosts are visited in id order: ties keep the earlier host.
            if best.as_ref().is_none_or(|b| s.cmp_by(b, &policy.rankers) == Ordering::Less) {
                best = Some(s);
            }
        }
    }
    Ok(best.map(|s| VictimSelection { host: s.host, victims: s.victims.iter().map(|c| c.id).collect() }))
}

/// Terminates the selected victims, releasing their hosts and quota, then
/// starts `request` on the freed host. Returns the preempted ids.
pub fn preempt_and_place(
    request: RequestId,
    kind: QuotaKind,
    selection: &VictimSelection,
    hosts: &mut HostPool,
    quota: &mut QuotaState,
    requests: &mut BTreeMap<RequestId, Request>,
    now: SimTime,
) -> Result<Vec<RequestId>> {
    for victim in &selection.victims {
        let v = requests.get_mut(victim).ok_or(Error::UnknownRequest(*victim))?;
        if v.host != Some(selection.host) {
            return Err(Error::Invariant(alloc::format!("victim {victim} is not on host {}", selection.host)));
        }
        v.transition(RequestState::Preempted)?;
        v.ended_at = Some(now);
        release(quota, hosts, v)?;
    }
    let r = requests.get_mut(&request).ok_or(Error::UnknownRequest(request))?;
    if !r.demand().fits_in(&hosts.get(selection.host)?.free()) {
        return Err(Error::Invariant(alloc::format!(
            "request {request} does not fit host {} after preemption",
            selection.host
        )));
    }
    start_request(r, selection.host, kind, hosts, quota, now)?;
    Ok(selection.victims.clone())
}
