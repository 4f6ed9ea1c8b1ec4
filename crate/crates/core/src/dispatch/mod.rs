//! The scheduling cycle: quota admission, backfilling sweep, host placement,
//! preemption and start retries.

mod quota;

pub use quota::{shared_pool_size, Admission, ProjectQuota, QuotaState};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{DispatchConfig, Weigher};
use crate::error::{Error, Result};
use crate::model::{Allocation, Host, HostId, HostPool, QuotaKind, Request, RequestClass, RequestId, RequestState, SimTime};
use crate::preempt::{find_victims, find_victims_reclaiming, preempt_and_place, VictimPolicy};
use crate::queue::{Journal, PriorityQueue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    QuotaDenied,
    NoHost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Started { request: RequestId, host: HostId, kind: QuotaKind, preempted: Vec<RequestId> },
    Skipped { request: RequestId, reason: SkipReason },
    /// Host start failed; the request went back into the queue.
    Retried { request: RequestId, retries: u32 },
    Failed { request: RequestId },
}

/// Decides whether a start attempt fails on the host.
pub trait StartFailures {
    fn fails(&mut self, request: &Request) -> bool;
}

/// Every start succeeds.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoFailures;

impl StartFailures for NoFailures {
    fn fails(&mut self, _: &Request) -> bool {
        false
    }
}

/// Fails the first `n` start attempts of the listed requests.
#[derive(Debug, Default, Clone)]
pub struct ScriptedFailures {
    remaining: BTreeMap<RequestId, u32>,
}

impl ScriptedFailures {
    pub fn new(plan: impl IntoIterator<Item = (RequestId, u32)>) -> Self {
        ScriptedFailures { remaining: plan.into_iter().collect() }
    }
}

impl StartFailures for ScriptedFailures {
    fn fails(&mut self, request: &Request) -> bool {
        match self.remaining.get_mut(&request.id) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }
}

fn best_host<'a>(
    demand: &crate::resources::ResourceVector,
    hosts: impl Iterator<Item = &'a Host>,
    weigher: Weigher,
) -> Option<HostId> {
    let mut best: Option<(&Host, u64)> = None;
    for h in hosts.filter(|h| demand.fits_in(&h.free())) {
        let free = h.free().vcpus;
        let better = match (best, weigher) {
            (None, _) => true,
            (Some((_, b)), Weigher::MostFreeVcpus) => free > b,
            (Some((_, b)), Weigher::LeastFreeVcpus) => free < b,
        };
        if better {
            best = Some((h, free));
        }
    }
    best.map(|(h, _)| h.id)
}

/// Chooses a shared (non-dedicated) host for `request` per the weigher;
/// ties go to the lowest host id.
pub fn place(request: &Request, hosts: &HostPool, weigher: Weigher) -> Option<HostId> {
    best_host(
        &request.demand(),
        hosts.iter().filter(|h| h.tenant.is_none() && h.admits(&request.project)),
        weigher,
    )
}

/// Chooses among the hosts dedicated to the request's project.
pub fn place_dedicated(request: &Request, hosts: &HostPool, weigher: Weigher) -> Option<HostId> {
    best_host(
        &request.demand(),
        hosts.iter().filter(|h| h.tenant.as_ref() == Some(&request.project) && h.accepting),
        weigher,
    )
}

/// Allocates, charges and marks `request` running on `host`.
pub fn start_request(
    request: &mut Request,
    host: HostId,
    kind: QuotaKind,
    hosts: &mut HostPool,
    quota: &mut QuotaState,
    now: SimTime,
) -> Result<()> {
    let demand = request.demand();
    quota.charge(&request.project, kind, &demand)?;
    let alloc =
        Allocation { size: demand, class: request.class, project: request.project.clone(), kind, started: now };
    if let Err(e) = hosts.get_mut(host).and_then(|h| h.allocate(request.id, alloc)) {
        quota.credit(&request.project, kind, &demand)?;
        return Err(e);
    }
    request.transition(RequestState::Running)?;
    request.host = Some(host);
    request.quota_kind = Some(kind);
    request.started_at = Some(now);
    Ok(())
}

/// Frees the host allocation of a finished instance and credits back the
/// quota kind it was charged against.
pub fn release(quota: &mut QuotaState, hosts: &mut HostPool, request: &mut Request) -> Result<()> {
    if !matches!(request.state, RequestState::Completed | RequestState::Preempted) {
        return Err(Error::NotRunning(request.id));
    }
    let (Some(host), Some(kind)) = (request.host, request.quota_kind) else {
        return Err(Error::NotRunning(request.id));
    };
    let alloc = hosts.get_mut(host)?.deallocate(request.id)?;
    quota.credit(&request.project, kind, &alloc.size)?;
    request.host = None;
    Ok(())
}

/// Mutable scheduler state one cycle works on.
pub struct Cluster<'a, J> {
    pub queue: &'a mut PriorityQueue<J>,
    pub quota: &'a mut QuotaState,
    pub hosts: &'a mut HostPool,
    pub requests: &'a mut BTreeMap<RequestId, Request>,
}

fn nothing_fits(hosts: &HostPool) -> bool {
    hosts.iter().all(|h| !h.accepting || h.free().is_zero()) && hosts.iter().all(|h| h.preemptibles().next().is_none())
}

/// One pass over the queue in priority order. Requests that are denied by
/// quota or fit no host are skipped and stay queued; the sweep never stops
/// at a blocked request.
pub fn dispatch_cycle<J: Journal>(
    cluster: Cluster<'_, J>,
    config: &DispatchConfig,
    preemption: Option<&VictimPolicy>,
    failures: &mut dyn StartFailures,
    now: SimTime,
) -> Result<Vec<Action>> {
    let Cluster { queue, quota, hosts, requests } = cluster;
    let mut actions = Vec::new();
    for entry in queue.ordered_snapshot() {
        if nothing_fits(hosts) {
            break;
        }
        let id = entry.request_id;
        let request = requests.get(&id).ok_or(Error::UnknownRequest(id))?;
        if request.state != RequestState::Scheduling {
            return Err(Error::Invariant(alloc::format!("queued request {id} is {:?}", request.state)));
        }

        let mut target = place_dedicated(request, hosts, config.weigher).map(|h| (h, QuotaKind::Dedicated, None));
        if target.is_none() {
            let preempt = preemption.filter(|_| request.class == RequestClass::Normal);
            let kind = match quota.admit(&request.project, &request.demand())? {
                Admission::Deny => {
                    let reclaimed = match preempt {
                        Some(policy) => find_victims_reclaiming(request, hosts, policy, quota)?,
                        None => None,
                    };
                    let Some((sel, kind)) = reclaimed else {
                        actions.push(Action::Skipped { request: id, reason: SkipReason::QuotaDenied });
                        continue;
                    };
                    target = Some((sel.host, kind, Some(sel)));
                    kind
                }
                Admission::Private => QuotaKind::Private,
                Admission::Shared => QuotaKind::Shared,
            };
            if target.is_none() {
                target = place(request, hosts, config.weigher).map(|h| (h, kind, None));
            }
            if target.is_none() {
                if let Some(policy) = preempt {
                    target = find_victims(request, hosts, policy)?.map(|sel| (sel.host, kind, Some(sel)));
                }
            }
        }
        let Some((host, kind, victims)) = target else {
            actions.push(Action::Skipped { request: id, reason: SkipReason::NoHost });
            continue;
        };

        let request = requests.get_mut(&id).expect("looked up above");
        if failures.fails(request) {
            if request.retries >= config.max_retries {
                queue.remove(id)?;
                request.transition(RequestState::Failed)?;
                request.ended_at = Some(now);
                actions.push(Action::Failed { request: id });
            } else {
                request.retries = queue.requeue(id, request.priority)?.retries;
                actions.push(Action::Retried { request: id, retries: request.retries });
            }
            continue;
        }

        queue.remove(id)?;
        let preempted = match victims {
            Some(sel) => preempt_and_place(id, kind, &sel, hosts, quota, requests, now)?,
            None => {
                start_request(request, host, kind, hosts, quota, now)?;
                Vec::new()
            }
        };
        actions.push(Action::Started { request: id, host, kind, preempted });
    }
    Ok(actions)
}
