//! Deterministic discrete-event simulator.
//!
//! Events are processed in `(time, phase, seq)` order; see
//! [`EventKind::phase`]. A run is a pure function of the scenario, seed
//! included.

mod event;
mod metrics;
mod scenario;
mod workload;

pub use event::{Event, EventKind};
pub use metrics::{Charged, Counters, MetricsFrame, ProjectFrame, ProjectSummary, SimOutput, Summary, WaitStats};
pub use scenario::{
    ArrivalSpec, BatchStreamSpec, DirectorEventSpec, DurationSpec, FlavorSpec, HostSpec, InitialNodeState, NodeSpec,
    ProjectSpec, Scenario, StartFailureSpec, StreamSpec, UserSpec, ValidationError, WorkloadSpec,
};
pub use workload::{fixed_arrivals, generate_workload, Arrival, ArrivalStream, BatchStream};

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmKind, Config};
use crate::director::{
    DefaultValidator, Director, Direction, DrainOutcome, NodeRecord, NodeState, PledgeTable, TransitionOutcome,
    TransitionRequest,
};
use crate::dispatch::{dispatch_cycle, release, Action, Cluster, ProjectQuota, QuotaState, ScriptedFailures};
use crate::error::{Error, Result};
use crate::model::{
    Host, HostId, HostPool, NodeId, Project, ProjectId, Request, RequestId, RequestState, SimTime, UserId,
};
use crate::preempt::VictimPolicy;
use crate::priority::{FactorTable, PriorityWeights, ShareTree};
use crate::queue::{Journal, NullJournal, PriorityQueue, QueueEntry};
use crate::resources::ResourceVector;
use crate::usage::UsageLedger;

use metrics::ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manager {
    Nova,
    Fairshare,
    Queue,
    Scheduler,
    Quota,
    Director,
}

impl Manager {
    pub const ALL: [Manager; 6] =
        [Manager::Nova, Manager::Fairshare, Manager::Queue, Manager::Scheduler, Manager::Quota, Manager::Director];

    pub fn name(self) -> &'static str {
        match self {
            Manager::Nova => "nova",
            Manager::Fairshare => "fairshare",
            Manager::Queue => "queue",
            Manager::Scheduler => "scheduler",
            Manager::Quota => "quota",
            Manager::Director => "director",
        }
    }

    pub fn from_name(name: &str) -> Option<Manager> {
        Manager::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Manager {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManagerStatus {
    Active,
    Suspended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerDescriptor {
    pub name: Manager,
    pub status: ManagerStatus,
    /// Execution period in sim-seconds, for periodic managers.
    pub rate: Option<SimTime>,
}

/// One entry of the ordered queue listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedRequest {
    pub request_id: RequestId,
    pub priority: i64,
    pub seq: u64,
    pub retries: u32,
    pub user: UserId,
    pub project: ProjectId,
    pub submit_time: SimTime,
}

/// A recorded scheduler or batch decision, kept when tracing is on.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEntry {
    Dispatch(Action),
    BatchAssigned { node: NodeId, job: u64, dynp: u8 },
    Node { node: NodeId, state: NodeState },
}

/// Running simulation state. Construct with [`Simulation::new`], then step
/// or run to the horizon.
pub struct Simulation<J = NullJournal> {
    config: Config,
    weights: PriorityWeights,
    policy: Option<VictimPolicy>,
    seed: u64,
    horizon: SimTime,
    now: SimTime,
    events: BinaryHeap<Event>,
    seq: u64,
    dispatch_pending: Option<SimTime>,

    tree: ShareTree,
    ledger: UsageLedger,
    factors: FactorTable,
    queue: PriorityQueue<J>,
    quota: QuotaState,
    hosts: HostPool,
    requests: BTreeMap<RequestId, Request>,
    next_request: u64,
    /// Running instances → time their usage was last charged.
    accounted: BTreeMap<RequestId, SimTime>,
    charged: BTreeMap<ProjectId, Charged>,
    queued: BTreeMap<ProjectId, usize>,

    director: Director,
    node_hosts: BTreeMap<NodeId, HostId>,
    next_host: u32,
    batch_queue: VecDeque<(u64, SimTime)>,
    next_batch_job: u64,

    streams: Vec<ArrivalStream>,
    batch_streams: Vec<BatchStream>,
    failures: ScriptedFailures,
    managers: BTreeMap<Manager, ManagerStatus>,

    waits: WaitStats,
    counters: Counters,
    frames: Vec<MetricsFrame>,
    capacity_vcpu_s: u64,
    capacity_mem_s: u64,
    capacity_since: SimTime,
    trace: Option<Vec<(SimTime, TraceEntry)>>,
}

impl Simulation<NullJournal> {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        Simulation::new(scenario, NullJournal)
    }
}

/// Runs a scenario to its horizon with an in-memory queue.
pub fn run(scenario: &Scenario) -> Result<SimOutput> {
    let mut sim = Simulation::from_scenario(scenario)?;
    sim.run_to_end()?;
    Ok(sim.output())
}

impl<J: Journal> Simulation<J> {
    pub fn new(scenario: &Scenario, journal: J) -> Result<Self> {
        scenario.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let config = scenario.config();

        let mut hosts = HostPool::new();
        let mut next_host = 0;
        for spec in &scenario.hosts {
            for _ in 0..spec.count {
                hosts.insert(Host::new(HostId(next_host), ResourceVector::new(spec.vcpus, spec.memory_mb)));
                next_host += 1;
            }
        }

        let projects: Vec<Project> = scenario
            .projects
            .iter()
            .map(|p| Project {
                id: p.id.as_str().into(),
                share: p.share,
                private_quota: ResourceVector::new(p.private_vcpus, p.private_memory_mb),
                shared_eligible: p.shared_eligible,
            })
            .collect();
        let quota = QuotaState::new(hosts.capacity(), &projects)?;

        let mut tree = ShareTree::new();
        for p in &scenario.projects {
            tree.add_project(p.id.as_str().into(), p.share)?;
            for u in &p.users {
                tree.add_user(&p.id.as_str().into(), u.id.as_str().into(), u.share)?;
            }
        }
        let ledger = UsageLedger::new(&config.usage)?;
        let factors = FactorTable::compute(config.priority.algorithm, &tree, &ledger, 0)?;

        let mut pledges = PledgeTable::new(scenario.pledges.iter().map(|(g, p)| (g.as_str().into(), *p)));
        let mut nodes = Vec::new();
        let mut node_hosts = BTreeMap::new();
        for n in &scenario.nodes {
            let capacity = ResourceVector::new(n.vcpus, n.memory_mb);
            let id = NodeId(n.id);
            match (&n.state, &n.tenant) {
                (InitialNodeState::C, Some(t)) => {
                    let tenant = ProjectId::from(t.as_str());
                    pledges.rebalance_shares(n.vcpus, &tenant, Direction::ToCloud)?;
                    hosts.insert(Host::dedicated(HostId(next_host), capacity, tenant.clone()));
                    node_hosts.insert(id, HostId(next_host));
                    next_host += 1;
                    nodes.push(NodeRecord::cloud(id, capacity, tenant));
                }
                _ => nodes.push(NodeRecord::batch(id, capacity)),
            }
        }
        let director = Director::new(nodes, pledges, config.director.ttl);

        let streams = scenario
            .workload
            .streams
            .iter()
            .enumerate()
            .map(|(i, s)| ArrivalStream::new(scenario, i, s))
            .collect::<Result<Vec<_>>>()?;
        let batch_streams = scenario
            .workload
            .batch
            .iter()
            .enumerate()
            .map(|(i, s)| BatchStream::new(scenario, i, s))
            .collect::<Result<Vec<_>>>()?;

        let mut sim = Simulation {
            weights: PriorityWeights::from(&config.priority),
            policy: config.preempt.enabled.then(|| VictimPolicy::from(&config.preempt)),
            seed: scenario.seed,
            horizon: scenario.horizon,
            now: 0,
            events: BinaryHeap::new(),
            seq: 0,
            dispatch_pending: None,
            tree,
            ledger,
            factors,
            queue: PriorityQueue::new(journal).with_compaction(config.queue.compaction_factor),
            charged: quota.projects().map(|(p, _)| (p.clone(), Charged::default())).collect(),
            queued: BTreeMap::new(),
            quota,
            hosts,
            requests: BTreeMap::new(),
            next_request: 0,
            accounted: BTreeMap::new(),
            director,
            node_hosts,
            next_host,
            batch_queue: VecDeque::new(),
            next_batch_job: 0,
            streams,
            batch_streams,
            failures: ScriptedFailures::new(
                scenario.start_failures.iter().map(|f| (RequestId(f.request), f.attempts)),
            ),
            managers: Manager::ALL.into_iter().map(|m| (m, ManagerStatus::Active)).collect(),
            waits: WaitStats::default(),
            counters: Counters::default(),
            frames: Vec::new(),
            capacity_vcpu_s: 0,
            capacity_mem_s: 0,
            capacity_since: 0,
            trace: None,
            config,
        };

        for arrival in fixed_arrivals(scenario)? {
            let t = arrival.time;
            sim.schedule(t, EventKind::Arrival { arrival, stream: None })?;
        }
        for i in 0..sim.streams.len() {
            sim.schedule_stream(i)?;
        }
        for i in 0..sim.batch_streams.len() {
            sim.schedule_batch_stream(i)?;
        }
        for e in &scenario.director_events {
            let request = TransitionRequest {
                node: NodeId(e.node),
                target: e.target,
                tenant: e.tenant.as_deref().map(ProjectId::from),
                ttl: e.ttl,
            };
            sim.schedule(e.time, EventKind::TransitionRequest(request))?;
        }
        sim.schedule(0, EventKind::RecalcTick)?;
        sim.schedule(0, EventKind::MetricsSnapshot)?;
        Ok(sim)
    }

    /// Records every dispatch action, batch assignment and node state change.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[(SimTime, TraceEntry)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn record(&mut self, entry: TraceEntry) {
        if let Some(t) = &mut self.trace {
            t.push((self.now, entry));
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn requests(&self) -> &BTreeMap<RequestId, Request> {
        &self.requests
    }

    pub fn hosts(&self) -> &HostPool {
        &self.hosts
    }

    pub fn quota_state(&self) -> &QuotaState {
        &self.quota
    }

    pub fn queue(&self) -> &PriorityQueue<J> {
        &self.queue
    }

    pub fn director(&self) -> &Director {
        &self.director
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn share_tree(&self) -> &ShareTree {
        &self.tree
    }

    pub fn frames(&self) -> &[MetricsFrame] {
        &self.frames
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn charged(&self) -> &BTreeMap<ProjectId, Charged> {
        &self.charged
    }

    /// Host currently backing a cloud-side node.
    pub fn node_host(&self, node: NodeId) -> Option<HostId> {
        self.node_hosts.get(&node).copied()
    }

    /// Causality: nothing may be scheduled before the current instant.
    fn schedule(&mut self, time: SimTime, kind: EventKind) -> Result<()> {
        if time < self.now {
            return Err(Error::Invariant(format!("event {kind:?} scheduled at {time} before now {}", self.now)));
        }
        if time > self.horizon {
            return Ok(());
        }
        self.seq += 1;
        self.events.push(Event { time, seq: self.seq, kind });
        Ok(())
    }

    fn schedule_stream(&mut self, i: usize) -> Result<()> {
        if let Some(arrival) = self.streams[i].next_arrival() {
            let t = arrival.time.max(self.now);
            self.schedule(t, EventKind::Arrival { arrival, stream: Some(i) })?;
        }
        Ok(())
    }

    fn schedule_batch_stream(&mut self, i: usize) -> Result<()> {
        if let Some((t, _)) = self.batch_streams[i].clone().next() {
            self.schedule(t.max(self.now), EventKind::BatchArrival { stream: i })?;
        }
        Ok(())
    }

    fn request_dispatch(&mut self) -> Result<()> {
        if self.dispatch_pending != Some(self.now) {
            self.dispatch_pending = Some(self.now);
            self.schedule(self.now, EventKind::DispatchTick)?;
        }
        Ok(())
    }

    fn active(&self, m: Manager) -> bool {
        self.managers[&m] == ManagerStatus::Active
    }

    /// Time of the next pending event, if any remain within the horizon.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.events.peek().map(|e| e.time)
    }

    /// Processes one event. Returns false when none is left.
    pub fn step(&mut self) -> Result<bool> {
        let Some(event) = self.events.pop() else {
            return Ok(false);
        };
        self.now = event.time;
        self.handle(event.kind)?;
        Ok(true)
    }

    /// Processes every event up to and including `until`, then parks the
    /// clock there (never beyond the horizon).
    pub fn run_until(&mut self, until: SimTime) -> Result<()> {
        let until = until.min(self.horizon);
        while self.peek_time().is_some_and(|t| t <= until) {
            self.step()?;
        }
        self.now = self.now.max(until);
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_until(self.horizon)
    }

    fn handle(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::Arrival { arrival, stream } => {
                if let Some(i) = stream {
                    self.schedule_stream(i)?;
                }
                self.arrive(arrival)
            }
            EventKind::InstanceEnd(id) => {
                let r = self.requests.get(&id).ok_or(Error::UnknownRequest(id))?;
                if r.state != RequestState::Running {
                    return Ok(());
                }
                let host = r.host;
                self.finish_instance(id)?;
                self.counters.completed += 1;
                if let Some(node) = host.and_then(|h| self.host_node(h)) {
                    self.check_drain(node)?;
                }
                self.request_dispatch()
            }
            EventKind::RecalcTick => {
                self.settle_all()?;
                if self.active(Manager::Fairshare) {
                    self.recalculate()?;
                }
                let next = self.now + self.config.dispatch.recalc_period;
                self.schedule(next, EventKind::RecalcTick)?;
                self.request_dispatch()
            }
            EventKind::DispatchTick => {
                self.dispatch_pending = None;
                if self.active(Manager::Scheduler) && self.active(Manager::Nova) {
                    self.dispatch()?;
                }
                Ok(())
            }
            EventKind::TransitionRequest(request) => self.transition(request),
            EventKind::TtlExpiry(node) => self.check_drain(node),
            EventKind::BatchArrival { stream } => {
                let (_, duration) = self.batch_streams[stream].next().expect("scheduled from a peeked job");
                self.schedule_batch_stream(stream)?;
                let max = self.batch_streams[stream].max_pending;
                if max.is_some_and(|m| self.batch_queue.len() >= m) {
                    self.counters.batch_dropped += 1;
                    return Ok(());
                }
                self.counters.batch_submitted += 1;
                self.batch_queue.push_back((self.next_batch_job, duration));
                self.next_batch_job += 1;
                self.assign_batch()
            }
            EventKind::BatchEnd { node, job } => {
                self.director.node_mut(node)?.finish_batch_job(job);
                self.counters.batch_completed += 1;
                if self.director.node(node)?.state() == NodeState::B2C {
                    self.check_drain(node)?;
                }
                self.assign_batch()
            }
            EventKind::MetricsSnapshot => {
                self.settle_all()?;
                let frame = self.frame();
                self.frames.push(frame);
                let mut next = self.now + self.config.metrics.period;
                if next > self.horizon && self.now < self.horizon {
                    next = self.horizon;
                }
                self.schedule(next, EventKind::MetricsSnapshot)
            }
        }
    }

    fn arrive(&mut self, a: Arrival) -> Result<()> {
        if !self.active(Manager::Queue) {
            self.counters.dropped += 1;
            return Ok(());
        }
        let queued = self.queued.get(&a.project).copied().unwrap_or(0);
        if a.max_pending.is_some_and(|m| queued >= m) {
            self.counters.dropped += 1;
            return Ok(());
        }
        let id = RequestId(self.next_request);
        self.next_request += 1;
        let mut r = Request::new(id, a.user, a.project, a.flavor, a.class, self.now, a.duration);
        r.honors_ttl = a.honors_ttl;
        self.submit(r)
    }

    fn submit(&mut self, mut r: Request) -> Result<()> {
        r.priority = self.factors.priority(&r, &self.weights, self.now)?;
        self.queue.enqueue(r.id, r.priority)?;
        *self.queued.entry(r.project.clone()).or_default() += 1;
        self.counters.submitted += 1;
        self.requests.insert(r.id, r);
        self.request_dispatch()
    }

    fn recalculate(&mut self) -> Result<()> {
        self.factors = FactorTable::compute(self.config.priority.algorithm, &self.tree, &self.ledger, self.now)?;
        let ids: Vec<RequestId> = self.queue.iter_ordered().map(|e| e.request_id).collect();
        for id in ids {
            let r = self.requests.get_mut(&id).ok_or(Error::UnknownRequest(id))?;
            let p = self.factors.priority(r, &self.weights, self.now)?;
            r.priority = p;
            self.queue.reprioritize(id, p)?;
        }
        Ok(())
    }

    /// Charges a running instance for the time since it was last charged.
    fn settle(&mut self, id: RequestId) -> Result<()> {
        let Some(from) = self.accounted.get_mut(&id) else {
            return Ok(());
        };
        let dt = self.now - *from;
        *from = self.now;
        if dt == 0 {
            return Ok(());
        }
        let r = &self.requests[&id];
        let kind = r.quota_kind.ok_or(Error::NotRunning(id))?;
        self.charged.entry(r.project.clone()).or_default().add(kind, &r.demand(), dt);
        self.ledger.record_usage(&r.user, &r.demand(), dt as f64, self.now)?;
        Ok(())
    }

    fn settle_all(&mut self) -> Result<()> {
        let ids: Vec<RequestId> = self.accounted.keys().copied().collect();
        for id in ids {
            self.settle(id)?;
        }
        Ok(())
    }

    /// Completes a running instance and frees its resources.
    fn finish_instance(&mut self, id: RequestId) -> Result<()> {
        self.settle(id)?;
        self.accounted.remove(&id);
        let r = self.requests.get_mut(&id).ok_or(Error::UnknownRequest(id))?;
        r.transition(RequestState::Completed)?;
        r.ended_at = Some(self.now);
        release(&mut self.quota, &mut self.hosts, r)
    }

    fn dispatch(&mut self) -> Result<()> {
        let cluster = Cluster {
            queue: &mut self.queue,
            quota: &mut self.quota,
            hosts: &mut self.hosts,
            requests: &mut self.requests,
        };
        let actions = dispatch_cycle(cluster, &self.config.dispatch, self.policy.as_ref(), &mut self.failures, self.now)?;
        for action in actions {
            match &action {
                Action::Started { request, preempted, .. } => {
                    let r = &self.requests[request];
                    let (project, wait, end) = (r.project.clone(), self.now - r.submit_time, r.duration);
                    self.counters.started += 1;
                    self.waits.record(wait);
                    self.accounted.insert(*request, self.now);
                    *self.queued.get_mut(&project).expect("queued before") -= 1;
                    if let Some(d) = end {
                        self.schedule(self.now + d, EventKind::InstanceEnd(*request))?;
                    }
                    for v in preempted {
                        self.counters.preempted += 1;
                        self.settle(*v)?;
                        self.accounted.remove(v);
                        if self.config.preempt.requeue {
                            let old = &self.requests[v];
                            let id = RequestId(self.next_request);
                            self.next_request += 1;
                            let mut again = Request::new(
                                id,
                                old.user.clone(),
                                old.project.clone(),
                                old.flavor.clone(),
                                old.class,
                                self.now,
                                old.duration,
                            );
                            again.honors_ttl = old.honors_ttl;
                            self.submit(again)?;
                        }
                    }
                }
                Action::Retried { .. } => self.counters.retries += 1,
                Action::Failed { request } => {
                    self.counters.failed += 1;
                    let project = self.requests[request].project.clone();
                    *self.queued.get_mut(&project).expect("queued before") -= 1;
                }
                Action::Skipped { .. } => {}
            }
            self.record(TraceEntry::Dispatch(action));
        }
        Ok(())
    }

    fn host_node(&self, host: HostId) -> Option<NodeId> {
        self.node_hosts.iter().find(|(_, h)| **h == host).map(|(n, _)| *n)
    }

    /// Accumulates the capacity integral before the host set changes.
    fn touch_capacity(&mut self) {
        let dt = self.now - self.capacity_since;
        let cap = self.hosts.capacity();
        self.capacity_vcpu_s += cap.vcpus * dt;
        self.capacity_mem_s += cap.memory_mb * dt;
        self.capacity_since = self.now;
    }

    fn transition(&mut self, request: TransitionRequest) -> Result<()> {
        if !self.active(Manager::Director) {
            self.counters.transitions_rejected += 1;
            return Ok(());
        }
        let outcome = match self.director.request_transition(&request, &DefaultValidator, self.now) {
            Ok(o) => o,
            Err(Error::Invariant(m)) => return Err(Error::Invariant(m)),
            Err(_) => {
                self.counters.transitions_rejected += 1;
                return Ok(());
            }
        };
        let node = request.node;
        match outcome {
            TransitionOutcome::Reverted(_) => self.counters.transitions_reverted += 1,
            TransitionOutcome::Draining { state, .. } => {
                self.counters.transitions_accepted += 1;
                self.record(TraceEntry::Node { node, state });
                if state == NodeState::C2B {
                    let host = *self.node_hosts.get(&node).ok_or(Error::UnknownNode(node))?;
                    let h = self.hosts.get_mut(host)?;
                    h.accepting = false;
                    let ids: Vec<RequestId> = h.allocations.keys().copied().collect();
                    for id in ids {
                        if self.requests[&id].honors_ttl {
                            self.finish_instance(id)?;
                            self.counters.ttl_graceful += 1;
                        }
                    }
                    let deadline = self.director.node(node)?.ttl_deadline().expect("set in C2B");
                    self.schedule(deadline, EventKind::TtlExpiry(node))?;
                }
                self.check_drain(node)?;
            }
        }
        self.request_dispatch()
    }

    fn check_drain(&mut self, node: NodeId) -> Result<()> {
        let host = self.node_hosts.get(&node).copied();
        let vms = match host {
            Some(h) => self.hosts.get(h)?.allocations.len(),
            None => 0,
        };
        match self.director.tick_draining(node, self.now, vms)? {
            DrainOutcome::Waiting => {}
            DrainOutcome::BecameCloud => {
                let n = self.director.node(node)?;
                let tenant = n.cloud_tenant.clone().ok_or_else(|| Error::Invariant(format!("node {node} in C without tenant")))?;
                let capacity = n.capacity;
                self.touch_capacity();
                let id = HostId(self.next_host);
                self.next_host += 1;
                self.hosts.insert(Host::dedicated(id, capacity, tenant));
                self.node_hosts.insert(node, id);
                self.record(TraceEntry::Node { node, state: NodeState::C });
                self.request_dispatch()?;
            }
            DrainOutcome::BecameBatch { destroy } => {
                let host = self.node_hosts.remove(&node).ok_or(Error::UnknownNode(node))?;
                if destroy {
                    let ids: Vec<RequestId> = self.hosts.get(host)?.allocations.keys().copied().collect();
                    for id in ids {
                        self.finish_instance(id)?;
                        self.counters.ttl_destroyed += 1;
                    }
                }
                if !self.hosts.get(host)?.allocations.is_empty() {
                    return Err(Error::Invariant(format!("node {node} entered B with instances")));
                }
                self.touch_capacity();
                self.hosts.remove(host);
                self.record(TraceEntry::Node { node, state: NodeState::B });
                self.assign_batch()?;
                self.request_dispatch()?;
            }
        }
        Ok(())
    }

    /// FIFO batch scheduler: jobs go to the lowest-id node publishing
    /// dynp 1 with a free slot (one per vcpu).
    fn assign_batch(&mut self) -> Result<()> {
        while let Some(&(job, duration)) = self.batch_queue.front() {
            let Some(node) = self
                .director
                .nodes()
                .find(|n| n.dynp() == 1 && (n.batch_jobs().len() as u64) < n.capacity.vcpus)
                .map(|n| n.id)
            else {
                break;
            };
            let record = self.director.node_mut(node)?;
            record.assign_batch_job(job)?;
            let dynp = record.dynp();
            self.batch_queue.pop_front();
            self.record(TraceEntry::BatchAssigned { node, job, dynp });
            self.schedule(self.now + duration, EventKind::BatchEnd { node, job })?;
        }
        Ok(())
    }

    fn frame(&self) -> MetricsFrame {
        let capacity = self.hosts.capacity();
        let used = self.hosts.used();
        let mut projects: BTreeMap<ProjectId, ProjectFrame> = self
            .charged
            .iter()
            .map(|(p, c)| (p.clone(), ProjectFrame { running: ResourceVector::ZERO, charged: *c }))
            .collect();
        for h in self.hosts.iter() {
            for a in h.allocations.values() {
                if let Some(f) = projects.get_mut(&a.project) {
                    f.running = f.running + a.size;
                }
            }
        }
        MetricsFrame {
            time: self.now,
            util_vcpus: ratio(used.vcpus, capacity.vcpus),
            util_memory: ratio(used.memory_mb, capacity.memory_mb),
            shared_pool_util: ratio(self.quota.shared_allocated().vcpus, self.quota.shared_pool().vcpus),
            queue_len: self.queue.len(),
            mean_wait: self.waits.mean(),
            p95_wait: self.waits.percentile(95.0),
            preemptions: self.counters.preempted,
            projects,
        }
    }

    /// Aggregates of the run so far, with usage settled to the current instant.
    pub fn summary(&mut self) -> Result<Summary> {
        self.settle_all()?;
        self.touch_capacity();
        let vcpu_seconds: u64 = self.charged.values().map(Charged::vcpu_s).sum();
        let mem_seconds: u64 = self.charged.values().map(Charged::mem_mb_s).sum();
        let shared_total: u64 = self.charged.values().map(|c| c.shared_vcpu_s).sum();
        let share_total: f64 = self.tree.projects().map(|(_, p)| p.share).sum();
        let projects = self
            .charged
            .iter()
            .map(|(id, c)| {
                let share = self.tree.project(id).map_or(0.0, |p| p.share);
                let share_fraction = if share_total > 0.0 { share / share_total } else { 0.0 };
                let usage_fraction = ratio(c.vcpu_s(), vcpu_seconds);
                let summary = ProjectSummary {
                    share_fraction,
                    usage_fraction,
                    shared_fraction: ratio(c.shared_vcpu_s, shared_total),
                    fairness_ratio: if share_fraction > 0.0 { usage_fraction / share_fraction } else { 0.0 },
                    charged: *c,
                };
                (id.clone(), summary)
            })
            .collect();
        Ok(Summary {
            seed: self.seed,
            horizon: self.horizon,
            frames: self.frames.len(),
            vcpu_seconds,
            capacity_vcpu_seconds: self.capacity_vcpu_s,
            mean_util_vcpus: ratio(vcpu_seconds, self.capacity_vcpu_s),
            mean_util_memory: ratio(mem_seconds, self.capacity_mem_s),
            mean_wait: self.waits.mean(),
            p95_wait: self.waits.percentile(95.0),
            counters: self.counters.clone(),
            projects,
            batch_shares: self.director.pledges.shares(),
            algorithm: match self.config.priority.algorithm {
                AlgorithmKind::MultiFactor => "multifactor".into(),
                AlgorithmKind::FairTree => "fairtree".into(),
            },
        })
    }

    pub fn output(mut self) -> SimOutput {
        let summary = self.summary().expect("settling running instances cannot fail after a clean run");
        SimOutput { frames: self.frames, summary }
    }

    // Management commands. They apply between events; the scheduler sees
    // them at the next dispatch cycle.

    pub fn managers(&self) -> Vec<ManagerDescriptor> {
        self.managers
            .iter()
            .map(|(m, s)| ManagerDescriptor {
                name: *m,
                status: *s,
                rate: match m {
                    Manager::Fairshare | Manager::Scheduler => Some(self.config.dispatch.recalc_period),
                    _ => None,
                },
            })
            .collect()
    }

    /// Suspending never drops queue contents; resuming triggers a dispatch.
    pub fn set_manager(&mut self, manager: Manager, status: ManagerStatus) -> Result<()> {
        self.managers.insert(manager, status);
        if status == ManagerStatus::Active {
            self.request_dispatch()?;
        }
        Ok(())
    }

    pub fn project_quota(&self, project: &ProjectId) -> Result<&ProjectQuota> {
        self.quota.project(project)
    }

    /// Future admissions only; running instances are never evicted.
    pub fn set_private_quota(&mut self, project: &ProjectId, quota: ResourceVector) -> Result<()> {
        if !self.active(Manager::Quota) {
            return Err(Error::ManagerSuspended(Manager::Quota.name().into()));
        }
        self.quota.set_private_quota(project, quota)?;
        self.request_dispatch()
    }

    pub fn queue_snapshot(&self) -> Vec<QueuedRequest> {
        self.queue
            .iter_ordered()
            .map(|e: &QueueEntry| {
                let r = &self.requests[&e.request_id];
                QueuedRequest {
                    request_id: e.request_id,
                    priority: e.priority,
                    seq: e.seq,
                    retries: e.retries,
                    user: r.user.clone(),
                    project: r.project.clone(),
                    submit_time: r.submit_time,
                }
            })
            .collect()
    }

    /// Queues a node conversion for the current instant.
    pub fn request_node_transition(&mut self, request: TransitionRequest) -> Result<()> {
        if !self.active(Manager::Director) {
            return Err(Error::ManagerSuspended(Manager::Director.name().into()));
        }
        let state = self.director.node(request.node)?.state();
        if !state.is_stable() {
            return Err(Error::NodeNotStable { node: request.node, state });
        }
        self.schedule(self.now, EventKind::TransitionRequest(request))
    }

    /// Submits a request at the current instant, outside any workload stream.
    pub fn submit_arrival(&mut self, mut arrival: Arrival) -> Result<()> {
        self.tree.project_of(&arrival.user)?;
        arrival.time = self.now;
        self.schedule(self.now, EventKind::Arrival { arrival, stream: None })
    }

    pub fn check(&self) -> Result<()> {
        self.hosts.check()?;
        self.quota.check()?;
        self.director.check()
    }
}

#[cfg(test)]
mod tests;
