use alloc::string::String;
use alloc::vec;

use super::*;
use crate::dispatch::Action;
use crate::model::RequestClass;

fn flavor(name: &str, vcpus: u64, memory_mb: u64) -> FlavorSpec {
    FlavorSpec { name: name.into(), vcpus, memory_mb }
}

fn project(id: &str, share: f64, users: &[&str]) -> ProjectSpec {
    ProjectSpec {
        id: id.into(),
        share,
        private_vcpus: 0,
        private_memory_mb: 0,
        shared_eligible: true,
        users: users.iter().map(|u| UserSpec { id: (*u).into(), share: 1.0 }).collect(),
    }
}

fn arrival(time: SimTime, user: &str, flavor: &str, duration: Option<SimTime>) -> ArrivalSpec {
    ArrivalSpec { time, user: user.into(), flavor: flavor.into(), class: RequestClass::Normal, duration, honors_ttl: false }
}

fn base(horizon: SimTime, hosts: u32, vcpus: u64) -> Scenario {
    Scenario {
        horizon,
        hosts: vec![HostSpec { count: hosts, vcpus, memory_mb: vcpus * 2048 }],
        flavors: vec![flavor("small", 2, 4096), flavor("large", 8, 16384), flavor("cpu2", 2, 0)],
        projects: vec![project("A", 3.0, &["a"]), project("B", 1.0, &["b"])],
        ..Scenario::default()
    }
}

fn stream(user: &str, rate: f64, mean: f64) -> StreamSpec {
    StreamSpec {
        user: user.into(),
        rate,
        flavors: [(String::from("small"), 1.0)].into_iter().collect(),
        duration: DurationSpec::Exponential { mean },
        preemptible_fraction: 0.0,
        honors_ttl_fraction: 0.0,
        start: 0,
        end: None,
        max_pending: Some(20),
    }
}

fn starts<J: Journal>(sim: &Simulation<J>) -> Vec<(SimTime, u64)> {
    sim.trace()
        .iter()
        .filter_map(|(t, e)| match e {
            TraceEntry::Dispatch(Action::Started { request, .. }) => Some((*t, request.0)),
            _ => None,
        })
        .collect()
}

#[test]
fn empty_workload_is_idle() {
    let out = run(&base(3600, 2, 8)).unwrap();
    assert_eq!(out.frames.len(), 61);
    for f in &out.frames {
        assert_eq!((f.util_vcpus, f.util_memory, f.queue_len), (0.0, 0.0, 0));
    }
    assert_eq!(out.summary.vcpu_seconds, 0);
    assert_eq!(out.summary.capacity_vcpu_seconds, 16 * 3600);
}

#[test]
fn one_request_runs_for_its_duration() {
    let mut s = base(1000, 1, 8);
    s.workload.arrivals = vec![arrival(5, "a", "small", Some(300))];
    let mut sim = Simulation::from_scenario(&s).unwrap();
    sim.run_to_end().unwrap();
    let r = &sim.requests()[&RequestId(0)];
    assert_eq!((r.started_at, r.ended_at, r.state), (Some(5), Some(305), RequestState::Completed));
    let out = sim.output();
    assert_eq!(out.summary.mean_wait, 0.0);
    assert_eq!(out.summary.vcpu_seconds, 600);
    assert_eq!(out.summary.projects[&ProjectId::from("A")].charged.shared_vcpu_s, 600);
    // Frame at t=300 sees it running, t=360 does not.
    let at = |t| out.frames.iter().find(|f| f.time == t).unwrap();
    assert_eq!(at(300).util_vcpus, 0.25);
    assert_eq!(at(360).util_vcpus, 0.0);
}

#[test]
fn last_frame_lands_on_horizon() {
    let out = run(&base(130, 1, 8)).unwrap();
    let times: Vec<SimTime> = out.frames.iter().map(|f| f.time).collect();
    assert_eq!(times, [0, 60, 120, 130]);
}

#[test]
fn fixed_arrivals_are_echoed() {
    let mut s = base(1000, 1, 8);
    s.workload.arrivals = vec![arrival(50, "b", "large", None), arrival(10, "a", "small", Some(3))];
    let fixed = fixed_arrivals(&s).unwrap();
    assert_eq!(fixed.len(), 2);
    assert_eq!((fixed[0].time, fixed[0].user.as_str(), fixed[0].duration), (50, "b", None));
    assert_eq!((fixed[1].time, fixed[1].flavor.name.as_str(), fixed[1].duration), (10, "small", Some(3)));
    let all = generate_workload(&s).unwrap();
    assert_eq!(all.iter().map(|a| a.time).collect::<Vec<_>>(), [10, 50]);
}

#[test]
fn workload_is_deterministic() {
    let mut s = base(86_400, 1, 8);
    s.workload.streams = vec![stream("a", 0.01, 600.0), stream("b", 0.02, 60.0)];
    s.seed = 7;
    let w1 = generate_workload(&s).unwrap();
    assert_eq!(w1, generate_workload(&s).unwrap());
    s.seed = 8;
    assert_ne!(w1, generate_workload(&s).unwrap());
}

#[test]
fn poisson_counts_over_seeds() {
    let (rate, horizon) = (0.05, 20_000u64);
    let expected = rate * horizon as f64;
    let sigma = libm::sqrt(expected);
    let mut total = 0.0;
    for seed in 0..40 {
        let mut s = base(horizon, 1, 8);
        s.seed = seed;
        s.workload.streams = vec![stream("a", rate, 100.0)];
        let n = generate_workload(&s).unwrap().len() as f64;
        assert!((n - expected).abs() <= 3.0 * sigma, "seed {seed}: {n} arrivals, expected {expected}");
        total += n;
    }
    let mean = total / 40.0;
    assert!((mean - expected).abs() <= 3.0 * sigma / libm::sqrt(40.0));
}

#[test]
fn exponential_durations_have_the_configured_mean() {
    let mut s = base(1_000_000, 1, 8);
    s.workload.streams = vec![stream("a", 0.05, 600.0)];
    let w = generate_workload(&s).unwrap();
    let n = w.len() as f64;
    let mean = w.iter().map(|a| a.duration.unwrap() as f64).sum::<f64>() / n;
    // Standard error of the mean of an exponential is mean/√n.
    assert!((mean - 600.0).abs() < 4.0 * 600.0 / libm::sqrt(n), "{mean}");
}

fn busy() -> Scenario {
    let mut s = base(20_000, 3, 8);
    s.seed = 11;
    let mut a = stream("a", 0.02, 900.0);
    a.preemptible_fraction = 0.3;
    let mut b = stream("b", 0.02, 400.0);
    b.flavors.insert("large".into(), 0.5);
    s.workload.streams = vec![a, b];
    s.projects[0].private_vcpus = 4;
    s.projects[0].private_memory_mb = 8192;
    s
}

#[test]
fn runs_are_reproducible() {
    let s = busy();
    let (a, b) = (run(&s).unwrap(), run(&s).unwrap());
    assert_eq!(a, b);
    assert!(a.summary.counters.started > 50);
    assert!(a.summary.counters.preempted > 0);
}

#[test]
fn accounting_closure() {
    let s = busy();
    let mut sim = Simulation::from_scenario(&s).unwrap();
    sim.run_to_end().unwrap();
    let summary = sim.summary().unwrap();
    let mut expect: BTreeMap<ProjectId, (u64, u64)> = BTreeMap::new();
    for r in sim.requests().values() {
        let Some(start) = r.started_at else { continue };
        let end = r.ended_at.unwrap_or(s.horizon);
        let e = expect.entry(r.project.clone()).or_default();
        e.0 += r.demand().vcpus * (end - start);
        e.1 += r.demand().memory_mb * (end - start);
    }
    for (p, c) in &summary.projects {
        let (v, m) = expect.get(p).copied().unwrap_or_default();
        assert_eq!((c.charged.vcpu_s(), c.charged.mem_mb_s()), (v, m), "{p}");
    }
    sim.check().unwrap();
}

#[test]
fn frames_respect_bounds() {
    let out = run(&busy()).unwrap();
    let mut prev: Option<&MetricsFrame> = None;
    for f in &out.frames {
        for u in [f.util_vcpus, f.util_memory, f.shared_pool_util] {
            assert!((0.0..=1.0).contains(&u));
        }
        if let Some(p) = prev {
            assert!(f.time > p.time);
            assert!(f.preemptions >= p.preemptions);
            for (id, pf) in &f.projects {
                let before = &p.projects[id].charged;
                assert!(pf.charged.vcpu_s() >= before.vcpu_s());
                assert!(pf.charged.shared_vcpu_s >= before.shared_vcpu_s);
            }
        }
        prev = Some(f);
    }
}

/// Hand trace: one 4-vcpu host, cpu-only usage, A (share 3) and B (share 1)
/// submit alternately at t=0, every instance runs 100 s.
///
/// t=0:   equal priorities, FIFO: a0 and b1 start, host full.
/// t=60:  recalc, A and B both hold 120 vcpu-s; A's normalized share is
///        larger so its requests move ahead of B's.
/// t=100: a0, b1 end; a2 and a4 (both A) start.
/// t=200: they end; only B's b3 and b5 remain and start.
#[test]
fn hand_trace_two_projects() {
    let mut s = base(1000, 1, 4);
    s.usage.mem_weight = 0.0;
    s.workload.arrivals = (0..6)
        .map(|i| arrival(0, if i % 2 == 0 { "a" } else { "b" }, "cpu2", Some(100)))
        .collect();
    let mut sim = Simulation::from_scenario(&s).unwrap();
    sim.enable_trace();
    sim.run_until(60).unwrap();
    let queue: Vec<u64> = sim.queue_snapshot().iter().map(|q| q.request_id.0).collect();
    assert_eq!(queue, [2, 4, 3, 5]);
    sim.run_to_end().unwrap();
    assert_eq!(starts(&sim), [(0, 0), (0, 1), (100, 2), (100, 4), (200, 3), (200, 5)]);
}

#[test]
fn scheduling_in_the_past_is_rejected() {
    let mut sim = Simulation::from_scenario(&base(1000, 1, 8)).unwrap();
    sim.run_until(100).unwrap();
    assert!(sim.schedule(99, EventKind::DispatchTick).is_err());
    assert!(sim.schedule(100, EventKind::DispatchTick).is_ok());
}

#[test]
fn invalid_scenarios_name_the_field() {
    let mut s = base(0, 1, 8);
    let e = s.validate().unwrap_err();
    assert_eq!(e.path, "horizon");
    s.horizon = 10;
    s.projects[1].users[0].share = -1.0;
    assert_eq!(s.validate().unwrap_err().path, "projects[1].users[0].share");
    s.projects[1].users[0].share = 1.0;
    s.workload.arrivals = vec![arrival(0, "nobody", "small", None)];
    assert_eq!(s.validate().unwrap_err().path, "workload.arrivals[0].user");
    s.workload.arrivals.clear();
    s.projects[0].private_vcpus = 9;
    assert_eq!(s.validate().unwrap_err().path, "projects");
    s.projects[0].private_vcpus = 0;
    s.dispatch.recalc_period = 0;
    assert_eq!(s.validate().unwrap_err().path, "dispatch");
}

#[test]
fn scripted_failures_retry_then_fail() {
    let mut s = base(1000, 1, 8);
    s.workload.arrivals = vec![arrival(0, "a", "small", Some(10)), arrival(0, "b", "small", Some(10))];
    s.start_failures = vec![StartFailureSpec { request: 0, attempts: 10 }];
    let mut sim = Simulation::from_scenario(&s).unwrap();
    sim.enable_trace();
    sim.run_to_end().unwrap();
    let retried: Vec<u32> = sim
        .trace()
        .iter()
        .filter_map(|(_, e)| match e {
            TraceEntry::Dispatch(Action::Retried { retries, .. }) => Some(*retries),
            _ => None,
        })
        .collect();
    assert_eq!(retried, [1, 2, 3]);
    assert_eq!(sim.requests()[&RequestId(0)].state, RequestState::Failed);
    assert_eq!(sim.requests()[&RequestId(1)].state, RequestState::Completed);
    assert_eq!(sim.counters().failed, 1);
}

#[test]
fn suspended_scheduler_keeps_the_queue() {
    let mut s = base(1000, 1, 8);
    s.workload.arrivals = vec![arrival(10, "a", "small", Some(10))];
    let mut sim = Simulation::from_scenario(&s).unwrap();
    sim.set_manager(Manager::Scheduler, ManagerStatus::Suspended).unwrap();
    sim.run_until(200).unwrap();
    assert_eq!(sim.queue().len(), 1);
    assert_eq!(sim.managers()[3].status, ManagerStatus::Suspended);
    sim.set_manager(Manager::Scheduler, ManagerStatus::Active).unwrap();
    sim.run_until(200).unwrap();
    assert_eq!(sim.requests()[&RequestId(0)].started_at, Some(200));
}

#[test]
fn quota_commands() {
    let mut sim = Simulation::from_scenario(&base(1000, 2, 8)).unwrap();
    let a = ProjectId::from("A");
    sim.set_private_quota(&a, ResourceVector::new(4, 8192)).unwrap();
    assert_eq!(sim.project_quota(&a).unwrap().private_quota, ResourceVector::new(4, 8192));
    assert!(matches!(
        sim.set_private_quota(&"B".into(), ResourceVector::new(13, 0)),
        Err(Error::QuotaConflict(_))
    ));
    assert!(matches!(sim.project_quota(&"Z".into()), Err(Error::UnknownProject(_))));
    sim.set_manager(Manager::Quota, ManagerStatus::Suspended).unwrap();
    assert!(matches!(sim.set_private_quota(&a, ResourceVector::ZERO), Err(Error::ManagerSuspended(_))));
}

fn director_scenario() -> Scenario {
    let mut s = base(20_000, 1, 8);
    s.nodes = vec![
        NodeSpec { id: 0, vcpus: 8, memory_mb: 16384, state: InitialNodeState::C, tenant: Some("A".into()) },
        NodeSpec { id: 1, vcpus: 4, memory_mb: 8192, state: InitialNodeState::B, tenant: None },
    ];
    s.pledges = [(String::from("A"), 30), (String::from("B"), 20)].into_iter().collect();
    s.workload.batch = vec![BatchStreamSpec {
        rate: 0.05,
        duration: DurationSpec::Exponential { mean: 300.0 },
        start: 0,
        end: None,
        max_pending: Some(50),
    }];
    let mut vms = vec![arrival(0, "a", "small", None), arrival(0, "a", "small", None)];
    vms[1].honors_ttl = true;
    vms.push(arrival(0, "a", "large", None));
    s.workload.arrivals = vms;
    s.director_events = vec![
        DirectorEventSpec { time: 1000, node: 0, target: Partition::Batch, tenant: None, ttl: Some(600) },
        DirectorEventSpec { time: 1000, node: 1, target: Partition::Cloud, tenant: Some("B".into()), ttl: None },
        DirectorEventSpec { time: 5000, node: 1, target: Partition::Batch, tenant: None, ttl: None },
    ];
    s
}

use crate::director::Partition;

#[test]
fn director_drains_nodes_in_the_simulation() {
    let s = director_scenario();
    let mut sim = Simulation::from_scenario(&s).unwrap();
    sim.enable_trace();
    sim.run_until(999).unwrap();
    // Two smalls on the tenant node, the large on the regular host.
    assert_eq!(sim.hosts().get(sim.node_host(NodeId(0)).unwrap()).unwrap().allocations.len(), 2);
    sim.run_until(1000).unwrap();
    assert_eq!(sim.director().node(NodeId(0)).unwrap().state(), NodeState::C2B);
    assert_eq!(sim.counters().ttl_graceful, 1);
    sim.run_until(1599).unwrap();
    assert_eq!(sim.director().node(NodeId(0)).unwrap().state(), NodeState::C2B);
    sim.run_until(1600).unwrap();
    assert_eq!(sim.director().node(NodeId(0)).unwrap().state(), NodeState::B);
    assert_eq!(sim.counters().ttl_destroyed, 1);
    sim.run_to_end().unwrap();
    sim.check().unwrap();

    let mut seen_cloud = false;
    let mut dynp: BTreeMap<NodeId, u8> = [(NodeId(0), 2), (NodeId(1), 1)].into_iter().collect();
    for (_, e) in sim.trace() {
        match e {
            TraceEntry::Node { node, state } => {
                dynp.insert(*node, state.dynp());
                seen_cloud |= *node == NodeId(1) && *state == NodeState::C;
            }
            TraceEntry::BatchAssigned { node, dynp: d, .. } => {
                assert_eq!(*d, 1);
                assert_eq!(dynp[node], 1);
            }
            TraceEntry::Dispatch(_) => {}
        }
    }
    assert!(seen_cloud);
    assert!(sim.counters().batch_completed > 100);
    // Node 1 went to the cloud for B and came back; node 0 returned A's 8.
    let shares = sim.director().pledges.shares();
    assert!((shares[&ProjectId::from("A")] - 0.6).abs() < 1e-12);
}

#[test]
fn director_commands_validate_nodes() {
    let mut sim = Simulation::from_scenario(&director_scenario()).unwrap();
    let req = |node| TransitionRequest { node: NodeId(node), target: Partition::Batch, tenant: None, ttl: None };
    assert!(matches!(sim.request_node_transition(req(9)), Err(Error::UnknownNode(_))));
    sim.run_until(1000).unwrap();
    assert!(matches!(sim.request_node_transition(req(0)), Err(Error::NodeNotStable { .. })));
    sim.set_manager(Manager::Director, ManagerStatus::Suspended).unwrap();
    assert!(matches!(sim.request_node_transition(req(1)), Err(Error::ManagerSuspended(_))));
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

    /// Random seeds and load: reproducible, closed accounts, no normal
    /// instance ever preempted, hosts never overcommitted.
    #[test]
    fn random_runs_hold_invariants(seed in 0u64..1_000_000, rate in 0.005f64..0.05, spot in 0.0f64..0.8) {
        let mut s = base(6_000, 2, 8);
        s.seed = seed;
        let mut a = stream("a", rate, 600.0);
        a.preemptible_fraction = spot;
        let mut b = stream("b", rate, 300.0);
        b.flavors.insert("large".into(), 0.3);
        s.workload.streams = vec![a, b];
        let first = run(&s).unwrap();
        proptest::prop_assert_eq!(&first, &run(&s).unwrap());

        let mut sim = Simulation::from_scenario(&s).unwrap();
        while sim.step().unwrap() {
            sim.check().unwrap();
        }
        let summary = sim.summary().unwrap();
        let mut expect: BTreeMap<ProjectId, u64> = BTreeMap::new();
        for r in sim.requests().values() {
            if r.state == RequestState::Preempted {
                proptest::prop_assert_eq!(r.class, RequestClass::Preemptible);
            }
            if let Some(start) = r.started_at {
                *expect.entry(r.project.clone()).or_default() += r.demand().vcpus * (r.ended_at.unwrap_or(s.horizon) - start);
            }
        }
        for (p, c) in &summary.projects {
            proptest::prop_assert_eq!(c.charged.vcpu_s(), expect.get(p).copied().unwrap_or_default());
        }
    }
}
