use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

fn rv(v: u64) -> ResourceVector {
    ResourceVector::new(v, v * 2048)
}

fn director(state: NodeState) -> Director {
    let node = match state {
        NodeState::C => NodeRecord::cloud(NodeId(0), rv(8), "A".into()),
        _ => NodeRecord::batch(NodeId(0), rv(8)),
    };
    let mut pledges = PledgeTable::new([("A".into(), 60), ("B".into(), 40)]);
    if state == NodeState::C {
        pledges.rebalance_shares(8, &"A".into(), Direction::ToCloud).unwrap();
    }
    Director::new([node], pledges, 3600)
}

fn to(target: Partition) -> TransitionRequest {
    TransitionRequest { node: NodeId(0), target, tenant: Some("A".into()), ttl: None }
}

/// Validator that always says no.
struct Refuse;

impl Validator for Refuse {
    fn validate(&self, _: &NodeRecord, _: &TransitionRequest, _: &PledgeTable) -> bool {
        false
    }
}

#[test]
fn dynp_examples() {
    assert_eq!(NodeState::B.dynp(), 1);
    assert_eq!(NodeState::B2CR.dynp(), 1);
    assert_eq!(NodeState::B2C.dynp(), 2);
    assert_eq!(NodeState::C.dynp(), 2);
    assert_eq!(NodeState::C2BR.dynp(), 2);
    assert_eq!(NodeState::C2B.dynp(), 2);
}

#[test]
fn transition_matrix() {
    use NodeState::*;
    let allowed = [(B, B2CR), (B2CR, B), (B2CR, B2C), (B2C, C), (C, C2BR), (C2BR, C), (C2BR, C2B), (C2B, B)];
    let waiting = [B2C, C2B];
    let mut accepted = 0;
    for from in NodeState::ALL {
        for to in NodeState::ALL {
            let expect = allowed.contains(&(from, to)) || (from == to && waiting.contains(&from));
            assert_eq!(from.can_transition_to(to), expect, "{from} -> {to}");
            accepted += usize::from(expect);
        }
    }
    assert_eq!(accepted, 8 + 2);
}

#[test]
fn batch_to_cloud() {
    let mut d = director(NodeState::B);
    let out = d.request_transition(&to(Partition::Cloud), &DefaultValidator, 0).unwrap();
    let TransitionOutcome::Draining { state, shares } = out else { panic!("{out:?}") };
    assert_eq!(state, NodeState::B2C);
    assert!((shares[&ProjectId::from("A")] - 52.0 / 92.0).abs() < 1e-12);
    assert_eq!(d.node(NodeId(0)).unwrap().cloud_tenant, Some("A".into()));
    assert_eq!(d.tick_draining(NodeId(0), 5, 0).unwrap(), DrainOutcome::BecameCloud);
    assert_eq!(d.node(NodeId(0)).unwrap().state(), NodeState::C);
    d.check().unwrap();
}

#[test]
fn request_in_transitory_state_is_rejected() {
    let mut d = director(NodeState::B);
    d.node_mut(NodeId(0)).unwrap().assign_batch_job(7).unwrap();
    d.request_transition(&to(Partition::Cloud), &DefaultValidator, 0).unwrap();
    assert!(matches!(
        d.request_transition(&to(Partition::Batch), &DefaultValidator, 1),
        Err(Error::NodeNotStable { state: NodeState::B2C, .. })
    ));
    // Still draining its batch job.
    assert_eq!(d.tick_draining(NodeId(0), 1, 0).unwrap(), DrainOutcome::Waiting);
    assert!(d.node_mut(NodeId(0)).unwrap().assign_batch_job(8).is_err());
    assert!(d.node_mut(NodeId(0)).unwrap().finish_batch_job(7));
    assert_eq!(d.tick_draining(NodeId(0), 9, 0).unwrap(), DrainOutcome::BecameCloud);
}

#[test]
fn failed_validation_reverts() {
    let mut d = director(NodeState::C);
    let out = d.request_transition(&to(Partition::Batch), &Refuse, 0).unwrap();
    assert_eq!(out, TransitionOutcome::Reverted(NodeState::C));
    assert_eq!(d.node(NodeId(0)).unwrap().state(), NodeState::C);

    // Same-partition requests fail default validation.
    let out = d.request_transition(&to(Partition::Cloud), &DefaultValidator, 0).unwrap();
    assert_eq!(out, TransitionOutcome::Reverted(NodeState::C));

    // Tenant without enough entitlement.
    let mut d = director(NodeState::B);
    let mut r = to(Partition::Cloud);
    r.tenant = Some("B".into());
    d.pledges.rebalance_shares(35, &"B".into(), Direction::ToCloud).unwrap();
    assert_eq!(d.request_transition(&r, &DefaultValidator, 0).unwrap(), TransitionOutcome::Reverted(NodeState::B));
    assert!(d.request_transition(&TransitionRequest { node: NodeId(9), ..r }, &DefaultValidator, 0).is_err());
}

#[test]
fn ttl_destroys_survivors() {
    let mut d = director(NodeState::C);
    d.request_transition(&to(Partition::Batch), &DefaultValidator, 100).unwrap();
    let node = d.node(NodeId(0)).unwrap();
    assert_eq!(node.state(), NodeState::C2B);
    assert_eq!(node.ttl_deadline(), Some(3700));
    assert_eq!(d.tick_draining(NodeId(0), 3699, 1).unwrap(), DrainOutcome::Waiting);
    assert_eq!(d.tick_draining(NodeId(0), 3700, 1).unwrap(), DrainOutcome::BecameBatch { destroy: true });
    let node = d.node(NodeId(0)).unwrap();
    assert_eq!(node.state(), NodeState::B);
    assert_eq!(node.ttl_deadline(), None);
    assert_eq!(node.cloud_tenant, None);
    d.check().unwrap();
}

#[test]
fn graceful_stop_ends_drain_early() {
    let mut d = director(NodeState::C);
    let mut r = to(Partition::Batch);
    r.ttl = Some(60);
    d.request_transition(&r, &DefaultValidator, 0).unwrap();
    assert_eq!(d.node(NodeId(0)).unwrap().ttl_deadline(), Some(60));
    assert_eq!(d.tick_draining(NodeId(0), 10, 0).unwrap(), DrainOutcome::BecameBatch { destroy: false });
}

#[test]
fn rebalance_examples() {
    let mut t = PledgeTable::new([("A".into(), 60), ("B".into(), 40)]);
    assert_eq!(t.batch_capacity(), 100);
    let s = t.rebalance_shares(20, &"A".into(), Direction::ToCloud).unwrap();
    assert_eq!(s[&ProjectId::from("A")], 0.5);
    assert_eq!(s[&ProjectId::from("B")], 0.5);
    assert_eq!(t.batch_capacity(), 80);

    let before = t.shares();
    assert_eq!(t.rebalance_shares(0, &"B".into(), Direction::ToCloud).unwrap(), before);

    let mut t = PledgeTable::new([("A".into(), 10), ("B".into(), 40)]);
    let snapshot = t.clone();
    assert!(matches!(
        t.rebalance_shares(20, &"A".into(), Direction::ToCloud),
        Err(Error::NegativeEntitlement { .. })
    ));
    assert!(t.rebalance_shares(1, &"A".into(), Direction::ToBatch).is_err());
    assert!(t.rebalance_shares(1, &"Z".into(), Direction::ToBatch).is_err());
    assert_eq!(t, snapshot);
}

#[test]
fn empty_batch_partition_keeps_pledge_ratios() {
    let mut t = PledgeTable::new([("A".into(), 30), ("B".into(), 10)]);
    t.rebalance_shares(30, &"A".into(), Direction::ToCloud).unwrap();
    let s = t.rebalance_shares(10, &"B".into(), Direction::ToCloud).unwrap();
    assert_eq!(s[&ProjectId::from("A")], 0.75);
}

fn state() -> impl Strategy<Value = NodeState> {
    prop::sample::select(NodeState::ALL.to_vec())
}

proptest! {
    #[test]
    fn illegal_edges_leave_node_untouched(path in prop::collection::vec(state(), 1..30)) {
        let mut n = NodeRecord::batch(NodeId(1), rv(4));
        for to in path {
            let from = n.state();
            let ok = n.set_state(to).is_ok();
            prop_assert_eq!(ok, from.can_transition_to(to));
            prop_assert_eq!(n.state(), if ok { to } else { from });
        }
    }

    #[test]
    fn pledges_conserved(
        pledges in prop::collection::vec(0u64..200, 1..6),
        moves in prop::collection::vec((0usize..6, 0u64..80, any::<bool>()), 0..50),
    ) {
        let groups: Vec<ProjectId> = (0..pledges.len()).map(|i| ProjectId::new(alloc::format!("g{i}"))).collect();
        let mut t = PledgeTable::new(groups.iter().cloned().zip(pledges.iter().copied()));
        let total = t.total_pledge();
        for (g, moved, cloud) in moves {
            let g = &groups[g % groups.len()];
            let dir = if cloud { Direction::ToCloud } else { Direction::ToBatch };
            let before = t.clone();
            match t.rebalance_shares(moved, g, dir) {
                Ok(shares) => {
                    let sum: f64 = shares.values().sum();
                    if total > 0 {
                        prop_assert!((sum - 1.0).abs() < 1e-9);
                    }
                    for (h, p) in t.groups() {
                        if h != g {
                            prop_assert_eq!(p, before.get(h).unwrap());
                        }
                    }
                }
                Err(_) => prop_assert_eq!(&t, &before),
            }
            t.check().unwrap();
            let held: u64 = t.groups().map(|(_, p)| p.entitlement + p.cloud_held).sum();
            prop_assert_eq!(held, total);
        }
    }

    /// A node entering C2B at `t` is back in B by `t + ttl`, polling once per
    /// second while its instances leave at random times.
    #[test]
    fn drain_within_ttl(ttl in 1u64..500, start in 0u64..1000, stops in prop::collection::vec(0u64..1000, 0..6)) {
        let mut d = director(NodeState::C);
        let r = TransitionRequest { ttl: Some(ttl), ..to(Partition::Batch) };
        d.request_transition(&r, &DefaultValidator, start).unwrap();
        let mut t = start;
        loop {
            let vms = stops.iter().filter(|s| start + **s > t).count();
            match d.tick_draining(NodeId(0), t, vms).unwrap() {
                DrainOutcome::Waiting => t += 1,
                DrainOutcome::BecameBatch { .. } => break,
                DrainOutcome::BecameCloud => unreachable!(),
            }
        }
        prop_assert!(t <= start + ttl);
        prop_assert_eq!(d.node(NodeId(0)).unwrap().state(), NodeState::B);
    }
}
