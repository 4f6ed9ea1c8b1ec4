//! Batch/cloud partition director.
//!
//! Every managed node is in exactly one of six states. Stable states `B`
//! (batch worker) and `C` (cloud compute node) accept conversion requests;
//! the `*R` states are validation steps and `B2C`/`C2B` are draining phases.

mod pledge;

pub use pledge::{Direction, Pledge, PledgeTable};

use alloc::collections::{BTreeMap, BTreeSet};
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NodeId, ProjectId, SimTime};
use crate::resources::ResourceVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeState {
    B,
    B2CR,
    B2C,
    C,
    C2BR,
    C2B,
}

impl NodeState {
    pub const ALL: [NodeState; 6] =
        [NodeState::B, NodeState::B2CR, NodeState::B2C, NodeState::C, NodeState::C2BR, NodeState::C2B];

    /// Load index published to the batch system: 1 accepts new batch jobs, 2 does not.
    pub fn dynp(self) -> u8 {
        match self {
            NodeState::B | NodeState::B2CR => 1,
            _ => 2,
        }
    }

    pub fn is_stable(self) -> bool {
        matches!(self, NodeState::B | NodeState::C)
    }

    /// Edge set of the state machine. The draining states loop while they
    /// wait for their work to finish.
    pub fn can_transition_to(self, to: NodeState) -> bool {
        use NodeState::*;
        matches!(
            (self, to),
            (B, B2CR)
                | (B2CR, B)
                | (B2CR, B2C)
                | (B2C, B2C)
                | (B2C, C)
                | (C, C2BR)
                | (C2BR, C)
                | (C2BR, C2B)
                | (C2B, C2B)
                | (C2B, B)
        )
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeState::B => "B",
            NodeState::B2CR => "B2CR",
            NodeState::B2C => "B2C",
            NodeState::C => "C",
            NodeState::C2BR => "C2BR",
            NodeState::C2B => "C2B",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Batch,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    state: NodeState,
    pub capacity: ResourceVector,
    batch_jobs: BTreeSet<u64>,
    pub cloud_tenant: Option<ProjectId>,
    ttl_deadline: Option<SimTime>,
}

impl NodeRecord {
    pub fn batch(id: NodeId, capacity: ResourceVector) -> Self {
        NodeRecord {
            id,
            state: NodeState::B,
            capacity,
            batch_jobs: BTreeSet::new(),
            cloud_tenant: None,
            ttl_deadline: None,
        }
    }

    pub fn cloud(id: NodeId, capacity: ResourceVector, tenant: ProjectId) -> Self {
        NodeRecord { state: NodeState::C, cloud_tenant: Some(tenant), ..NodeRecord::batch(id, capacity) }
    }

    pub fn state(&self) -> NodeState {
        self.state
    }

    pub fn dynp(&self) -> u8 {
        self.state.dynp()
    }

    pub fn ttl_deadline(&self) -> Option<SimTime> {
        self.ttl_deadline
    }

    pub fn batch_jobs(&self) -> &BTreeSet<u64> {
        &self.batch_jobs
    }

    /// Moves along one edge of the state machine.
    pub fn set_state(&mut self, to: NodeState) -> Result<()> {
        if !self.state.can_transition_to(to) {
            return Err(Error::IllegalNodeTransition { node: self.id, from: self.state, to });
        }
        if to == NodeState::C && self.state != NodeState::C && !self.batch_jobs.is_empty() {
            return Err(Error::Invariant(alloc::format!("node {} enters C with batch jobs", self.id)));
        }
        if to != NodeState::C2B {
            self.ttl_deadline = None;
        }
        if to == NodeState::B {
            self.cloud_tenant = None;
        }
        self.state = to;
        Ok(())
    }

    /// The batch scheduler only hands jobs to nodes publishing dynp 1.
    pub fn assign_batch_job(&mut self, job: u64) -> Result<()> {
        if self.dynp() != 1 {
            return Err(Error::Invariant(alloc::format!(
                "batch job {job} assigned to node {} with dynp {}",
                self.id,
                self.dynp()
            )));
        }
        self.batch_jobs.insert(job);
        Ok(())
    }

    pub fn finish_batch_job(&mut self, job: u64) -> bool {
        self.batch_jobs.remove(&job)
    }

    pub fn check(&self) -> Result<()> {
        if self.ttl_deadline.is_some() != (self.state == NodeState::C2B) {
            return Err(Error::Invariant(alloc::format!("node {} ttl deadline outside C2B", self.id)));
        }
        if self.state == NodeState::C && !self.batch_jobs.is_empty() {
            return Err(Error::Invariant(alloc::format!("node {} in C runs batch jobs", self.id)));
        }
        Ok(())
    }
}

/// A conversion request as seen by validation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRequest {
    pub node: NodeId,
    pub target: Partition,
    pub tenant: Option<ProjectId>,
    pub ttl: Option<SimTime>,
}

/// Decides whether a request in `B2CR`/`C2BR` may proceed.
pub trait Validator {
    fn validate(&self, node: &NodeRecord, request: &TransitionRequest, pledges: &PledgeTable) -> bool;
}

/// Target partition differs from the current one and the share rebalance
/// that follows is possible.
#[derive(Debug, Default, Clone, Copy)]
pub struct DefaultValidator;

impl Validator for DefaultValidator {
    fn validate(&self, node: &NodeRecord, request: &TransitionRequest, pledges: &PledgeTable) -> bool {
        match (node.state, request.target) {
            (NodeState::B2CR, Partition::Cloud) => request
                .tenant
                .as_ref()
                .and_then(|t| pledges.get(t))
                .is_some_and(|p| p.entitlement >= node.capacity.vcpus),
            (NodeState::C2BR, Partition::Batch) => node
                .cloud_tenant
                .as_ref()
                .and_then(|t| pledges.get(t))
                .is_some_and(|p| p.cloud_held >= node.capacity.vcpus),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionOutcome {
    /// Validation passed; the node is now draining.
    Draining { state: NodeState, shares: BTreeMap<ProjectId, f64> },
    /// Validation failed; the node is back in its stable state.
    Reverted(NodeState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrainOutcome {
    Waiting,
    /// `B2C` finished: the node now serves its tenant's instances.
    BecameCloud,
    /// `C2B` finished. With `destroy` set, the TTL expired and the caller must
    /// destroy the instances still on the node.
    BecameBatch { destroy: bool },
}

/// All managed nodes plus the pledge table they rebalance.
#[derive(Debug, Clone, PartialEq)]
pub struct Director {
    nodes: BTreeMap<NodeId, NodeRecord>,
    pub pledges: PledgeTable,
    pub default_ttl: SimTime,
}

impl Director {
    pub fn new(nodes: impl IntoIterator<Item = NodeRecord>, pledges: PledgeTable, default_ttl: SimTime) -> Self {
        Director { nodes: nodes.into_iter().map(|n| (n.id, n)).collect(), pledges, default_ttl }
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeRecord> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut NodeRecord> {
        self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> + '_ {
        self.nodes.values()
    }

    /// Stable node enters its validation state, then either starts draining
    /// (rebalancing batch shares by the node's vcpus) or reverts.
    pub fn request_transition(
        &mut self,
        request: &TransitionRequest,
        validator: &dyn Validator,
        now: SimTime,
    ) -> Result<TransitionOutcome> {
        let default_ttl = self.default_ttl;
        let node = self.nodes.get_mut(&request.node).ok_or(Error::UnknownNode(request.node))?;
        let (check, next, direction) = match node.state {
            NodeState::B => (NodeState::B2CR, NodeState::B2C, Direction::ToCloud),
            NodeState::C => (NodeState::C2BR, NodeState::C2B, Direction::ToBatch),
            state => return Err(Error::NodeNotStable { node: node.id, state }),
        };
        let origin = node.state;
        node.set_state(check)?;
        if !validator.validate(node, request, &self.pledges) {
            node.set_state(origin)?;
            return Ok(TransitionOutcome::Reverted(origin));
        }
        let tenant = match direction {
            Direction::ToCloud => request.tenant.clone(),
            Direction::ToBatch => node.cloud_tenant.clone(),
        }
        .ok_or_else(|| Error::InvalidConfig(alloc::format!("node {} conversion without tenant", node.id)))?;
        let shares = match self.pledges.rebalance_shares(node.capacity.vcpus, &tenant, direction) {
            Ok(s) => s,
            Err(e) => {
                node.set_state(origin)?;
                return Err(e);
            }
        };
        node.set_state(next)?;
        match direction {
            Direction::ToCloud => node.cloud_tenant = Some(tenant),
            Direction::ToBatch => node.ttl_deadline = Some(now + request.ttl.unwrap_or(default_ttl)),
        }
        Ok(TransitionOutcome::Draining { state: next, shares })
    }

    /// Advances a draining node. `vms` is the number of instances still on
    /// the node.
    pub fn tick_draining(&mut self, id: NodeId, now: SimTime, vms: usize) -> Result<DrainOutcome> {
        let node = self.node_mut(id)?;
        match node.state {
            NodeState::B2C if node.batch_jobs.is_empty() => {
                node.set_state(NodeState::C)?;
                Ok(DrainOutcome::BecameCloud)
            }
            NodeState::C2B => {
                let expired = node.ttl_deadline.is_some_and(|d| now >= d);
                if vms == 0 || expired {
                    node.set_state(NodeState::B)?;
                    Ok(DrainOutcome::BecameBatch { destroy: vms > 0 })
                } else {
                    Ok(DrainOutcome::Waiting)
                }
            }
            _ => Ok(DrainOutcome::Waiting),
        }
    }

    pub fn check(&self) -> Result<()> {
        for n in self.nodes.values() {
            n.check()?;
        }
        self.pledges.check()
    }
}

#[cfg(test)]
mod tests;
