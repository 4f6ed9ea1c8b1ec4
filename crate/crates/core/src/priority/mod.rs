//! Fair-share priorities for queued requests.
//!
//! Both algorithms reduce to a per-user fair-share factor in `[0, 1]`
//! combined with a linear age factor:
//! `floor(scale · (w_age · age + w_fairshare · factor))`.
//!
//! * MultiFactor: `factor = 2^(−U/S)` over global usage normalization.
//! * FairTree: `factor = (N − i)/N` from the user's rank in the tree order,
//!   which keeps every user of a better-served project behind every user of
//!   a worse-served one.

mod fairtree;
mod multifactor;
mod tree;

pub use fairtree::{fairtree_order, project_level_fairshare, FairTreeRanking};
pub use multifactor::{fairshare_factor, fairshare_factors};
pub use tree::{ProjectShares, ShareTree};

use alloc::collections::BTreeMap;

use crate::config::{AlgorithmKind, PriorityConfig};
use crate::error::{Error, Result};
use crate::model::{Request, RequestId, SimTime, UserId};
use crate::queue::{Journal, PriorityQueue};
use crate::usage::UsageLedger;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityWeights {
    pub w_age: f64,
    pub w_fairshare: f64,
    pub age_max: SimTime,
    pub scale: u32,
}

impl From<&PriorityConfig> for PriorityWeights {
    fn from(c: &PriorityConfig) -> Self {
        PriorityWeights { w_age: c.w_age, w_fairshare: c.w_fairshare, age_max: c.age_max, scale: c.scale }
    }
}

impl Default for PriorityWeights {
    fn default() -> Self {
        (&PriorityConfig::default()).into()
    }
}

impl PriorityWeights {
    pub fn combine(&self, age: f64, fairshare: f64) -> i64 {
        libm::floor(self.scale as f64 * (self.w_age * age + self.w_fairshare * fairshare)) as i64
    }

    pub fn max_priority(&self) -> i64 {
        self.combine(1.0, 1.0)
    }
}

/// `min(1, (now − submit_time)/age_max)`.
pub fn age_factor(submit_time: SimTime, now: SimTime, weights: &PriorityWeights) -> f64 {
    let age = now.saturating_sub(submit_time) as f64;
    (age / weights.age_max as f64).min(1.0)
}

pub fn multifactor_priority(
    request: &Request,
    tree: &ShareTree,
    ledger: &UsageLedger,
    weights: &PriorityWeights,
    now: SimTime,
) -> Result<i64> {
    let fs = fairshare_factor(tree, ledger, &request.user, now)?;
    Ok(weights.combine(age_factor(request.submit_time, now, weights), fs))
}

/// Per-user fair-share factors under one algorithm at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub algorithm: AlgorithmKind,
    pub factors: BTreeMap<UserId, f64>,
}

impl FactorTable {
    pub fn compute(algorithm: AlgorithmKind, tree: &ShareTree, ledger: &UsageLedger, now: SimTime) -> Result<Self> {
        let factors = match algorithm {
            AlgorithmKind::MultiFactor => fairshare_factors(tree, ledger, now)?,
            AlgorithmKind::FairTree => fairtree_order(tree, ledger, now).factors,
        };
        Ok(FactorTable { algorithm, factors })
    }

    pub fn factor(&self, user: &UserId) -> Result<f64> {
        self.factors.get(user).copied().ok_or_else(|| Error::UnknownUser(user.clone()))
    }

    pub fn priority(&self, request: &Request, weights: &PriorityWeights, now: SimTime) -> Result<i64> {
        Ok(weights.combine(age_factor(request.submit_time, now, weights), self.factor(&request.user)?))
    }
}

/// Recomputes the priority of every queued request and reorders the queue.
pub fn recalculate_priorities<J: Journal>(
    queue: &mut PriorityQueue<J>,
    requests: &mut BTreeMap<RequestId, Request>,
    algorithm: AlgorithmKind,
    tree: &ShareTree,
    ledger: &UsageLedger,
    weights: &PriorityWeights,
    now: SimTime,
) -> Result<()> {
    if queue.is_empty() {
        return Ok(());
    }
    let table = FactorTable::compute(algorithm, tree, ledger, now)?;
    let ids: alloc::vec::Vec<RequestId> = queue.iter_ordered().map(|e| e.request_id).collect();
    for id in ids {
        let request = requests.get_mut(&id).ok_or(Error::UnknownRequest(id))?;
        let p = table.priority(request, weights, now)?;
        request.priority = p;
        queue.reprioritize(id, p)?;
    }
    Ok(())
}
