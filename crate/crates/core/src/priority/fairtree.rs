//! FairTree ranking: siblings are sorted by level fairshare
//! (normalized share / normalized usage among siblings), recursively, and
//! users get a factor from their position in the resulting depth-first order.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::model::{SimTime, UserId};
use crate::usage::UsageLedger;

use super::ShareTree;

#[derive(Debug, Clone, PartialEq)]
pub struct FairTreeRanking {
    /// Users, highest priority first.
    pub order: Vec<UserId>,
    /// `(N − i)/N` for the user at position `i`.
    pub factors: BTreeMap<UserId, f64>,
}

/// Sorts `(id, share, usage)` siblings by level fairshare, descending;
/// siblings with zero normalized usage rank as infinite. Ties go to the
/// lower id.
fn rank_level<K: Ord>(siblings: &mut [(&K, f64, f64)]) {
    let share_total: f64 = siblings.iter().map(|s| s.1).sum();
    let usage_total: f64 = siblings.iter().map(|s| s.2).sum();
    let level = |share: f64, usage: f64| {
        let u = if usage_total > 0.0 { usage / usage_total } else { 0.0 };
        if u <= 0.0 {
            f64::INFINITY
        } else {
            (share / share_total) / u
        }
    };
    siblings.sort_by(|a, b| {
        let (la, lb) = (level(a.1, a.2), level(b.1, b.2));
        lb.partial_cmp(&la).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0))
    });
}

/// Level fairshare of each project among its siblings.
pub fn project_level_fairshare(tree: &ShareTree, ledger: &UsageLedger, now: SimTime) -> BTreeMap<crate::model::ProjectId, f64> {
    let usage: Vec<_> = tree
        .projects()
        .map(|(id, p)| (id, p.share, p.users.keys().map(|u| ledger.effective_usage(u, now)).sum::<f64>()))
        .collect();
    let share_total: f64 = usage.iter().map(|s| s.1).sum();
    let usage_total: f64 = usage.iter().map(|s| s.2).sum();
    usage
        .into_iter()
        .map(|(id, share, u)| {
            let un = if usage_total > 0.0 { u / usage_total } else { 0.0 };
            let lf = if un <= 0.0 { f64::INFINITY } else { (share / share_total) / un };
            (id.clone(), lf)
        })
        .collect()
}

pub fn fairtree_order(tree: &ShareTree, ledger: &UsageLedger, now: SimTime) -> FairTreeRanking {
    let mut projects: Vec<_> = tree
        .projects()
        .map(|(id, p)| {
            let usage: f64 = p.users.keys().map(|u| ledger.effective_usage(u, now)).sum();
            (id, p.share, usage)
        })
        .collect();
    rank_level(&mut projects);

    let mut order = Vec::new();
    for (project, _, _) in projects {
        let node = tree.project(project).expect("ranked project comes from the tree");
        let mut users: Vec<_> =
            node.users.iter().map(|(u, s)| (u, *s, ledger.effective_usage(u, now))).collect();
        rank_level(&mut users);
        order.extend(users.into_iter().map(|(u, _, _)| u.clone()));
    }

    let n = order.len() as f64;
    let factors = order
        .iter()
        .enumerate()
        .map(|(i, u)| (u.clone(), (n - i as f64) / n))
        .collect();
    FairTreeRanking { order, factors }
}
