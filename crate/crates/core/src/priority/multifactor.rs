use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::Result;
use crate::model::{SimTime, UserId};
use crate::usage::UsageLedger;

use super::ShareTree;

/// `2^(−U/S)` with `U` the user's usage normalized over all users and `S`
/// its composite normalized share.
pub fn fairshare_factor(tree: &ShareTree, ledger: &UsageLedger, user: &UserId, now: SimTime) -> Result<f64> {
    let share = tree.norm_share(user)?;
    let usage = ledger.normalized_usage(user, tree.users(), now);
    Ok(factor_from(usage, share))
}

pub(crate) fn factor_from(usage: f64, share: f64) -> f64 {
    if usage <= 0.0 {
        1.0
    } else if share <= 0.0 {
        0.0
    } else {
        libm::exp2(-usage / share)
    }
}

/// Fair-share factor of every user, computing the usage total once.
pub fn fairshare_factors(tree: &ShareTree, ledger: &UsageLedger, now: SimTime) -> Result<BTreeMap<UserId, f64>> {
    let usages: Vec<(&UserId, f64)> = tree.users().map(|u| (u, ledger.effective_usage(u, now))).collect();
    let total: f64 = usages.iter().map(|(_, x)| x).sum();
    usages
        .into_iter()
        .map(|(u, x)| {
            let normalized = if total > 0.0 { x / total } else { 0.0 };
            Ok((u.clone(), factor_from(normalized, tree.norm_share(u)?)))
        })
        .collect()
}
