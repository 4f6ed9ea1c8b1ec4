use alloc::collections::BTreeMap;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProjectId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ToCloud,
    ToBatch,
}

/// One group's agreed capacity, split between what the batch system still
/// grants it and what it holds as cloud nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pledge {
    pub pledge: u64,
    pub entitlement: u64,
    pub cloud_held: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PledgeTable {
    groups: BTreeMap<ProjectId, Pledge>,
}

impl PledgeTable {
    pub fn new(pledges: impl IntoIterator<Item = (ProjectId, u64)>) -> Self {
        PledgeTable {
            groups: pledges
                .into_iter()
                .map(|(g, p)| (g, Pledge { pledge: p, entitlement: p, cloud_held: 0 }))
                .collect(),
        }
    }

    pub fn get(&self, group: &ProjectId) -> Option<&Pledge> {
        self.groups.get(group)
    }

    pub fn groups(&self) -> impl Iterator<Item = (&ProjectId, &Pledge)> + '_ {
        self.groups.iter()
    }

    pub fn batch_capacity(&self) -> u64 {
        self.groups.values().map(|p| p.entitlement).sum()
    }

    pub fn total_pledge(&self) -> u64 {
        self.groups.values().map(|p| p.pledge).sum()
    }

    /// `entitlement / batch_capacity` per group. An empty batch partition
    /// falls back to the original pledge ratios so the shares still sum to one.
    pub fn shares(&self) -> BTreeMap<ProjectId, f64> {
        let capacity = self.batch_capacity();
        let total = self.total_pledge();
        self.groups
            .iter()
            .map(|(g, p)| {
                let s = if capacity > 0 {
                    p.entitlement as f64 / capacity as f64
                } else if total > 0 {
                    p.pledge as f64 / total as f64
                } else {
                    0.0
                };
                (g.clone(), s)
            })
            .collect()
    }

    /// Moves `moved` vcpus of `tenant`'s entitlement between partitions and
    /// returns the new batch shares. Rejected without change if the source
    /// side would go negative.
    pub fn rebalance_shares(
        &mut self,
        moved: u64,
        tenant: &ProjectId,
        direction: Direction,
    ) -> Result<BTreeMap<ProjectId, f64>> {
        let p = self.groups.get_mut(tenant).ok_or_else(|| Error::UnknownGroup(tenant.clone()))?;
        match direction {
            Direction::ToCloud => {
                if p.entitlement < moved {
                    return Err(Error::NegativeEntitlement {
                        group: tenant.clone(),
                        entitlement: p.entitlement,
                        moved,
                    });
                }
                p.entitlement -= moved;
                p.cloud_held += moved;
            }
            Direction::ToBatch => {
                if p.cloud_held < moved {
                    return Err(Error::NegativeEntitlement {
                        group: tenant.clone(),
                        entitlement: p.cloud_held,
                        moved,
                    });
                }
                p.cloud_held -= moved;
                p.entitlement += moved;
            }
        }
        Ok(self.shares())
    }

    pub fn check(&self) -> Result<()> {
        for (g, p) in &self.groups {
            if p.entitlement + p.cloud_held != p.pledge {
                return Err(Error::Invariant(format!("pledge of `{g}` not conserved")));
            }
        }
        Ok(())
    }
}
