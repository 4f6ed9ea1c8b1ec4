use alloc::collections::BTreeMap;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Project, ProjectId, QuotaKind};
use crate::resources::ResourceVector;

/// `total − Σ private_quotas`; oversubscribed private quotas are a
/// configuration error.
pub fn shared_pool_size(total: ResourceVector, private_quotas: &[ResourceVector]) -> Result<ResourceVector> {
    let private: ResourceVector = private_quotas.iter().sum();
    total
        .checked_sub(&private)
        .map_err(|_| Error::QuotaOversubscribed { total, private })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Private,
    Shared,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectQuota {
    pub private_quota: ResourceVector,
    pub shared_eligible: bool,
    pub private_allocated: ResourceVector,
    pub shared_allocated: ResourceVector,
    pub dedicated_allocated: ResourceVector,
}

/// Private and shared quota bookkeeping for every project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaState {
    projects: BTreeMap<ProjectId, ProjectQuota>,
    total_capacity: ResourceVector,
    shared_pool: ResourceVector,
}

impl QuotaState {
    pub fn new<'a>(total_capacity: ResourceVector, projects: impl IntoIterator<Item = &'a Project>) -> Result<Self> {
        let projects: BTreeMap<ProjectId, ProjectQuota> = projects
            .into_iter()
            .map(|p| {
                (
                    p.id.clone(),
                    ProjectQuota {
                        private_quota: p.private_quota,
                        shared_eligible: p.shared_eligible,
                        private_allocated: ResourceVector::ZERO,
                        shared_allocated: ResourceVector::ZERO,
                        dedicated_allocated: ResourceVector::ZERO,
                    },
                )
            })
            .collect();
        let privates: alloc::vec::Vec<_> = projects.values().map(|q| q.private_quota).collect();
        let shared_pool = shared_pool_size(total_capacity, &privates)?;
        Ok(QuotaState { projects, total_capacity, shared_pool })
    }

    pub fn total_capacity(&self) -> ResourceVector {
        self.total_capacity
    }

    pub fn shared_pool(&self) -> ResourceVector {
        self.shared_pool
    }

    pub fn shared_allocated(&self) -> ResourceVector {
        self.projects.values().map(|q| q.shared_allocated).sum()
    }

    pub fn project(&self, id: &ProjectId) -> Result<&ProjectQuota> {
        self.projects.get(id).ok_or_else(|| Error::UnknownProject(id.clone()))
    }

    pub fn projects(&self) -> impl Iterator<Item = (&ProjectId, &ProjectQuota)> + '_ {
        self.projects.iter()
    }

    /// Private first, then the shared pool for eligible projects. Does not
    /// mutate.
    pub fn admit(&self, project: &ProjectId, demand: &ResourceVector) -> Result<Admission> {
        let q = self.project(project)?;
        let private_free = q.private_quota.saturating_sub(&q.private_allocated);
        if demand.fits_in(&private_free) {
            return Ok(Admission::Private);
        }
        let shared_free = self.shared_pool.saturating_sub(&self.shared_allocated());
        if q.shared_eligible && demand.fits_in(&shared_free) {
            return Ok(Admission::Shared);
        }
        Ok(Admission::Deny)
    }

    pub fn charge(&mut self, project: &ProjectId, kind: QuotaKind, amount: &ResourceVector) -> Result<()> {
        let shared_free = self.shared_pool.saturating_sub(&self.shared_allocated());
        let q = self
            .projects
            .get_mut(project)
            .ok_or_else(|| Error::UnknownProject(project.clone()))?;
        match kind {
            QuotaKind::Private => {
                let next = q.private_allocated + *amount;
                if !next.fits_in(&q.private_quota) {
                    return Err(Error::Invariant(format!("private quota of `{project}` exceeded")));
                }
                q.private_allocated = next;
            }
            QuotaKind::Shared => {
                if !q.shared_eligible || !amount.fits_in(&shared_free) {
                    return Err(Error::Invariant(format!("shared pool charge for `{project}` refused")));
                }
                q.shared_allocated = q.shared_allocated + *amount;
            }
            QuotaKind::Dedicated => q.dedicated_allocated = q.dedicated_allocated + *amount,
        }
        Ok(())
    }

    pub fn credit(&mut self, project: &ProjectId, kind: QuotaKind, amount: &ResourceVector) -> Result<()> {
        let q = self
            .projects
            .get_mut(project)
            .ok_or_else(|| Error::UnknownProject(project.clone()))?;
        let slot = match kind {
            QuotaKind::Private => &mut q.private_allocated,
            QuotaKind::Shared => &mut q.shared_allocated,
            QuotaKind::Dedicated => &mut q.dedicated_allocated,
        };
        *slot = slot.checked_sub(amount)?;
        Ok(())
    }

    /// Replaces a project's private quota. Rejected without any change if
    /// private quotas would exceed the total, the project already holds more
    /// than the new quota, or the shrunken shared pool would be over-allocated.
    pub fn set_private_quota(&mut self, project: &ProjectId, quota: ResourceVector) -> Result<()> {
        let current = self.project(project)?;
        if !current.private_allocated.fits_in(&quota) {
            return Err(Error::QuotaConflict(format!(
                "`{project}` already holds {} privately",
                current.private_allocated
            )));
        }
        let privates: alloc::vec::Vec<ResourceVector> = self
            .projects
            .iter()
            .map(|(id, q)| if id == project { quota } else { q.private_quota })
            .collect();
        let pool = shared_pool_size(self.total_capacity, &privates)
            .map_err(|e| Error::QuotaConflict(format!("{e}")))?;
        if !self.shared_allocated().fits_in(&pool) {
            return Err(Error::QuotaConflict(format!(
                "shared pool would shrink to {pool} below its allocation {}",
                self.shared_allocated()
            )));
        }
        self.projects.get_mut(project).expect("checked above").private_quota = quota;
        self.shared_pool = pool;
        Ok(())
    }

    pub fn set_shared_eligible(&mut self, project: &ProjectId, eligible: bool) -> Result<()> {
        self.projects
            .get_mut(project)
            .ok_or_else(|| Error::UnknownProject(project.clone()))?
            .shared_eligible = eligible;
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        for (id, q) in &self.projects {
            if !q.private_allocated.fits_in(&q.private_quota) {
                return Err(Error::Invariant(format!("`{id}` exceeds its private quota")));
            }
        }
        if !self.shared_allocated().fits_in(&self.shared_pool) {
            return Err(Error::Invariant("shared pool over-allocated".into()));
        }
        let privates: alloc::vec::Vec<_> = self.projects.values().map(|q| q.private_quota).collect();
        if shared_pool_size(self.total_capacity, &privates)? != self.shared_pool {
            return Err(Error::Invariant("shared pool size drifted".into()));
        }
        Ok(())
    }
}
