use alloc::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Project, ProjectId, User, UserId};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectShares {
    pub share: f64,
    pub users: BTreeMap<UserId, f64>,
}

/// Two-level share hierarchy: projects, then users inside each project.
/// User ids are unique across projects.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShareTree {
    projects: BTreeMap<ProjectId, ProjectShares>,
    user_project: BTreeMap<UserId, ProjectId>,
}

fn check_share(share: f64) -> Result<()> {
    if share > 0.0 && share.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidShare(share))
    }
}

impl ShareTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts<'a>(
        projects: impl IntoIterator<Item = &'a Project>,
        users: impl IntoIterator<Item = &'a User>,
    ) -> Result<Self> {
        let mut tree = ShareTree::new();
        for p in projects {
            tree.add_project(p.id.clone(), p.share)?;
        }
        for u in users {
            tree.add_user(&u.project, u.id.clone(), u.share)?;
        }
        Ok(tree)
    }

    pub fn add_project(&mut self, id: ProjectId, share: f64) -> Result<()> {
        check_share(share)?;
        self.projects.insert(id, ProjectShares { share, users: BTreeMap::new() });
        Ok(())
    }

    pub fn add_user(&mut self, project: &ProjectId, user: UserId, share: f64) -> Result<()> {
        check_share(share)?;
        if self.user_project.contains_key(&user) {
            return Err(Error::DuplicateUser(user));
        }
        let p = self
            .projects
            .get_mut(project)
            .ok_or_else(|| Error::UnknownProject(project.clone()))?;
        p.users.insert(user.clone(), share);
        self.user_project.insert(user, project.clone());
        Ok(())
    }

    /// Non-empty, and every project has at least one user.
    pub fn validate(&self) -> Result<()> {
        if self.projects.is_empty() {
            return Err(Error::InvalidConfig("share tree has no projects".into()));
        }
        if let Some((id, _)) = self.projects.iter().find(|(_, p)| p.users.is_empty()) {
            return Err(Error::InvalidConfig(alloc::format!("project `{id}` has no users")));
        }
        Ok(())
    }

    pub fn projects(&self) -> impl Iterator<Item = (&ProjectId, &ProjectShares)> + '_ {
        self.projects.iter()
    }

    pub fn project(&self, id: &ProjectId) -> Option<&ProjectShares> {
        self.projects.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> + '_ {
        self.user_project.keys()
    }

    pub fn project_of(&self, user: &UserId) -> Result<&ProjectId> {
        self.user_project.get(user).ok_or_else(|| Error::UnknownUser(user.clone()))
    }

    /// `(project share / Σ project shares) · (user share / Σ user shares in project)`.
    pub fn norm_share(&self, user: &UserId) -> Result<f64> {
        let project = self.project_of(user)?;
        let p = &self.projects[project];
        let total_projects: f64 = self.projects.values().map(|p| p.share).sum();
        let total_users: f64 = p.users.values().sum();
        Ok((p.share / total_projects) * (p.users[user] / total_users))
    }

    /// Multiplies every project share by `factor`.
    pub fn scale_project_shares(&mut self, factor: f64) -> Result<()> {
        check_share(factor)?;
        for p in self.projects.values_mut() {
            p.share *= factor;
        }
        Ok(())
    }
}
