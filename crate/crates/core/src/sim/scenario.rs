//! Scenario description: cluster, projects, workload, director activity and
//! configuration. Field names are the stable file schema.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{
    Config, DirectorConfig, DispatchConfig, MetricsConfig, PreemptConfig, PriorityConfig, QueueConfig, UsageConfig,
};
use crate::director::Partition;
use crate::model::{RequestClass, SimTime};
use crate::resources::ResourceVector;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub horizon: SimTime,
    #[serde(default)]
    pub hosts: Vec<HostSpec>,
    #[serde(default)]
    pub flavors: Vec<FlavorSpec>,
    #[serde(default)]
    pub projects: Vec<ProjectSpec>,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    /// Batch pledge per group, in vcpus.
    #[serde(default)]
    pub pledges: BTreeMap<String, u64>,
    #[serde(default)]
    pub director_events: Vec<DirectorEventSpec>,
    #[serde(default)]
    pub start_failures: Vec<StartFailureSpec>,
    #[serde(default)]
    pub usage: UsageConfig,
    #[serde(default)]
    pub priority: PriorityConfig,
    #[serde(default)]
    pub queue: QueueConfig,
    #[serde(default)]
    pub dispatch: DispatchConfig,
    #[serde(default)]
    pub preempt: PreemptConfig,
    #[serde(default)]
    pub director: DirectorConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    #[serde(default = "one")]
    pub count: u32,
    pub vcpus: u64,
    pub memory_mb: u64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlavorSpec {
    pub name: String,
    pub vcpus: u64,
    pub memory_mb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSpec {
    pub id: String,
    pub share: f64,
    #[serde(default)]
    pub private_vcpus: u64,
    #[serde(default)]
    pub private_memory_mb: u64,
    #[serde(default = "yes")]
    pub shared_eligible: bool,
    #[serde(default)]
    pub users: Vec<UserSpec>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: String,
    #[serde(default = "unit")]
    pub share: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Explicit arrivals, replayed as given.
    #[serde(default)]
    pub arrivals: Vec<ArrivalSpec>,
    /// Seeded Poisson generators.
    #[serde(default)]
    pub streams: Vec<StreamSpec>,
    /// Batch jobs for the worker nodes (one vcpu each).
    #[serde(default)]
    pub batch: Vec<BatchStreamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSpec {
    pub time: SimTime,
    pub user: String,
    pub flavor: String,
    #[serde(default)]
    pub class: RequestClass,
    /// Omitted: runs until preempted or destroyed.
    #[serde(default)]
    pub duration: Option<SimTime>,
    #[serde(default)]
    pub honors_ttl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DurationSpec {
    Exponential { mean: f64 },
    Fixed { secs: SimTime },
    Forever,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub user: String,
    /// Arrivals per second.
    pub rate: f64,
    /// Flavor name → relative weight.
    pub flavors: BTreeMap<String, f64>,
    pub duration: DurationSpec,
    #[serde(default)]
    pub preemptible_fraction: f64,
    #[serde(default)]
    pub honors_ttl_fraction: f64,
    #[serde(default)]
    pub start: SimTime,
    #[serde(default)]
    pub end: Option<SimTime>,
    /// Arrivals finding this many of the project's requests already queued
    /// are dropped.
    #[serde(default)]
    pub max_pending: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchStreamSpec {
    pub rate: f64,
    pub duration: DurationSpec,
    #[serde(default)]
    pub start: SimTime,
    #[serde(default)]
    pub end: Option<SimTime>,
    /// Queued batch jobs beyond this are dropped.
    #[serde(default)]
    pub max_pending: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialNodeState {
    B,
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: u32,
    pub vcpus: u64,
    pub memory_mb: u64,
    pub state: InitialNodeState,
    /// Required for nodes starting in `C`.
    #[serde(default)]
    pub tenant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectorEventSpec {
    pub time: SimTime,
    pub node: u32,
    pub target: Partition,
    #[serde(default)]
    pub tenant: Option<String>,
    #[serde(default)]
    pub ttl: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartFailureSpec {
    /// Request id in arrival order, starting at 0.
    pub request: u64,
    pub attempts: u32,
}

/// A semantic scenario error with the path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl core::error::Error for ValidationError {}

fn fail<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ValidationError> {
    Err(ValidationError { path: path.into(), message: message.into() })
}

fn positive(path: String, v: f64) -> Result<(), ValidationError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        fail(path, format!("must be a positive number, got {v}"))
    }
}

fn fraction(path: String, v: f64) -> Result<(), ValidationError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        fail(path, format!("must lie in [0, 1], got {v}"))
    }
}

fn duration(path: String, d: &DurationSpec) -> Result<(), ValidationError> {
    match d {
        DurationSpec::Exponential { mean } => positive(format!("{path}.mean"), *mean),
        DurationSpec::Fixed { .. } | DurationSpec::Forever => Ok(()),
    }
}

impl Scenario {
    pub fn config(&self) -> Config {
        Config {
            usage: self.usage.clone(),
            priority: self.priority.clone(),
            queue: self.queue.clone(),
            dispatch: self.dispatch.clone(),
            preempt: self.preempt.clone(),
            director: self.director.clone(),
            metrics: self.metrics.clone(),
        }
    }

    /// Capacity of the regular (non-director) hosts.
    pub fn host_capacity(&self) -> ResourceVector {
        self.hosts
            .iter()
            .map(|h| ResourceVector::new(h.vcpus * h.count as u64, h.memory_mb * h.count as u64))
            .sum()
    }

    pub fn user_project(&self, user: &str) -> Option<&str> {
        self.projects
            .iter()
            .find(|p| p.users.iter().any(|u| u.id == user))
            .map(|p| p.id.as_str())
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.horizon == 0 {
            return fail("horizon", "must be > 0");
        }
        for (i, h) in self.hosts.iter().enumerate() {
            if h.count == 0 {
                return fail(format!("hosts[{i}].count"), "must be > 0");
            }
            if h.vcpus == 0 && h.memory_mb == 0 {
                return fail(format!("hosts[{i}]"), "capacity must be positive");
            }
        }

        let mut flavors = BTreeSet::new();
        for (i, f) in self.flavors.iter().enumerate() {
            if !flavors.insert(f.name.as_str()) {
                return fail(format!("flavors[{i}].name"), format!("duplicate flavor `{}`", f.name));
            }
            if f.vcpus == 0 && f.memory_mb == 0 {
                return fail(format!("flavors[{i}]"), "size must have a positive component");
            }
        }

        let mut projects = BTreeSet::new();
        let mut users = BTreeSet::new();
        let mut private = ResourceVector::ZERO;
        for (i, p) in self.projects.iter().enumerate() {
            if !projects.insert(p.id.as_str()) {
                return fail(format!("projects[{i}].id"), format!("duplicate project `{}`", p.id));
            }
            positive(format!("projects[{i}].share"), p.share)?;
            for (j, u) in p.users.iter().enumerate() {
                if !users.insert(u.id.as_str()) {
                    return fail(format!("projects[{i}].users[{j}].id"), format!("duplicate user `{}`", u.id));
                }
                positive(format!("projects[{i}].users[{j}].share"), u.share)?;
            }
            private = private + ResourceVector::new(p.private_vcpus, p.private_memory_mb);
        }
        let total = self.host_capacity();
        if !private.fits_in(&total) {
            return fail("projects", format!("private quotas {private} exceed the host capacity {total}"));
        }

        let user_ok = |path: String, u: &str| {
            if users.contains(u) {
                Ok(())
            } else {
                fail(path, format!("unknown user `{u}`"))
            }
        };
        let flavor_ok = |path: String, f: &str| {
            if flavors.contains(f) {
                Ok(())
            } else {
                fail(path, format!("unknown flavor `{f}`"))
            }
        };
        for (i, a) in self.workload.arrivals.iter().enumerate() {
            user_ok(format!("workload.arrivals[{i}].user"), &a.user)?;
            flavor_ok(format!("workload.arrivals[{i}].flavor"), &a.flavor)?;
        }
        for (i, s) in self.workload.streams.iter().enumerate() {
            let path = format!("workload.streams[{i}]");
            user_ok(format!("{path}.user"), &s.user)?;
            positive(format!("{path}.rate"), s.rate)?;
            if s.flavors.is_empty() {
                return fail(format!("{path}.flavors"), "must name at least one flavor");
            }
            for (name, w) in &s.flavors {
                flavor_ok(format!("{path}.flavors.{name}"), name)?;
                positive(format!("{path}.flavors.{name}"), *w)?;
            }
            duration(format!("{path}.duration"), &s.duration)?;
            fraction(format!("{path}.preemptible_fraction"), s.preemptible_fraction)?;
            fraction(format!("{path}.honors_ttl_fraction"), s.honors_ttl_fraction)?;
            if s.end.is_some_and(|e| e < s.start) {
                return fail(format!("{path}.end"), "must not precede start");
            }
        }
        for (i, b) in self.workload.batch.iter().enumerate() {
            let path = format!("workload.batch[{i}]");
            positive(format!("{path}.rate"), b.rate)?;
            duration(format!("{path}.duration"), &b.duration)?;
            if matches!(b.duration, DurationSpec::Forever) {
                return fail(format!("{path}.duration"), "batch jobs must end");
            }
        }

        for g in self.pledges.keys() {
            if !projects.contains(g.as_str()) {
                return fail(format!("pledges.{g}"), format!("unknown project `{g}`"));
            }
        }
        let mut held: BTreeMap<&str, u64> = BTreeMap::new();
        let mut nodes = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !nodes.insert(n.id) {
                return fail(format!("nodes[{i}].id"), format!("duplicate node {}", n.id));
            }
            if n.vcpus == 0 {
                return fail(format!("nodes[{i}].vcpus"), "must be > 0");
            }
            match (n.state, &n.tenant) {
                (InitialNodeState::C, None) => return fail(format!("nodes[{i}].tenant"), "required in state C"),
                (InitialNodeState::C, Some(t)) => {
                    let Some(pledge) = self.pledges.get(t) else {
                        return fail(format!("nodes[{i}].tenant"), format!("`{t}` has no pledge"));
                    };
                    let h = held.entry(t.as_str()).or_default();
                    *h += n.vcpus;
                    if *h > *pledge {
                        return fail(format!("nodes[{i}]"), format!("cloud nodes of `{t}` exceed its pledge"));
                    }
                }
                (InitialNodeState::B, _) => {}
            }
        }
        for (i, e) in self.director_events.iter().enumerate() {
            if !nodes.contains(&e.node) {
                return fail(format!("director_events[{i}].node"), format!("unknown node {}", e.node));
            }
            if let Some(t) = &e.tenant {
                if !projects.contains(t.as_str()) {
                    return fail(format!("director_events[{i}].tenant"), format!("unknown project `{t}`"));
                }
            }
        }

        let config = self.config();
        let sections: [(&str, crate::Result<()>); 5] = [
            ("usage", config.usage.validate()),
            ("priority", config.priority.validate()),
            ("dispatch", config.dispatch.validate()),
            ("preempt", config.preempt.validate()),
            (
                "metrics.period",
                if config.metrics.period == 0 {
                    Err(crate::Error::InvalidConfig("must be > 0".to_string()))
                } else {
                    Ok(())
                },
            ),
        ];
        for (path, r) in sections {
            if let Err(e) = r {
                return fail(path, format!("{e}"));
            }
        }
        Ok(())
    }
}
