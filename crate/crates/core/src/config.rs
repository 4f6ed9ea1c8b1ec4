//! Tunables, grouped by the module that reads them. Every section
//! deserializes from the dotted keys `<section>.<key>`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SimTime;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub usage: UsageConfig,
    pub priority: PriorityConfig,
    pub queue: QueueConfig,
    pub dispatch: DispatchConfig,
    pub preempt: PreemptConfig,
    pub director: DirectorConfig,
    pub metrics: MetricsConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.usage.validate()?;
        self.priority.validate()?;
        self.dispatch.validate()?;
        self.preempt.validate()?;
        if self.metrics.period == 0 {
            return Err(Error::InvalidConfig("metrics.period must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsageConfig {
    pub half_life: f64,
    pub window: SimTime,
    pub cpu_weight: f64,
    /// Weight per GB of memory.
    pub mem_weight: f64,
}

impl Default for UsageConfig {
    fn default() -> Self {
        UsageConfig { half_life: 86_400.0, window: 604_800, cpu_weight: 1.0, mem_weight: 0.25 }
    }
}

impl UsageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_life > 0.0) || !self.half_life.is_finite() {
            return Err(Error::InvalidConfig("usage.half_life must be > 0".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("usage.window must be > 0".into()));
        }
        if !(self.cpu_weight >= 0.0) || !(self.mem_weight >= 0.0) {
            return Err(Error::InvalidConfig("usage weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    #[default]
    MultiFactor,
    FairTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorityConfig {
    pub algorithm: AlgorithmKind,
    pub w_age: f64,
    pub w_fairshare: f64,
    pub age_max: SimTime,
    pub scale: u32,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        PriorityConfig {
            algorithm: AlgorithmKind::MultiFactor,
            w_age: 0.3,
            w_fairshare: 0.7,
            age_max: 7 * 86_400,
            scale: 10_000,
        }
    }
}

impl PriorityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_age >= 0.0) || !(self.w_fairshare >= 0.0) || !(self.w_age + self.w_fairshare > 0.0) {
            return Err(Error::InvalidConfig(
                "priority weights must be non-negative with a positive sum".into(),
            ));
        }
        if self.age_max == 0 || self.scale == 0 {
            return Err(Error::InvalidConfig("priority.age_max and priority.scale must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    /// Journal file; the queue is in-memory only when unset.
    pub journal_path: Option<String>,
    /// Compact once the journal holds this many records per live entry; 0 disables.
    pub compaction_factor: u32,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig { journal_path: None, compaction_factor: 10 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weigher {
    /// Spread: most free vcpus first.
    #[default]
    MostFreeVcpus,
    /// Pack: least free vcpus first.
    LeastFreeVcpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatchConfig {
    pub max_retries: u32,
    pub recalc_period: SimTime,
    pub weigher: Weigher,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig { max_retries: 3, recalc_period: 60, weigher: Weigher::MostFreeVcpus }
    }
}

impl DispatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recalc_period == 0 {
            return Err(Error::InvalidConfig("dispatch.recalc_period must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranker {
    FewestVictims,
    SmallestFreedSurplus,
    YoungestFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreemptConfig {
    pub enabled: bool,
    pub rankers: Vec<Ranker>,
    /// Re-submit preempted instances as fresh requests.
    pub requeue: bool,
    /// Filter: reject victim sets larger than this.
    pub max_victims: Option<usize>,
}

impl Default for PreemptConfig {
    fn default() -> Self {
        PreemptConfig {
            enabled: true,
            rankers: vec![Ranker::FewestVictims, Ranker::SmallestFreedSurplus, Ranker::YoungestFirst],
            requeue: false,
            max_victims: None,
        }
    }
}

impl PreemptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rankers.is_empty() {
            return Err(Error::InvalidConfig("preempt.rankers must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectorConfig {
    pub ttl: SimTime,
}

impl Default for DirectorConfig {
    fn default() -> Self {
        DirectorConfig { ttl: 3600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub period: SimTime,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { period: 60 }
    }
}
