use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{ProjectId, QuotaKind, SimTime};
use crate::resources::ResourceVector;

/// Cumulative resource-seconds one project was charged, by quota kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Charged {
    pub private_vcpu_s: u64,
    pub shared_vcpu_s: u64,
    pub dedicated_vcpu_s: u64,
    pub private_mem_mb_s: u64,
    pub shared_mem_mb_s: u64,
    pub dedicated_mem_mb_s: u64,
}

impl Charged {
    pub fn add(&mut self, kind: QuotaKind, size: &ResourceVector, seconds: u64) {
        let (v, m) = match kind {
            QuotaKind::Private => (&mut self.private_vcpu_s, &mut self.private_mem_mb_s),
            QuotaKind::Shared => (&mut self.shared_vcpu_s, &mut self.shared_mem_mb_s),
            QuotaKind::Dedicated => (&mut self.dedicated_vcpu_s, &mut self.dedicated_mem_mb_s),
        };
        *v += size.vcpus * seconds;
        *m += size.memory_mb * seconds;
    }

    pub fn vcpu_s(&self) -> u64 {
        self.private_vcpu_s + self.shared_vcpu_s + self.dedicated_vcpu_s
    }

    pub fn mem_mb_s(&self) -> u64 {
        self.private_mem_mb_s + self.shared_mem_mb_s + self.dedicated_mem_mb_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectFrame {
    pub running: ResourceVector,
    pub charged: Charged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub time: SimTime,
    pub util_vcpus: f64,
    pub util_memory: f64,
    pub shared_pool_util: f64,
    pub queue_len: usize,
    pub mean_wait: f64,
    pub p95_wait: u64,
    pub preemptions: u64,
    /// Sorted by project id.
    pub projects: BTreeMap<ProjectId, ProjectFrame>,
}

pub(crate) fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Wait times of started requests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WaitStats {
    histogram: BTreeMap<SimTime, u64>,
    count: u64,
    sum: u64,
}

impl WaitStats {
    pub fn record(&mut self, wait: SimTime) {
        *self.histogram.entry(wait).or_default() += 1;
        self.count += 1;
        self.sum += wait;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        ratio(self.sum, self.count)
    }

    /// Nearest-rank percentile; 0 when nothing started.
    pub fn percentile(&self, p: f64) -> SimTime {
        if self.count == 0 {
            return 0;
        }
        let rank = (libm::ceil(p / 100.0 * self.count as f64) as u64).max(1);
        let mut seen = 0;
        for (w, n) in &self.histogram {
            seen += n;
            if seen >= rank {
                return *w;
            }
        }
        *self.histogram.keys().next_back().expect("non-empty")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub submitted: u64,
    /// Arrivals turned away by `max_pending` or a suspended queue manager.
    pub dropped: u64,
    pub started: u64,
    pub completed: u64,
    pub failed: u64,
    pub retries: u64,
    pub preempted: u64,
    /// Instances that stopped themselves when their node announced a TTL.
    pub ttl_graceful: u64,
    /// Instances destroyed at a TTL deadline.
    pub ttl_destroyed: u64,
    pub batch_submitted: u64,
    pub batch_dropped: u64,
    pub batch_completed: u64,
    pub transitions_accepted: u64,
    pub transitions_reverted: u64,
    pub transitions_rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSummary {
    /// Configured share over the sum of all project shares.
    pub share_fraction: f64,
    /// Fraction of all charged vcpu-seconds.
    pub usage_fraction: f64,
    /// Fraction of all vcpu-seconds charged to the shared pool.
    pub shared_fraction: f64,
    /// `usage_fraction / share_fraction`.
    pub fairness_ratio: f64,
    pub charged: Charged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub horizon: SimTime,
    pub frames: usize,
    /// ∫ allocated vcpus dt, in vcpu-seconds.
    pub vcpu_seconds: u64,
    /// ∫ capacity dt, in vcpu-seconds.
    pub capacity_vcpu_seconds: u64,
    pub mean_util_vcpus: f64,
    pub mean_util_memory: f64,
    pub mean_wait: f64,
    pub p95_wait: u64,
    pub counters: Counters,
    pub projects: BTreeMap<ProjectId, ProjectSummary>,
    /// Batch share per pledge group at the end of the run.
    pub batch_shares: BTreeMap<ProjectId, f64>,
    pub algorithm: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub frames: Vec<MetricsFrame>,
    pub summary: Summary,
}
