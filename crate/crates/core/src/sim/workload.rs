use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::model::{ProjectId, RequestClass, SimTime, UserId};
use crate::resources::{Flavor, ResourceVector};

use super::scenario::{BatchStreamSpec, DurationSpec, Scenario, StreamSpec};

/// One instance request entering the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub time: SimTime,
    pub user: UserId,
    pub project: ProjectId,
    pub flavor: Flavor,
    pub class: RequestClass,
    pub duration: Option<SimTime>,
    pub honors_ttl: bool,
    pub max_pending: Option<usize>,
}

/// Offset separating batch generator streams from instance streams.
const BATCH_STREAM_BASE: u64 = 1 << 32;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
enum Durations {
    Exponential(Exp<f64>),
    Fixed(SimTime),
    Forever,
}

impl Durations {
    fn new(spec: &DurationSpec) -> Result<Self> {
        Ok(match *spec {
            DurationSpec::Exponential { mean } => Durations::Exponential(
                Exp::new(1.0 / mean).map_err(|_| Error::InvalidConfig(alloc::format!("bad mean duration {mean}")))?,
            ),
            DurationSpec::Fixed { secs } => Durations::Fixed(secs),
            DurationSpec::Forever => Durations::Forever,
        })
    }

    /// Whole seconds, at least one.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<SimTime> {
        match self {
            Durations::Exponential(e) => Some((libm::round(e.sample(rng)) as SimTime).max(1)),
            Durations::Fixed(s) => Some(*s),
            Durations::Forever => None,
        }
    }
}

fn lookup_flavor(scenario: &Scenario, name: &str) -> Result<Flavor> {
    let f = scenario
        .flavors
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown flavor `{name}`")))?;
    Flavor::new(f.name.as_str(), ResourceVector::new(f.vcpus, f.memory_mb))
}

fn lookup_project(scenario: &Scenario, user: &str) -> Result<ProjectId> {
    scenario
        .user_project(user)
        .map(ProjectId::from)
        .ok_or_else(|| Error::UnknownUser(UserId::from(user)))
}

/// Seeded Poisson source of instance requests.
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    user: UserId,
    project: ProjectId,
    exp: Exp<f64>,
    flavors: Vec<(Flavor, f64)>,
    total_weight: f64,
    durations: Durations,
    preemptible_fraction: f64,
    honors_ttl_fraction: f64,
    end: SimTime,
    max_pending: Option<usize>,
    rng: ChaCha8Rng,
    clock: f64,
}

impl ArrivalStream {
    pub fn new(scenario: &Scenario, index: usize, spec: &StreamSpec) -> Result<Self> {
        let flavors = spec
            .flavors
            .iter()
            .map(|(name, w)| Ok((lookup_flavor(scenario, name)?, *w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ArrivalStream {
            user: UserId::from(spec.user.as_str()),
            project: lookup_project(scenario, &spec.user)?,
            exp: Exp::new(spec.rate).map_err(|_| Error::InvalidConfig(alloc::format!("bad rate {}", spec.rate)))?,
            total_weight: flavors.iter().map(|(_, w)| w).sum(),
            flavors,
            durations: Durations::new(&spec.duration)?,
            preemptible_fraction: spec.preemptible_fraction,
            honors_ttl_fraction: spec.honors_ttl_fraction,
            end: spec.end.unwrap_or(scenario.horizon).min(scenario.horizon),
            max_pending: spec.max_pending,
            rng: rng_for(scenario.seed, index as u64),
            clock: spec.start as f64,
        })
    }

    /// Next arrival at or before the stream's end, if any.
    pub fn next_arrival(&mut self) -> Option<Arrival> {
        self.clock += self.exp.sample(&mut self.rng);
        let time = libm::floor(self.clock) as SimTime;
        if time > self.end {
            return None;
        }
        let mut pick = self.rng.random::<f64>() * self.total_weight;
        let mut flavor = &self.flavors[self.flavors.len() - 1].0;
        for (f, w) in &self.flavors {
            if pick < *w {
                flavor = f;
                break;
            }
            pick -= w;
        }
        let class = if self.rng.random::<f64>() < self.preemptible_fraction {
            RequestClass::Preemptible
        } else {
            RequestClass::Normal
        };
        let duration = self.durations.sample(&mut self.rng);
        let honors_ttl = self.rng.random::<f64>() < self.honors_ttl_fraction;
        Some(Arrival {
            time,
            user: self.user.clone(),
            project: self.project.clone(),
            flavor: flavor.clone(),
            class,
            duration,
            honors_ttl,
            max_pending: self.max_pending,
        })
    }
}

impl Iterator for ArrivalStream {
    type Item = Arrival;

    fn next(&mut self) -> Option<Arrival> {
        self.next_arrival()
    }
}

/// Seeded Poisson source of one-vcpu batch jobs: `(arrival, duration)`.
#[derive(Debug, Clone)]
pub struct BatchStream {
    exp: Exp<f64>,
    durations: Durations,
    end: SimTime,
    pub max_pending: Option<usize>,
    rng: ChaCha8Rng,
    clock: f64,
}

impl BatchStream {
    pub fn new(scenario: &Scenario, index: usize, spec: &BatchStreamSpec) -> Result<Self> {
        Ok(BatchStream {
            exp: Exp::new(spec.rate).map_err(|_| Error::InvalidConfig(alloc::format!("bad rate {}", spec.rate)))?,
            durations: Durations::new(&spec.duration)?,
            end: spec.end.unwrap_or(scenario.horizon).min(scenario.horizon),
            max_pending: spec.max_pending,
            rng: rng_for(scenario.seed, BATCH_STREAM_BASE + index as u64),
            clock: spec.start as f64,
        })
    }
}

impl Iterator for BatchStream {
    type Item = (SimTime, SimTime);

    fn next(&mut self) -> Option<(SimTime, SimTime)> {
        self.clock += self.exp.sample(&mut self.rng);
        let time = libm::floor(self.clock) as SimTime;
        if time > self.end {
            return None;
        }
        let duration = self.durations.sample(&mut self.rng).unwrap_or(1);
        Some((time, duration))
    }
}

/// The explicit arrivals of the scenario, in file order.
pub fn fixed_arrivals(scenario: &Scenario) -> Result<Vec<Arrival>> {
    scenario
        .workload
        .arrivals
        .iter()
        .map(|a| {
            Ok(Arrival {
                time: a.time,
                user: UserId::from(a.user.as_str()),
                project: lookup_project(scenario, &a.user)?,
                flavor: lookup_flavor(scenario, &a.flavor)?,
                class: a.class,
                duration: a.duration,
                honors_ttl: a.honors_ttl,
                max_pending: None,
            })
        })
        .collect()
}

/// Every arrival of the scenario up to its horizon, ordered by time. Ties
/// keep explicit arrivals first, then stream order.
pub fn generate_workload(scenario: &Scenario) -> Result<Vec<Arrival>> {
    let mut all = fixed_arrivals(scenario)?;
    for (i, spec) in scenario.workload.streams.iter().enumerate() {
        all.extend(ArrivalStream::new(scenario, i, spec)?);
    }
    all.sort_by_key(|a| a.time);
    Ok(all)
}
