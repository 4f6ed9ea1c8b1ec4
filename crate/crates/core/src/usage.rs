//! Historical usage accounting with exponential decay and a finite window.
//!
//! Effective usage of an entity at `now` is
//! `Σ amount · 2^(−(now − at)/half_life)` over its records with
//! `now − at ≤ window`. Each entity keeps prefix sums of amounts scaled by
//! `2^((at − base)/half_life)`, so a query is a binary search plus one
//! subtraction instead of a scan.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::UsageConfig;
use crate::error::{Error, Result};
use crate::model::{SimTime, UserId};
use crate::resources::ResourceVector;

/// Half-lives after which the scaling base is moved forward.
const REBASE_HALF_LIVES: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub entity: UserId,
    pub amount: f64,
    pub at: SimTime,
}

#[derive(Debug, Clone, Default)]
struct EntityUsage {
    /// (at, amount), non-decreasing in `at`; entries before `start` are expired.
    records: Vec<(SimTime, f64)>,
    start: usize,
    /// `prefix[i]` sums the scaled amounts of `records[..i]`.
    prefix: Vec<f64>,
}

impl EntityUsage {
    fn rebuild(&mut self, base: SimTime, half_life: f64) {
        self.records.drain(..self.start);
        self.start = 0;
        self.prefix.clear();
        self.prefix.push(0.0);
        let mut acc = 0.0;
        for &(at, amount) in &self.records {
            acc += amount * scale(at, base, half_life);
            self.prefix.push(acc);
        }
    }

    fn first_live(&self, now: SimTime, window: SimTime) -> usize {
        let cutoff = now.saturating_sub(window);
        self.start + self.records[self.start..].partition_point(|&(at, _)| at < cutoff)
    }
}

fn scale(at: SimTime, base: SimTime, half_life: f64) -> f64 {
    libm::exp2((at as f64 - base as f64) / half_life)
}

#[derive(Debug, Clone)]
pub struct UsageLedger {
    half_life: f64,
    window: SimTime,
    cpu_weight: f64,
    mem_weight: f64,
    base: SimTime,
    last_at: Option<SimTime>,
    entities: BTreeMap<UserId, EntityUsage>,
}

impl UsageLedger {
    pub fn new(config: &UsageConfig) -> Result<Self> {
        config.validate()?;
        Ok(UsageLedger {
            half_life: config.half_life,
            window: config.window,
            cpu_weight: config.cpu_weight,
            mem_weight: config.mem_weight,
            base: 0,
            last_at: None,
            entities: BTreeMap::new(),
        })
    }

    pub fn half_life(&self) -> f64 {
        self.half_life
    }

    pub fn window(&self) -> SimTime {
        self.window
    }

    /// Weighted amount for holding `consumed` during `seconds`.
    pub fn weigh(&self, consumed: &ResourceVector, seconds: f64) -> f64 {
        (self.cpu_weight * consumed.vcpus as f64 + self.mem_weight * consumed.memory_gb()) * seconds
    }

    pub fn record_usage(
        &mut self,
        user: &UserId,
        consumed: &ResourceVector,
        seconds: f64,
        at: SimTime,
    ) -> Result<f64> {
        if !(seconds >= 0.0) || !seconds.is_finite() {
            return Err(Error::NegativeDuration);
        }
        let amount = self.weigh(consumed, seconds);
        self.record_amount(user, amount, at)?;
        Ok(amount)
    }

    /// Appends a pre-weighted amount. Amounts recorded for the same entity at
    /// the same instant are merged into one record.
    pub fn record_amount(&mut self, user: &UserId, amount: f64, at: SimTime) -> Result<()> {
        if !(amount >= 0.0) || !amount.is_finite() {
            return Err(Error::NegativeDuration);
        }
        if let Some(last) = self.last_at {
            if at < last {
                return Err(Error::UsageOutOfOrder { last, at });
            }
        } else {
            self.base = at;
        }
        self.last_at = Some(at);

        if (at - self.base) as f64 > REBASE_HALF_LIVES * self.half_life {
            self.base = at;
            let (window, half_life) = (self.window, self.half_life);
            for e in self.entities.values_mut() {
                e.start = e.first_live(at, window);
                e.rebuild(at, half_life);
            }
        }

        let (base, half_life, window) = (self.base, self.half_life, self.window);
        let e = self.entities.entry(user.clone()).or_insert_with(|| EntityUsage {
            prefix: alloc::vec![0.0],
            ..EntityUsage::default()
        });
        let scaled = amount * scale(at, base, half_life);
        match e.records.last_mut() {
            Some((last_at, last_amount)) if *last_at == at => {
                *last_amount += amount;
                *e.prefix.last_mut().unwrap() += scaled;
            }
            _ => {
                let acc = e.prefix.last().copied().unwrap_or(0.0) + scaled;
                e.records.push((at, amount));
                e.prefix.push(acc);
            }
        }

        e.start = e.first_live(at, window);
        if e.start > 64 && e.start * 2 > e.records.len() {
            e.rebuild(base, half_life);
        }
        Ok(())
    }

    /// Decayed usage of `entity` within the window ending at `now`.
    pub fn effective_usage(&self, entity: &UserId, now: SimTime) -> f64 {
        let Some(e) = self.entities.get(entity) else {
            return 0.0;
        };
        let k = e.first_live(now, self.window);
        let n = e.records.len();
        if k >= n {
            return 0.0;
        }
        let sum = e.prefix[n] - e.prefix[k];
        (sum * scale(self.base, now, self.half_life)).max(0.0)
    }

    /// Usage of `entity` as a fraction of the total over `peers`; 0 when the
    /// total is 0.
    pub fn normalized_usage<'a, I>(&self, entity: &UserId, peers: I, now: SimTime) -> f64
    where
        I: IntoIterator<Item = &'a UserId>,
    {
        let total: f64 = peers.into_iter().map(|p| self.effective_usage(p, now)).sum();
        if total <= 0.0 {
            0.0
        } else {
            (self.effective_usage(entity, now) / total).clamp(0.0, 1.0)
        }
    }

    /// Live records in timestamp order (ties by entity id).
    pub fn records(&self) -> Vec<UsageRecord> {
        let mut out: Vec<UsageRecord> = self
            .entities
            .iter()
            .flat_map(|(id, e)| {
                e.records[e.start..]
                    .iter()
                    .map(move |&(at, amount)| UsageRecord { entity: id.clone(), amount, at })
            })
            .collect();
        out.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.entity.cmp(&b.entity)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(half_life: f64, window: SimTime, cpu: f64, mem: f64) -> UsageLedger {
        UsageLedger::new(&UsageConfig { half_life, window, cpu_weight: cpu, mem_weight: mem }).unwrap()
    }

    fn u(s: &str) -> UserId {
        UserId::new(s)
    }

    /// Straight scan of the definition.
    fn naive(records: &[(u8, f64, SimTime)], who: u8, now: SimTime, half_life: f64, window: SimTime) -> f64 {
        records
            .iter()
            .filter(|(e, _, at)| *e == who && now - at <= window)
            .map(|(_, amount, at)| amount * 2f64.powf(-((now - at) as f64) / half_life))
            .sum()
    }

    #[test]
    fn record_usage_amounts() {
        let mut l = ledger(86_400.0, 604_800, 1.0, 0.0);
        assert_eq!(l.record_usage(&u("a"), &ResourceVector::new(2, 2048), 100.0, 0).unwrap(), 200.0);
        assert_eq!(l.record_usage(&u("a"), &ResourceVector::ZERO, 5000.0, 1).unwrap(), 0.0);
        let mut l = ledger(86_400.0, 604_800, 1.0, 0.25);
        assert_eq!(l.record_usage(&u("a"), &ResourceVector::new(1, 4096), 10.0, 0).unwrap(), 20.0);
    }

    #[test]
    fn negative_duration_rejected() {
        let mut l = ledger(10.0, 100, 1.0, 0.0);
        assert_eq!(
            l.record_usage(&u("a"), &ResourceVector::new(1, 0), -1.0, 0),
            Err(Error::NegativeDuration)
        );
    }

    #[test]
    fn out_of_order_rejected() {
        let mut l = ledger(10.0, 100, 1.0, 0.0);
        l.record_amount(&u("a"), 1.0, 50).unwrap();
        assert!(l.record_amount(&u("b"), 1.0, 49).is_err());
    }

    #[test]
    fn effective_usage_examples() {
        let h = 3600.0;
        let mut l = ledger(h, 10_000, 1.0, 0.0);
        l.record_amount(&u("a"), 100.0, 500).unwrap();
        assert!((l.effective_usage(&u("a"), 500) - 100.0).abs() < 1e-12);
        assert!((l.effective_usage(&u("a"), 4100) - 50.0).abs() < 1e-12);
        assert_eq!(l.effective_usage(&u("a"), 500 + 10_000 + 1), 0.0);
        assert_eq!(l.effective_usage(&u("nobody"), 500), 0.0);
    }

    #[test]
    fn window_boundary_is_inclusive() {
        let mut l = ledger(100.0, 1000, 1.0, 0.0);
        l.record_amount(&u("a"), 8.0, 0).unwrap();
        assert!((l.effective_usage(&u("a"), 1000) - 8.0 * 2f64.powi(-10)).abs() < 1e-15);
        assert_eq!(l.effective_usage(&u("a"), 1001), 0.0);
    }

    #[test]
    fn normalized_usage_examples() {
        let mut l = ledger(1e9, 1_000_000, 1.0, 0.0);
        let peers = [u("A"), u("B")];
        assert_eq!(l.normalized_usage(&u("A"), &peers, 0), 0.0);
        l.record_amount(&u("A"), 30.0, 0).unwrap();
        l.record_amount(&u("B"), 10.0, 0).unwrap();
        assert!((l.normalized_usage(&u("A"), &peers, 0) - 0.75).abs() < 1e-9);
        let mut single = ledger(1e9, 1_000_000, 1.0, 0.0);
        single.record_amount(&u("C"), 7.0, 0).unwrap();
        assert_eq!(single.normalized_usage(&u("C"), &[u("C")], 0), 1.0);
    }

    #[test]
    fn same_instant_records_merge() {
        let mut l = ledger(100.0, 1000, 1.0, 0.0);
        l.record_amount(&u("a"), 1.0, 5).unwrap();
        l.record_amount(&u("a"), 2.0, 5).unwrap();
        let recs = l.records();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].amount, 3.0);
    }

    #[test]
    fn long_runs_survive_rebase_and_pruning() {
        // 400 half-lives: scaled amounts would overflow without rebasing.
        let mut l = ledger(10.0, 50, 1.0, 0.0);
        let mut raw = Vec::new();
        for t in 0..4000u64 {
            l.record_amount(&u("a"), (t % 7) as f64, t).unwrap();
            raw.push((0u8, (t % 7) as f64, t));
        }
        let got = l.effective_usage(&u("a"), 4000);
        let want = naive(&raw, 0, 4000, 10.0, 50);
        assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
        assert!(l.records().len() <= 200);
    }

    proptest! {
        #[test]
        fn matches_naive_scan(
            steps in prop::collection::vec((0u8..3, 0.0f64..1000.0, 0u64..500), 1..60),
            tail in 0u64..3000,
        ) {
            let (half_life, window) = (700.0, 2000);
            let mut l = ledger(half_life, window, 1.0, 0.0);
            let mut t = 0;
            let mut raw = Vec::new();
            for (who, amount, dt) in steps {
                t += dt;
                l.record_amount(&UserId::new(alloc::format!("e{who}")), amount, t).unwrap();
                raw.push((who, amount, t));
            }
            let now = t + tail;
            for who in 0..3u8 {
                let got = l.effective_usage(&UserId::new(alloc::format!("e{who}")), now);
                let want = naive(&raw, who, now, half_life, window);
                prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{} vs {}", got, want);
            }
        }

        #[test]
        fn decay_is_non_increasing(amounts in prop::collection::vec(0.0f64..100.0, 1..20), later in 0u64..10_000) {
            let mut l = ledger(500.0, 5000, 1.0, 0.0);
            for (i, a) in amounts.iter().enumerate() {
                l.record_amount(&u("a"), *a, i as u64 * 10).unwrap();
            }
            let now = amounts.len() as u64 * 10;
            prop_assert!(l.effective_usage(&u("a"), now + later) <= l.effective_usage(&u("a"), now) + 1e-12);
        }

        #[test]
        fn normalized_sums_to_one_and_is_scale_invariant(
            amounts in prop::collection::vec((0u8..4, 0.0f64..50.0), 1..30),
            factor in 0.5f64..4.0,
        ) {
            let mut a = ledger(1e6, 1_000_000, 1.0, 0.0);
            let mut b = ledger(1e6, 1_000_000, 1.0, 0.0);
            for (i, (who, amt)) in amounts.iter().enumerate() {
                let id = UserId::new(alloc::format!("e{who}"));
                a.record_amount(&id, *amt, i as u64).unwrap();
                b.record_amount(&id, *amt * factor, i as u64).unwrap();
            }
            let now = amounts.len() as u64;
            let peers: Vec<UserId> = (0..4).map(|i| UserId::new(alloc::format!("e{i}"))).collect();
            let sum: f64 = peers.iter().map(|p| a.normalized_usage(p, &peers, now)).sum();
            prop_assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-9);
            for p in &peers {
                let x = a.normalized_usage(p, &peers, now);
                let y = b.normalized_usage(p, &peers, now);
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
