//! Aggregates over a metrics CSV.
//!
//! The output is CSV with columns `metric,project,value`; `project` is empty
//! for cluster-wide rows.

use std::collections::BTreeMap;
use std::io::Write;

use cloudshare_core::sim::MetricsFrame;
use cloudshare_core::ProjectId;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectReport {
    pub vcpu_s: u64,
    pub shared_vcpu_s: u64,
    /// Fraction of all vcpu-seconds.
    pub usage_fraction: f64,
    /// Fraction of all shared-pool vcpu-seconds.
    pub shared_fraction: f64,
    /// Only known when shares were supplied.
    pub share_fraction: Option<f64>,
    pub fairness_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub frames: usize,
    pub duration: u64,
    /// ∫ utilization dt, holding each frame's value until the next frame.
    pub util_vcpus_integral: f64,
    pub util_memory_integral: f64,
    pub shared_pool_integral: f64,
    pub mean_util_vcpus: f64,
    pub mean_util_memory: f64,
    pub mean_queue_len: f64,
    pub mean_wait: f64,
    pub p95_wait: u64,
    pub preemptions: u64,
    pub projects: BTreeMap<ProjectId, ProjectReport>,
}

fn frac(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl Report {
    /// `shares` are raw project shares; they are normalized here.
    pub fn new(projects: &[ProjectId], frames: &[MetricsFrame], shares: Option<&BTreeMap<ProjectId, f64>>) -> Report {
        let mut integral = [0.0f64; 4];
        for w in frames.windows(2) {
            let dt = (w[1].time - w[0].time) as f64;
            let f = &w[0];
            for (acc, v) in integral.iter_mut().zip([f.util_vcpus, f.util_memory, f.shared_pool_util, f.queue_len as f64]) {
                *acc += v * dt;
            }
        }
        let duration = match (frames.first(), frames.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0,
        };
        let last = frames.last();
        let charged = |p: &ProjectId| last.and_then(|f| f.projects.get(p)).map(|pf| pf.charged).unwrap_or_default();
        let total: u64 = projects.iter().map(|p| charged(p).vcpu_s()).sum();
        let shared_total: u64 = projects.iter().map(|p| charged(p).shared_vcpu_s).sum();
        let share_total: f64 = shares.map_or(0.0, |s| projects.iter().filter_map(|p| s.get(p)).sum());
        let projects = projects
            .iter()
            .map(|p| {
                let c = charged(p);
                let usage_fraction = frac(c.vcpu_s() as f64, total as f64);
                let share_fraction = shares.map(|s| frac(s.get(p).copied().unwrap_or(0.0), share_total));
                let r = ProjectReport {
                    vcpu_s: c.vcpu_s(),
                    shared_vcpu_s: c.shared_vcpu_s,
                    usage_fraction,
                    shared_fraction: frac(c.shared_vcpu_s as f64, shared_total as f64),
                    share_fraction,
                    fairness_ratio: share_fraction.map(|s| frac(usage_fraction, s)),
                };
                (p.clone(), r)
            })
            .collect();
        let d = duration as f64;
        Report {
            frames: frames.len(),
            duration,
            util_vcpus_integral: integral[0],
            util_memory_integral: integral[1],
            shared_pool_integral: integral[2],
            mean_util_vcpus: frac(integral[0], d),
            mean_util_memory: frac(integral[1], d),
            mean_queue_len: frac(integral[3], d),
            mean_wait: last.map_or(0.0, |f| f.mean_wait),
            p95_wait: last.map_or(0, |f| f.p95_wait),
            preemptions: last.map_or(0, |f| f.preemptions),
            projects,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "project", "value"])?;
        let mut row = |metric: &str, project: &str, value: String| w.write_record([metric, project, value.as_str()]);
        row("frames", "", self.frames.to_string())?;
        row("duration", "", self.duration.to_string())?;
        row("util_vcpus_integral", "", self.util_vcpus_integral.to_string())?;
        row("util_memory_integral", "", self.util_memory_integral.to_string())?;
        row("shared_pool_integral", "", self.shared_pool_integral.to_string())?;
        row("mean_util_vcpus", "", self.mean_util_vcpus.to_string())?;
        row("mean_util_memory", "", self.mean_util_memory.to_string())?;
        row("mean_queue_len", "", self.mean_queue_len.to_string())?;
        row("mean_wait", "", self.mean_wait.to_string())?;
        row("p95_wait", "", self.p95_wait.to_string())?;
        row("preemptions", "", self.preemptions.to_string())?;
        for (p, r) in &self.projects {
            row("vcpu_s", p.as_str(), r.vcpu_s.to_string())?;
            row("shared_vcpu_s", p.as_str(), r.shared_vcpu_s.to_string())?;
            row("usage_fraction", p.as_str(), r.usage_fraction.to_string())?;
            row("shared_fraction", p.as_str(), r.shared_fraction.to_string())?;
            if let (Some(s), Some(f)) = (r.share_fraction, r.fairness_ratio) {
                row("share_fraction", p.as_str(), s.to_string())?;
                row("fairness_ratio", p.as_str(), f.to_string())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloudshare_core::sim::{Charged, ProjectFrame};
    use cloudshare_core::ResourceVector;

    fn frame(time: u64, util: f64, a: u64, b: u64) -> MetricsFrame {
        let pf = |v| ProjectFrame {
            running: ResourceVector::ZERO,
            charged: Charged { shared_vcpu_s: v, private_vcpu_s: 10, ..Charged::default() },
        };
        MetricsFrame {
            time,
            util_vcpus: util,
            util_memory: util / 2.0,
            shared_pool_util: util,
            queue_len: 4,
            mean_wait: 3.0,
            p95_wait: 9,
            preemptions: time / 60,
            projects: [("A".into(), pf(a)), ("B".into(), pf(b))].into_iter().collect(),
        }
    }

    #[test]
    fn integrals_hold_values_until_the_next_frame() {
        let frames = [frame(0, 0.5, 0, 0), frame(60, 1.0, 290, 90), frame(90, 0.0, 590, 190)];
        let projects = ["A".into(), "B".into()];
        let shares: BTreeMap<ProjectId, f64> = [("A".into(), 3.0), ("B".into(), 1.0)].into_iter().collect();
        let r = Report::new(&projects, &frames, Some(&shares));
        assert_eq!(r.util_vcpus_integral, 0.5 * 60.0 + 30.0);
        assert_eq!(r.util_memory_integral, 30.0);
        assert_eq!(r.mean_util_vcpus, 60.0 / 90.0);
        assert_eq!(r.mean_queue_len, 4.0);
        assert_eq!(r.preemptions, 1);
        let a = &r.projects[&ProjectId::from("A")];
        assert_eq!((a.vcpu_s, a.shared_vcpu_s), (600, 590));
        assert_eq!(a.usage_fraction, 0.75);
        assert_eq!(a.shared_fraction, 590.0 / 780.0);
        assert_eq!((a.share_fraction, a.fairness_ratio), (Some(0.75), Some(1.0)));
    }

    #[test]
    fn empty_input() {
        let r = Report::new(&[], &[], None);
        assert_eq!((r.frames, r.util_vcpus_integral, r.mean_util_vcpus), (0, 0.0, 0.0));
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("util_vcpus_integral,,0\n"));
    }
}
