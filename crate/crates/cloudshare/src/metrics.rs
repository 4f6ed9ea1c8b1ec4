//! Metrics CSV and summary JSON.
//!
//! The CSV has one row per frame. The first columns are fixed:
//!
//! ```text
//! time,util_vcpus,util_memory,shared_pool_util,queue_len,mean_wait,p95_wait,preemptions
//! ```
//!
//! followed, for each project in id order, by the [`PROJECT_COLUMNS`] written
//! as `column[project]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use cloudshare_core::sim::{Charged, MetricsFrame, ProjectFrame, SimOutput, Summary};
use cloudshare_core::{ProjectId, ResourceVector};

pub const FIXED_COLUMNS: [&str; 8] =
    ["time", "util_vcpus", "util_memory", "shared_pool_util", "queue_len", "mean_wait", "p95_wait", "preemptions"];

pub const PROJECT_COLUMNS: [&str; 8] = [
    "running_vcpus",
    "running_memory_mb",
    "private_vcpu_s",
    "shared_vcpu_s",
    "dedicated_vcpu_s",
    "private_mem_mb_s",
    "shared_mem_mb_s",
    "dedicated_mem_mb_s",
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("header mismatch: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

pub fn header(projects: &[ProjectId]) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    for p in projects {
        h.extend(PROJECT_COLUMNS.iter().map(|c| format!("{c}[{p}]")));
    }
    h
}

fn project_values(f: &ProjectFrame) -> [u64; 8] {
    let c = &f.charged;
    [
        f.running.vcpus,
        f.running.memory_mb,
        c.private_vcpu_s,
        c.shared_vcpu_s,
        c.dedicated_vcpu_s,
        c.private_mem_mb_s,
        c.shared_mem_mb_s,
        c.dedicated_mem_mb_s,
    ]
}

/// Writes frames as CSV. `projects` fixes the per-project columns; frames
/// missing a project write zeros.
pub fn write_csv<W: Write>(out: W, projects: &[ProjectId], frames: &[MetricsFrame]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(projects))?;
    let idle = ProjectFrame { running: ResourceVector::ZERO, charged: Charged::default() };
    for f in frames {
        let mut row = vec![
            f.time.to_string(),
            f.util_vcpus.to_string(),
            f.util_memory.to_string(),
            f.shared_pool_util.to_string(),
            f.queue_len.to_string(),
            f.mean_wait.to_string(),
            f.p95_wait.to_string(),
            f.preemptions.to_string(),
        ];
        for p in projects {
            row.extend(project_values(f.projects.get(p).unwrap_or(&idle)).iter().map(u64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV written by [`write_csv`]. The header must match exactly.
pub fn read_csv<R: Read>(input: R) -> Result<(Vec<ProjectId>, Vec<MetricsFrame>), CsvError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let head: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if head.len() < FIXED_COLUMNS.len() || head[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(CsvError::Header(format!("expected leading columns {}", FIXED_COLUMNS.join(","))));
    }
    let rest = &head[FIXED_COLUMNS.len()..];
    if !rest.len().is_multiple_of(PROJECT_COLUMNS.len()) {
        return Err(CsvError::Header(format!("{} per-project columns is not a multiple of 8", rest.len())));
    }
    let mut projects = Vec::new();
    for group in rest.chunks(PROJECT_COLUMNS.len()) {
        let project = group[0]
            .strip_prefix(PROJECT_COLUMNS[0])
            .and_then(|s| s.strip_prefix('['))
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| CsvError::Header(format!("unexpected column `{}`", group[0])))?;
        let id = ProjectId::from(project);
        if header(std::slice::from_ref(&id))[FIXED_COLUMNS.len()..] != *group {
            return Err(CsvError::Header(format!("bad column group for project `{project}`")));
        }
        projects.push(id);
    }

    let mut frames = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |j: usize| record.get(j).unwrap_or_default();
        let int = |j: usize| {
            field(j).parse::<u64>().map_err(|e| CsvError::Row { row, message: format!("{}: {e}", head[j]) })
        };
        let float = |j: usize| {
            field(j).parse::<f64>().map_err(|e| CsvError::Row { row, message: format!("{}: {e}", head[j]) })
        };
        let mut by_project = BTreeMap::new();
        for (k, p) in projects.iter().enumerate() {
            let base = FIXED_COLUMNS.len() + k * PROJECT_COLUMNS.len();
            let v: Vec<u64> = (0..PROJECT_COLUMNS.len()).map(|j| int(base + j)).collect::<Result<_, _>>()?;
            let charged = Charged {
                private_vcpu_s: v[2],
                shared_vcpu_s: v[3],
                dedicated_vcpu_s: v[4],
                private_mem_mb_s: v[5],
                shared_mem_mb_s: v[6],
                dedicated_mem_mb_s: v[7],
            };
            by_project.insert(p.clone(), ProjectFrame { running: ResourceVector::new(v[0], v[1]), charged });
        }
        frames.push(MetricsFrame {
            time: int(0)?,
            util_vcpus: float(1)?,
            util_memory: float(2)?,
            shared_pool_util: float(3)?,
            queue_len: int(4)? as usize,
            mean_wait: float(5)?,
            p95_wait: int(6)?,
            preemptions: int(7)?,
            projects: by_project,
        });
    }
    Ok((projects, frames))
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes `metrics.csv` and `summary.json` into `dir`, creating it.
pub fn write_output(dir: &Path, output: &SimOutput) -> Result<(), CsvError> {
    fs::create_dir_all(dir)?;
    let projects: Vec<ProjectId> = output.summary.projects.keys().cloned().collect();
    let file = io::BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    write_csv(file, &projects, &output.frames)?;
    fs::write(dir.join(SUMMARY_FILE), summary_json(&output.summary))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(time: u64, util: f64, charged: u64) -> MetricsFrame {
        let c = Charged { shared_vcpu_s: charged, private_mem_mb_s: 7, ..Charged::default() };
        MetricsFrame {
            time,
            util_vcpus: util,
            util_memory: 0.1,
            shared_pool_util: 1.0 / 3.0,
            queue_len: 2,
            mean_wait: 12.5,
            p95_wait: 30,
            preemptions: 1,
            projects: [(ProjectId::from("p,1"), ProjectFrame { running: ResourceVector::new(2, 4096), charged: c })]
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn round_trip() {
        let frames = vec![frame(0, 0.0, 0), frame(60, 0.123456789, 120)];
        let projects = vec![ProjectId::from("p,1")];
        let mut buf = Vec::new();
        write_csv(&mut buf, &projects, &frames).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "time,util_vcpus,util_memory,shared_pool_util,queue_len,mean_wait,p95_wait,preemptions,\"running_vcpus[p,1]\""
        ));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), (projects, frames));
    }

    #[test]
    fn header_mismatch_is_rejected() {
        for text in [
            "time,util\n",
            "time,util_vcpus,util_memory,shared_pool_util,queue_len,mean_wait,p95_wait,preemptions,x\n",
            "time,util_vcpus,util_memory,shared_pool_util,queue_len,mean_wait,p95_wait,preemptions,\
             running_vcpus[a],running_memory_mb[a],private_vcpu_s[a],shared_vcpu_s[b],dedicated_vcpu_s[a],\
             private_mem_mb_s[a],shared_mem_mb_s[a],dedicated_mem_mb_s[a]\n",
        ] {
            assert!(matches!(read_csv(text.as_bytes()), Err(CsvError::Header(_))), "{text}");
        }
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let text = format!("{}\n0,0,0,0,x,0,0,0\n", FIXED_COLUMNS.join(","));
        let e = read_csv(text.as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("row 1: queue_len"), "{e}");
    }
}
