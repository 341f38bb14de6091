//! CVE propagation through reverse dependencies and lifetime extraction.
//!
//! For each CVE the highest affected version of every directly affected
//! artifact is marked at level 0; its successor release is the fix. A
//! breadth-first walk over reverse dependency edges then assigns every
//! reachable release the shortest distance to a level-0 mark. Per artifact
//! and level only the youngest (highest version) reached release yields a
//! [`LifetimeSample`]; its fix is its own successor release.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depgraph::{read_rows, CveRecord, Day, DependencyGraph, GraphError, ReleaseId};

pub const DEFAULT_MAX_LEVEL: u32 = 10;

/// Which duration of a [`LifetimeSample`] an analysis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationField {
    /// CVE publication to fixing release.
    #[default]
    Cumulative,
    /// Faulty release to fixing release.
    Level,
}

impl std::str::FromStr for DurationField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cumulative" => Ok(Self::Cumulative),
            "level" => Ok(Self::Level),
            other => Err(format!("unknown duration field {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LifetimeSample {
    pub cve_id: String,
    pub artifact_id: String,
    /// Version of the exposed release; empty when read back from CSV.
    pub version: String,
    pub level: u32,
    pub cumulative_days: i64,
    pub level_days: i64,
    pub censored: bool,
    pub fixed_at: Option<Day>,
}

impl LifetimeSample {
    pub fn duration(&self, field: DurationField) -> i64 {
        match field {
            DurationField::Cumulative => self.cumulative_days,
            DurationField::Level => self.level_days,
        }
    }
}

/// A level-0 mark: the youngest affected release of one artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectMark {
    pub artifact_id: String,
    pub release: ReleaseId,
    pub fix: Option<ReleaseId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationOptions {
    pub max_level: u32,
    /// End of the observation window for censored samples. Defaults to the
    /// latest release day in the graph.
    pub observation_end: Option<Day>,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            max_level: DEFAULT_MAX_LEVEL,
            observation_end: None,
        }
    }
}

/// Highest affected release per artifact, with its successor as fix event.
pub fn mark_direct(graph: &DependencyGraph, cve: &CveRecord) -> Vec<DirectMark> {
    let mut youngest: BTreeMap<&str, ReleaseId> = BTreeMap::new();
    for &id in &cve.releases {
        let r = graph.release(id);
        youngest
            .entry(r.artifact_id.as_str())
            .and_modify(|cur| {
                if graph.release(*cur).version < r.version {
                    *cur = id;
                }
            })
            .or_insert(id);
    }
    youngest
        .into_iter()
        .map(|(artifact, release)| DirectMark {
            artifact_id: artifact.to_string(),
            release,
            fix: graph.next_release(release),
        })
        .collect()
}

fn sample_for(
    graph: &DependencyGraph,
    cve: &CveRecord,
    release: ReleaseId,
    level: u32,
    end: Day,
) -> LifetimeSample {
    let r = graph.release(release);
    let (fixed_at, stop, censored) = match graph.next_release(release) {
        Some(fix) => {
            let at = graph.release(fix).released_at;
            (Some(at), at, false)
        }
        None => (None, end, true),
    };
    LifetimeSample {
        cve_id: cve.cve_id.clone(),
        artifact_id: r.artifact_id.clone(),
        version: r.version.to_string(),
        level,
        cumulative_days: stop - cve.published_at,
        level_days: stop - r.released_at,
        censored,
        fixed_at,
    }
}

/// Youngest release per artifact among `reached`.
fn youngest_per_artifact(graph: &DependencyGraph, reached: &[ReleaseId]) -> Vec<ReleaseId> {
    let mut best: BTreeMap<&str, ReleaseId> = BTreeMap::new();
    for &id in reached {
        let r = graph.release(id);
        best.entry(r.artifact_id.as_str())
            .and_modify(|cur| {
                if graph.release(*cur).version < r.version {
                    *cur = id;
                }
            })
            .or_insert(id);
    }
    best.into_values().collect()
}

/// Lifetime samples for one CVE at levels `0..=max_level`.
pub fn propagate(
    graph: &DependencyGraph,
    cve: &CveRecord,
    opts: PropagationOptions,
) -> Vec<LifetimeSample> {
    let end = opts
        .observation_end
        .or_else(|| graph.max_released_at())
        .unwrap_or(cve.published_at);
    let marks = mark_direct(graph, cve);

    let mut samples: Vec<LifetimeSample> = marks
        .iter()
        .map(|m| sample_for(graph, cve, m.release, 0, end))
        .collect();

    let mut visited: HashSet<ReleaseId> = cve.releases.iter().copied().collect();
    let mut frontier: Vec<ReleaseId> = marks.iter().map(|m| m.release).collect();
    for level in 1..=opts.max_level {
        let mut reached = Vec::new();
        for &id in &frontier {
            for &dep in graph.dependents(id) {
                if visited.insert(dep) {
                    reached.push(dep);
                }
            }
        }
        if reached.is_empty() {
            break;
        }
        reached.sort_unstable();
        samples.extend(
            youngest_per_artifact(graph, &reached)
                .into_iter()
                .map(|id| sample_for(graph, cve, id, level, end)),
        );
        frontier = reached;
    }
    sort_samples(&mut samples);
    samples
}

fn sort_samples(samples: &mut [LifetimeSample]) {
    samples.sort_by(|a, b| {
        (&a.cve_id, &a.artifact_id, a.level, &a.version).cmp(&(
            &b.cve_id,
            &b.artifact_id,
            b.level,
            &b.version,
        ))
    });
}

/// Propagates every CVE independently (in parallel) and merges the samples
/// in `(cve_id, artifact_id, level)` order.
pub fn propagate_all(
    graph: &DependencyGraph,
    cves: &[CveRecord],
    opts: PropagationOptions,
) -> Vec<LifetimeSample> {
    let mut all: Vec<LifetimeSample> = cves
        .par_iter()
        .flat_map_iter(|cve| propagate(graph, cve, opts))
        .collect();
    sort_samples(&mut all);
    all
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped_negative_level: usize,
    pub dropped_negative_cumulative: usize,
}

/// Drops samples with a negative single-level or cumulative duration. A
/// sample negative on both counts is attributed to the level reason.
pub fn filter_samples(samples: Vec<LifetimeSample>) -> (Vec<LifetimeSample>, FilterReport) {
    let mut report = FilterReport::default();
    let kept: Vec<LifetimeSample> = samples
        .into_iter()
        .filter(|s| {
            if s.level_days < 0 {
                report.dropped_negative_level += 1;
                false
            } else if s.cumulative_days < 0 {
                report.dropped_negative_cumulative += 1;
                false
            } else {
                true
            }
        })
        .collect();
    report.kept = kept.len();
    (kept, report)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    cve_id: String,
    artifact_id: String,
    level: u32,
    cumulative_days: i64,
    level_days: i64,
    censored: bool,
}

pub fn write_samples_csv<W: Write>(out: W, samples: &[LifetimeSample]) -> Result<(), GraphError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "cve_id",
        "artifact_id",
        "level",
        "cumulative_days",
        "level_days",
        "censored",
    ])
    .map_err(|e| GraphError::Io(e.into()))?;
    for s in samples {
        w.serialize(SampleRow {
            cve_id: s.cve_id.clone(),
            artifact_id: s.artifact_id.clone(),
            level: s.level,
            cumulative_days: s.cumulative_days,
            level_days: s.level_days,
            censored: s.censored,
        })
        .map_err(|e| GraphError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<LifetimeSample>, GraphError> {
    read_rows::<SampleRow, _>(input)?
        .map(|row| {
            let (_, r) = row?;
            Ok(LifetimeSample {
                cve_id: r.cve_id,
                artifact_id: r.artifact_id,
                version: String::new(),
                level: r.level,
                cumulative_days: r.cumulative_days,
                level_days: r.level_days,
                censored: r.censored,
                fixed_at: None,
            })
        })
        .collect()
}
