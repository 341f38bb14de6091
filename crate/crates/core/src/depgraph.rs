//! Release-level dependency graph and corpus ingestion.
//!
//! Releases are nodes keyed by `(artifact_id, version)`. Dependency edges
//! point from the dependent release to the release it depends on. After
//! ingestion the graph is validated to be acyclic at release granularity and
//! every release is linked to its successor version ([`DependencyGraph::compute_next_edges`]).
//!
//! Input formats:
//!
//! * releases CSV: `artifact_id,version,released_at` (ISO-8601 date)
//! * dependencies CSV: `from_artifact,from_version,to_artifact,to_version`
//! * advisories JSON: `[{id, published, affected: [{package, versions?, introduced?, fixed?}]}]`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::versioning::{heuristic_next, semver_next, Version};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("format error at line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("duplicate release {artifact_id}:{version} at line {line}")]
    DuplicateRelease {
        line: u64,
        artifact_id: String,
        version: String,
    },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GraphError {
    fn format(line: u64, message: impl Into<String>) -> Self {
        GraphError::Format {
            line,
            message: message.into(),
        }
    }
}

/// Days since 1970-01-01 (UTC).
pub type Day = i64;

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!(),
};

/// Parses `YYYY-MM-DD`, RFC 3339 timestamps, or naive `YYYY-MM-DDTHH:MM:SS`
/// into a day number. Time of day is discarded.
pub fn parse_day(text: &str) -> Option<Day> {
    let text = text.trim();
    let date = NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(text).ok().map(|d| d.date_naive()))
        .or_else(|| {
            NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
                .ok()
                .map(|d| d.date())
        })?;
    Some((date - EPOCH).num_days())
}

pub fn format_day(day: Day) -> String {
    (EPOCH + chrono::Duration::days(day))
        .format("%Y-%m-%d")
        .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReleaseId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Release {
    pub artifact_id: String,
    pub version: Version,
    pub released_at: Day,
}

impl Release {
    pub fn coordinate(&self) -> String {
        format!("{}@{}", self.artifact_id, self.version)
    }
}

/// How a successor edge was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextRule {
    Semver,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffectedEdge {
    pub cve_id: String,
    pub release: ReleaseId,
    pub level: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub releases: usize,
    pub dep_edges: usize,
    pub dropped_edges: usize,
    pub duplicate_edges: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NextEdgeSummary {
    pub linked: usize,
    pub by_semver: usize,
    pub by_heuristic: usize,
    /// Share of linked releases where the heuristic picks the same successor.
    pub heuristic_agreement: Option<f64>,
}

/// Frozen release graph. Build with [`GraphBuilder`] or [`ingest_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGraph {
    releases: Vec<Release>,
    lookup: HashMap<(String, String), ReleaseId>,
    by_artifact: BTreeMap<String, Vec<ReleaseId>>,
    dep_edges: BTreeSet<(ReleaseId, ReleaseId)>,
    dependencies: Vec<Vec<ReleaseId>>,
    dependents: Vec<Vec<ReleaseId>>,
    next: Vec<Option<(ReleaseId, NextRule)>>,
    affected: Vec<AffectedEdge>,
}

impl DependencyGraph {
    pub fn len(&self) -> usize {
        self.releases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    pub fn release(&self, id: ReleaseId) -> &Release {
        &self.releases[id.0]
    }

    pub fn releases(&self) -> impl Iterator<Item = (ReleaseId, &Release)> {
        self.releases.iter().enumerate().map(|(i, r)| (ReleaseId(i), r))
    }

    pub fn find(&self, artifact_id: &str, version: &str) -> Option<ReleaseId> {
        self.lookup
            .get(&(artifact_id.to_string(), version.trim().to_string()))
            .copied()
    }

    /// Releases of one artifact in ascending version order.
    pub fn artifact_releases(&self, artifact_id: &str) -> &[ReleaseId] {
        self.by_artifact
            .get(artifact_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &str> {
        self.by_artifact.keys().map(String::as_str)
    }

    pub fn dep_edges(&self) -> impl Iterator<Item = (ReleaseId, ReleaseId)> + '_ {
        self.dep_edges.iter().copied()
    }

    pub fn dep_edge_count(&self) -> usize {
        self.dep_edges.len()
    }

    /// Releases that `id` depends on.
    pub fn dependencies(&self, id: ReleaseId) -> &[ReleaseId] {
        &self.dependencies[id.0]
    }

    /// Releases that depend on `id`.
    pub fn dependents(&self, id: ReleaseId) -> &[ReleaseId] {
        &self.dependents[id.0]
    }

    pub fn next_release(&self, id: ReleaseId) -> Option<ReleaseId> {
        self.next[id.0].map(|(n, _)| n)
    }

    pub fn next_rule(&self, id: ReleaseId) -> Option<NextRule> {
        self.next[id.0].map(|(_, r)| r)
    }

    pub fn affected_edges(&self) -> &[AffectedEdge] {
        &self.affected
    }

    /// Latest release day in the graph; the default end of the observation
    /// window for censored samples.
    pub fn max_released_at(&self) -> Option<Day> {
        self.releases.iter().map(|r| r.released_at).max()
    }

    /// Links every release to its successor among the artifact's versions:
    /// the minimum strictly greater version, falling back to the three-step
    /// heuristic when that yields nothing.
    pub fn compute_next_edges(&mut self) -> NextEdgeSummary {
        let mut summary = NextEdgeSummary::default();
        let mut agree = 0usize;
        let mut next = vec![None; self.releases.len()];
        for ids in self.by_artifact.values() {
            let dated: Vec<(&Version, Day)> = ids
                .iter()
                .map(|id| {
                    let r = &self.releases[id.0];
                    (&r.version, r.released_at)
                })
                .collect();
            let position: HashMap<&Version, ReleaseId> =
                ids.iter().map(|id| (&self.releases[id.0].version, *id)).collect();
            for id in ids {
                let current = &self.releases[id.0].version;
                let by_order = semver_next(current, dated.iter().map(|(v, _)| *v));
                let by_rule = heuristic_next(current, &dated).map(|c| c.version);
                let chosen = match (by_order, by_rule) {
                    (Some(v), h) => {
                        if h == Some(v) {
                            agree += 1;
                        }
                        summary.by_semver += 1;
                        Some((v, NextRule::Semver))
                    }
                    (None, Some(v)) => {
                        summary.by_heuristic += 1;
                        Some((v, NextRule::Heuristic))
                    }
                    (None, None) => None,
                };
                if let Some((v, rule)) = chosen {
                    next[id.0] = Some((position[v], rule));
                    summary.linked += 1;
                }
            }
        }
        self.next = next;
        if summary.linked > 0 {
            summary.heuristic_agreement = Some(agree as f64 / summary.linked as f64);
        }
        summary
    }

    /// Records level-0 affected edges for every expanded release of each CVE.
    pub fn attach_cves(&mut self, cves: &[CveRecord]) {
        for cve in cves {
            for &release in &cve.releases {
                let edge = AffectedEdge {
                    cve_id: cve.cve_id.clone(),
                    release,
                    level: 0,
                };
                if !self.affected.contains(&edge) {
                    self.affected.push(edge);
                }
            }
        }
    }

    pub fn write_releases_csv<W: Write>(&self, out: W) -> Result<(), GraphError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["artifact_id", "version", "released_at"])
            .map_err(csv_err)?;
        for r in &self.releases {
            w.serialize(ReleaseRow {
                artifact_id: r.artifact_id.clone(),
                version: r.version.to_string(),
                released_at: format_day(r.released_at),
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_deps_csv<W: Write>(&self, out: W) -> Result<(), GraphError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["from_artifact", "from_version", "to_artifact", "to_version"])
            .map_err(csv_err)?;
        for &(from, to) in &self.dep_edges {
            let (f, t) = (self.release(from), self.release(to));
            w.serialize(DepRow {
                from_artifact: f.artifact_id.clone(),
                from_version: f.version.to_string(),
                to_artifact: t.artifact_id.clone(),
                to_version: t.version.to_string(),
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> GraphError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GraphError::Io(io),
        other => GraphError::format(line, format!("{other:?}")),
    }
}

/// Accumulates releases and edges, then validates into a [`DependencyGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    releases: Vec<Release>,
    lookup: HashMap<(String, String), usize>,
    edges: Vec<(usize, usize)>,
    report: IngestReport,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a release; duplicates of `(artifact_id, version)` are rejected.
    pub fn add_release(&mut self, release: Release, line: u64) -> Result<(), GraphError> {
        let key = (release.artifact_id.clone(), release.version.to_string());
        if self.lookup.contains_key(&key) {
            return Err(GraphError::DuplicateRelease {
                line,
                artifact_id: key.0,
                version: key.1,
            });
        }
        self.lookup.insert(key, self.releases.len());
        self.releases.push(release);
        Ok(())
    }

    /// Adds a dependency edge. Edges with an unknown endpoint are dropped and
    /// reported; returns whether the edge was kept.
    pub fn add_dependency(
        &mut self,
        from: (&str, &str),
        to: (&str, &str),
        line: u64,
    ) -> bool {
        let key = |(a, v): (&str, &str)| (a.trim().to_string(), v.trim().to_string());
        let f = self.lookup.get(&key(from)).copied();
        let t = self.lookup.get(&key(to)).copied();
        match (f, t) {
            (Some(f), Some(t)) => {
                self.edges.push((f, t));
                true
            }
            _ => {
                self.report.dropped_edges += 1;
                let msg = format!(
                    "line {line}: dropped edge {}@{} -> {}@{} (unknown release)",
                    from.0, from.1, to.0, to.1
                );
                warn!("{msg}");
                self.report.diagnostics.push(msg);
                false
            }
        }
    }

    /// Validates acyclicity and freezes the graph. Releases are ordered by
    /// `(artifact_id, version)` so the result does not depend on input order.
    pub fn build(self) -> Result<(DependencyGraph, IngestReport), GraphError> {
        let GraphBuilder {
            releases,
            edges,
            mut report,
            ..
        } = self;
        let mut order: Vec<usize> = (0..releases.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&releases[a], &releases[b]);
            ra.artifact_id
                .cmp(&rb.artifact_id)
                .then_with(|| ra.version.cmp(&rb.version))
        });
        let mut remap = vec![0usize; releases.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut slots: Vec<Option<Release>> = releases.into_iter().map(Some).collect();
        let releases: Vec<Release> = order.iter().map(|&old| slots[old].take().unwrap()).collect();

        let mut dep_edges = BTreeSet::new();
        for (f, t) in edges {
            if !dep_edges.insert((ReleaseId(remap[f]), ReleaseId(remap[t]))) {
                report.duplicate_edges += 1;
            }
        }

        let n = releases.len();
        let mut dependencies = vec![Vec::new(); n];
        let mut dependents = vec![Vec::new(); n];
        for &(f, t) in &dep_edges {
            dependencies[f.0].push(t);
            dependents[t.0].push(f);
        }

        if let Some(cycle) = find_cycle(&dependencies) {
            let path = cycle
                .into_iter()
                .map(|id| releases[id.0].coordinate())
                .collect();
            return Err(GraphError::CycleDetected(path));
        }

        let mut lookup = HashMap::with_capacity(n);
        let mut by_artifact: BTreeMap<String, Vec<ReleaseId>> = BTreeMap::new();
        for (i, r) in releases.iter().enumerate() {
            lookup.insert((r.artifact_id.clone(), r.version.to_string()), ReleaseId(i));
            by_artifact
                .entry(r.artifact_id.clone())
                .or_default()
                .push(ReleaseId(i));
        }

        report.releases = n;
        report.dep_edges = dep_edges.len();
        let graph = DependencyGraph {
            releases,
            lookup,
            by_artifact,
            dep_edges,
            dependencies,
            dependents,
            next: vec![None; n],
            affected: Vec::new(),
        };
        Ok((graph, report))
    }
}

/// Iterative three-colour DFS. Returns the cycle as a closed path
/// (first node repeated at the end).
fn find_cycle(adj: &[Vec<ReleaseId>]) -> Option<Vec<ReleaseId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Colour {
        White,
        Grey,
        Black,
    }
    let mut colour = vec![Colour::White; adj.len()];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for root in 0..adj.len() {
        if colour[root] != Colour::White {
            continue;
        }
        colour[root] = Colour::Grey;
        stack.push((root, 0));
        while let Some(&mut (node, ref mut next_child)) = stack.last_mut() {
            if let Some(&child) = adj[node].get(*next_child) {
                *next_child += 1;
                match colour[child.0] {
                    Colour::White => {
                        colour[child.0] = Colour::Grey;
                        stack.push((child.0, 0));
                    }
                    Colour::Grey => {
                        let start = stack.iter().position(|(n, _)| *n == child.0).unwrap();
                        let mut path: Vec<ReleaseId> =
                            stack[start..].iter().map(|(n, _)| ReleaseId(*n)).collect();
                        path.push(child);
                        return Some(path);
                    }
                    Colour::Black => {}
                }
            } else {
                colour[node] = Colour::Black;
                stack.pop();
            }
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReleaseRow {
    pub artifact_id: String,
    pub version: String,
    pub released_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepRow {
    pub from_artifact: String,
    pub from_version: String,
    pub to_artifact: String,
    pub to_version: String,
}

/// Deserialises CSV rows, pairing each with its 1-based line number.
pub(crate) fn read_rows<T, R>(
    input: R,
) -> Result<impl Iterator<Item = Result<(u64, T), GraphError>>, GraphError>
where
    T: serde::de::DeserializeOwned,
    R: Read,
{
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    Ok(rdr.into_records().map(move |rec| {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rec.deserialize(Some(&headers))
            .map(|row| (line, row))
            .map_err(|e| GraphError::format(line, e.to_string()))
    }))
}

/// Reads the releases and dependency CSVs into a validated graph with
/// successor edges computed.
pub fn ingest_graph<R1: Read, R2: Read>(
    releases: R1,
    deps: R2,
) -> Result<(DependencyGraph, IngestReport), GraphError> {
    let mut builder = GraphBuilder::new();

    for row in read_rows::<ReleaseRow, _>(releases)? {
        let (line, row) = row?;
        let version = Version::parse(&row.version)
            .map_err(|e| GraphError::format(line, e.to_string()))?;
        let released_at = parse_day(&row.released_at).ok_or_else(|| {
            GraphError::format(line, format!("bad date {:?}", row.released_at))
        })?;
        if row.artifact_id.is_empty() {
            return Err(GraphError::format(line, "empty artifact_id"));
        }
        builder.add_release(
            Release {
                artifact_id: row.artifact_id,
                version,
                released_at,
            },
            line,
        )?;
    }

    for row in read_rows::<DepRow, _>(deps)? {
        let (line, row) = row?;
        builder.add_dependency(
            (&row.from_artifact, &row.from_version),
            (&row.to_artifact, &row.to_version),
            line,
        );
    }

    let (mut graph, report) = builder.build()?;
    graph.compute_next_edges();
    Ok((graph, report))
}

pub fn ingest_graph_files(
    releases: &Path,
    deps: &Path,
) -> Result<(DependencyGraph, IngestReport), GraphError> {
    ingest_graph(
        BufReader::new(File::open(releases)?),
        BufReader::new(File::open(deps)?),
    )
}

/// Package reference: either a bare coordinate string or an OSV-style
/// `{"name": ..., "ecosystem": ...}` object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PackageRef {
    Name(String),
    Object {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ecosystem: Option<String>,
    },
}

impl PackageRef {
    pub fn name(&self) -> &str {
        match self {
            PackageRef::Name(n) => n,
            PackageRef::Object { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryAffected {
    pub package: PackageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub versions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub introduced: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<String>,
}

/// Advisory as it appears in the JSON input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub id: String,
    pub published: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
    pub affected: Vec<AdvisoryAffected>,
}

/// Half-open version interval `[introduced, fixed)`; a missing bound is open.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionRange {
    pub introduced: Option<Version>,
    pub fixed: Option<Version>,
}

impl VersionRange {
    pub fn contains(&self, v: &Version) -> bool {
        self.introduced
            .as_ref()
            .is_none_or(|lo| v.cmp_precedence(lo).is_ge())
            && self.fixed.as_ref().is_none_or(|hi| v.cmp_precedence(hi).is_lt())
    }
}

/// Version constraint for one artifact: explicit versions and/or a range.
#[derive(Debug, Clone, PartialEq)]
pub struct AffectedRange {
    pub artifact_id: String,
    pub versions: Vec<Version>,
    pub range: Option<VersionRange>,
}

impl AffectedRange {
    pub fn matches(&self, v: &Version) -> bool {
        self.versions
            .iter()
            .any(|x| x.cmp_precedence(v) == std::cmp::Ordering::Equal)
            || self.range.as_ref().is_some_and(|r| r.contains(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CveRecord {
    pub cve_id: String,
    pub published_at: Day,
    pub affected: Vec<AffectedRange>,
    pub severity: Option<String>,
    /// Graph releases matched by `affected`.
    pub releases: BTreeSet<ReleaseId>,
}

#[derive(Debug, Clone, Default)]
pub struct CveIngest {
    pub records: Vec<CveRecord>,
    /// `cve_id: artifact` pairs naming artifacts absent from the graph.
    pub unknown_artifacts: Vec<String>,
}

fn parse_bound(text: Option<&str>, id: &str, open_zero: bool) -> Result<Option<Version>, GraphError> {
    match text.map(str::trim) {
        None | Some("") => Ok(None),
        Some("0") if open_zero => Ok(None),
        Some(t) => Version::parse(t)
            .map(Some)
            .map_err(|e| GraphError::format(0, format!("{id}: {e}"))),
    }
}

/// Parses advisories and expands their version constraints against the
/// versions each artifact has in `graph`.
pub fn ingest_cves<R: Read>(input: R, graph: &DependencyGraph) -> Result<CveIngest, GraphError> {
    let advisories: Vec<Advisory> = serde_json::from_reader(input)
        .map_err(|e| GraphError::format(e.line() as u64, e.to_string()))?;
    let mut out = CveIngest::default();
    for adv in advisories {
        let published_at = parse_day(&adv.published).ok_or_else(|| {
            GraphError::format(0, format!("{}: bad published date {:?}", adv.id, adv.published))
        })?;
        if adv.affected.is_empty() {
            return Err(GraphError::format(0, format!("{}: empty affected list", adv.id)));
        }
        let mut affected = Vec::with_capacity(adv.affected.len());
        let mut releases = BTreeSet::new();
        for entry in &adv.affected {
            let mut versions = Vec::new();
            for raw in entry.versions.iter().flatten() {
                match Version::parse(raw) {
                    Ok(v) => versions.push(v),
                    Err(e) => warn!("{}: skipping version: {e}", adv.id),
                }
            }
            let range = (entry.introduced.is_some() || entry.fixed.is_some())
                .then(|| -> Result<VersionRange, GraphError> {
                    Ok(VersionRange {
                        introduced: parse_bound(entry.introduced.as_deref(), &adv.id, true)?,
                        fixed: parse_bound(entry.fixed.as_deref(), &adv.id, false)?,
                    })
                })
                .transpose()?;
            if versions.is_empty() && range.is_none() {
                return Err(GraphError::format(
                    0,
                    format!("{}: affected entry needs versions or introduced/fixed", adv.id),
                ));
            }
            let range = AffectedRange {
                artifact_id: entry.package.name().trim().to_string(),
                versions,
                range,
            };
            let known = graph.artifact_releases(&range.artifact_id);
            if known.is_empty() {
                warn!("{}: unknown artifact {}", adv.id, range.artifact_id);
                out.unknown_artifacts
                    .push(format!("{}: {}", adv.id, range.artifact_id));
            }
            releases.extend(
                known
                    .iter()
                    .copied()
                    .filter(|&id| range.matches(&graph.release(id).version)),
            );
            affected.push(range);
        }
        out.records.push(CveRecord {
            cve_id: adv.id,
            published_at,
            affected,
            severity: adv.severity,
            releases,
        });
    }
    Ok(out)
}

pub fn ingest_cves_file(path: &Path, graph: &DependencyGraph) -> Result<CveIngest, GraphError> {
    ingest_cves(BufReader::new(File::open(path)?), graph)
}
