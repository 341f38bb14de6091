//! Generative model of resolution time against dependency depth.
//!
//! A vulnerability at depth `d` is resolved after `alpha` independent
//! stages, each exponential with rate `beta(d) = k / (d + c)`, so the total
//! time is `Gamma(alpha, beta(d))` with mean `alpha (d + c) / k`.
//!
//! Randomness comes from ChaCha8 seeded with the user seed. Synthetic corpora
//! give each artifact its own stream, `(level << 32) | index`, so output is
//! identical for a given seed whatever the thread count.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgraph::{
    format_day, ingest_cves, parse_day, Advisory, AdvisoryAffected, CveRecord, Day,
    DependencyGraph, GraphBuilder, GraphError, PackageRef, Release,
};
use crate::versioning::Version;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("rate undefined at depth {depth} with c = {c}")]
    DivisionDegenerate { depth: u32, c: f64 },
    #[error("stage-wise sampling needs an integer alpha, got {0}")]
    NonIntegerShape(f64),
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `alpha`: stage count (shape), `k`: base rate, `c`: depth offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub k: f64,
    pub c: f64,
}

impl Default for ModelParams {
    /// Illustrative values, not estimates.
    fn default() -> Self {
        Self {
            alpha: 2.0,
            k: 0.02,
            c: 1.0,
        }
    }
}

impl ModelParams {
    pub fn new(alpha: f64, k: f64, c: f64) -> Result<Self, ModelError> {
        let p = Self { alpha, k, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str, v: f64| Err(ModelError::InvalidParams(format!("{what} = {v}")));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha", self.alpha);
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad("k", self.k);
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return bad("c", self.c);
        }
        Ok(())
    }

    pub fn has_integer_alpha(&self) -> bool {
        self.alpha.fract() == 0.0
    }

    /// Slope and intercept of the expected-resolution line.
    pub fn expected_line(&self) -> (f64, f64) {
        (self.alpha / self.k, self.alpha * self.c / self.k)
    }
}

/// `k / (depth + c)`.
pub fn resolution_rate(params: &ModelParams, depth: u32) -> Result<f64, ModelError> {
    params.validate()?;
    let denom = f64::from(depth) + params.c;
    if denom == 0.0 {
        return Err(ModelError::DivisionDegenerate { depth, c: params.c });
    }
    Ok(params.k / denom)
}

/// `alpha (depth + c) / k`.
pub fn expected_resolution(params: &ModelParams, depth: u32) -> f64 {
    params.alpha * (f64::from(depth) + params.c) / params.k
}

/// `alpha / beta(depth)^2`.
pub fn resolution_variance(params: &ModelParams, depth: u32) -> f64 {
    let d = f64::from(depth) + params.c;
    params.alpha * d * d / (params.k * params.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Stage-wise for integer alpha, direct otherwise.
    #[default]
    Auto,
    /// Sum of `alpha` exponential stages.
    Stages,
    /// One Gamma draw.
    Direct,
}

/// One resolution time at `depth`, drawn from `rng`.
pub fn sample_resolution_with<R: Rng + ?Sized>(
    params: &ModelParams,
    depth: u32,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<f64, ModelError> {
    let beta = resolution_rate(params, depth)?;
    let stages = match mode {
        SamplingMode::Stages if !params.has_integer_alpha() => {
            return Err(ModelError::NonIntegerShape(params.alpha))
        }
        SamplingMode::Stages => true,
        SamplingMode::Auto => params.has_integer_alpha(),
        SamplingMode::Direct => false,
    };
    if stages {
        let exp = Exp::new(beta).map_err(|e| ModelError::InvalidParams(e.to_string()))?;
        Ok((0..params.alpha as u64).map(|_| exp.sample(rng)).sum())
    } else {
        let gamma = Gamma::new(params.alpha, 1.0 / beta)
            .map_err(|e| ModelError::InvalidParams(e.to_string()))?;
        Ok(gamma.sample(rng))
    }
}

/// One resolution time from a fresh generator seeded with `seed`.
pub fn sample_resolution(params: &ModelParams, depth: u32, seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_resolution_with(params, depth, SamplingMode::Auto, &mut rng)
}

/// `n` draws from stream `stream` of `seed`.
pub fn sample_many(
    params: &ModelParams,
    depth: u32,
    mode: SamplingMode,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n)
        .map(|_| sample_resolution_with(params, depth, mode, &mut rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    /// Deepest dependency level.
    pub depth: u32,
    pub artifacts_per_level: usize,
    pub seed: u64,
    /// First day on which advisories may be published.
    pub window_start: Day,
    /// Publication dates fall in `[window_start, window_start + window_days)`.
    pub window_days: u32,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            depth: 10,
            artifacts_per_level: 100,
            seed: 0,
            window_start: parse_day("2015-01-01").expect("valid literal"),
            window_days: 365,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.artifacts_per_level == 0 {
            return Err(ModelError::InvalidSpec("artifacts_per_level must be >= 1".into()));
        }
        if self.window_days == 0 {
            return Err(ModelError::InvalidSpec("window_days must be >= 1".into()));
        }
        if self.artifacts_per_level > u32::MAX as usize {
            return Err(ModelError::InvalidSpec("artifacts_per_level too large".into()));
        }
        Ok(())
    }
}

pub fn artifact_stream(level: u32, index: usize) -> u64 {
    (u64::from(level) << 32) | index as u64
}

fn artifact_name(level: u32, index: usize) -> String {
    format!("synthetic:lib-l{level:02}-{index:05}")
}

const AFFECTED: &str = "1.0";
const FIXED: &str = "1.1";

#[derive(Debug, Clone, Copy)]
struct Planned {
    parent: Option<usize>,
    published: Option<Day>,
    released: Day,
    fixed: Day,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub graph: DependencyGraph,
    pub advisories: Vec<Advisory>,
    pub cves: Vec<CveRecord>,
}

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub releases: PathBuf,
    pub deps: PathBuf,
    pub cves: PathBuf,
}

impl SyntheticCorpus {
    /// Writes `releases.csv`, `deps.csv` and `cves.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<CorpusPaths, ModelError> {
        std::fs::create_dir_all(dir).map_err(GraphError::Io)?;
        let paths = CorpusPaths {
            releases: dir.join("releases.csv"),
            deps: dir.join("deps.csv"),
            cves: dir.join("cves.json"),
        };
        let create = |p: &Path| -> io::Result<BufWriter<File>> { Ok(BufWriter::new(File::create(p)?)) };
        self.graph
            .write_releases_csv(create(&paths.releases).map_err(GraphError::Io)?)?;
        self.graph
            .write_deps_csv(create(&paths.deps).map_err(GraphError::Io)?)?;
        let mut out = create(&paths.cves).map_err(GraphError::Io)?;
        serde_json::to_writer_pretty(&mut out, &self.advisories)
            .map_err(|e| GraphError::Io(e.into()))?;
        out.write_all(b"\n").map_err(GraphError::Io)?;
        out.flush().map_err(GraphError::Io)?;
        Ok(paths)
    }
}

/// Builds a layered corpus. Every level-0 artifact has its own advisory
/// against release 1.0, published inside the window, and 1.0 appears the day
/// the advisory is published. A level-L artifact depends on a random level
/// L-1 artifact: its 1.0 depends on the parent's 1.0 and appears the day
/// the parent's 1.1 does, and its 1.1 depends on the parent's 1.1. Every
/// 1.1 follows its 1.0 by a resolution time drawn at the artifact's level,
/// rounded to whole days, so per-level `level_days` follow the model.
pub fn generate_corpus(
    spec: &SyntheticCorpusSpec,
    params: &ModelParams,
) -> Result<SyntheticCorpus, ModelError> {
    spec.validate()?;
    params.validate()?;
    if !params.has_integer_alpha() {
        warn!(
            "alpha = {} is not an integer: sampling Gamma directly, stages have no meaning",
            params.alpha
        );
    }
    let n = spec.artifacts_per_level;
    let mut levels: Vec<Vec<Planned>> = Vec::with_capacity(spec.depth as usize + 1);
    for level in 0..=spec.depth {
        let prev = levels.last();
        let planned: Result<Vec<Planned>, ModelError> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(artifact_stream(level, i));
                let (parent, published, released) = match prev {
                    None => {
                        let day = spec.window_start
                            + i64::from(rng.random_range(0..spec.window_days));
                        (None, Some(day), day)
                    }
                    Some(prev) => {
                        let p = rng.random_range(0..n);
                        (Some(p), None, prev[p].fixed)
                    }
                };
                let t = sample_resolution_with(params, level, SamplingMode::Auto, &mut rng)?;
                Ok(Planned {
                    parent,
                    published,
                    released,
                    fixed: released + t.round() as Day,
                })
            })
            .collect();
        levels.push(planned?);
    }

    let v_affected = Version::parse(AFFECTED).expect("valid literal");
    let v_fixed = Version::parse(FIXED).expect("valid literal");
    let mut builder = GraphBuilder::new();
    let mut line = 0u64;
    for (level, planned) in levels.iter().enumerate() {
        for (i, p) in planned.iter().enumerate() {
            let name = artifact_name(level as u32, i);
            for (version, at) in [(&v_affected, p.released), (&v_fixed, p.fixed)] {
                line += 1;
                builder.add_release(
                    Release {
                        artifact_id: name.clone(),
                        version: version.clone(),
                        released_at: at,
                    },
                    line,
                )?;
            }
        }
    }
    for (level, planned) in levels.iter().enumerate().skip(1) {
        for (i, p) in planned.iter().enumerate() {
            let name = artifact_name(level as u32, i);
            let parent = artifact_name(level as u32 - 1, p.parent.expect("non-root level"));
            for v in [AFFECTED, FIXED] {
                line += 1;
                builder.add_dependency((&name, v), (&parent, v), line);
            }
        }
    }
    let (mut graph, _) = builder.build()?;
    graph.compute_next_edges();

    let advisories: Vec<Advisory> = levels[0]
        .iter()
        .enumerate()
        .map(|(i, p)| Advisory {
            id: format!("SYN-{i:05}"),
            published: format_day(p.published.expect("root level")),
            severity: None,
            affected: vec![AdvisoryAffected {
                package: PackageRef::Name(artifact_name(0, i)),
                versions: Some(vec![AFFECTED.to_string()]),
                introduced: None,
                fixed: None,
            }],
        })
        .collect();
    let json = serde_json::to_vec(&advisories).map_err(|e| GraphError::Io(e.into()))?;
    let cves = ingest_cves(json.as_slice(), &graph)?.records;
    graph.attach_cves(&cves);
    Ok(SyntheticCorpus {
        graph,
        advisories,
        cves,
    })
}
