use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vulnlife::depgraph::{
    ingest_cves_file, ingest_graph_files, parse_day, DependencyGraph, NextRule,
};
use vulnlife::distfit::{
    aic_rank, fit_mle, fit_with_gof, qq_points, BootstrapOptions, Family, FitReport,
};
use vulnlife::model::{generate_corpus, ModelParams, SyntheticCorpusSpec};
use vulnlife::propagation::{
    filter_samples, propagate_all, read_samples_csv, write_samples_csv, DurationField,
    LifetimeSample, PropagationOptions,
};
use vulnlife::regression::{
    aggregate_points, months_rule, ols_fit, regress_samples, RegressionResult, Target,
};
use vulnlife::survival::{level_stats, stratified_survival, LevelStats, SurvivalCurve};

use crate::{
    AnalysisFlags, Command, FitArgs, IngestArgs, PropagateArgs, RegressArgs, ReportArgs,
    SampleInput, SimulateArgs, SurvivalArgs, UsageError,
};

pub fn dispatch(command: &Command) -> Result<Value> {
    let body = match command {
        Command::Ingest(a) => ingest(a)?,
        Command::Propagate(a) => propagate(a)?,
        Command::Survival(a) => survival(a)?,
        Command::Fit(a) => fit(a)?,
        Command::Regress(a) => regress(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::Report(a) => report(a)?,
    };
    Ok(json!({ "config": command, "result": body }))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    w.write_record(header)?;
    Ok(w)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// `{config, result}` document with the same config layout as stdout.
fn with_config<T: Serialize>(subcommand: &str, args: &T, result: &Value) -> Value {
    let mut config = serde_json::to_value(args).expect("arguments serialise");
    config["subcommand"] = json!(subcommand);
    json!({ "config": config, "result": result })
}

fn parse_end(text: &Option<String>) -> Result<Option<i64>> {
    text.as_deref()
        .map(|t| parse_day(t).ok_or_else(|| usage(format!("bad --observation-end {t:?}"))))
        .transpose()
}

fn load_graph(
    releases: &Path,
    deps: &Path,
    cves: Option<&Path>,
) -> Result<(DependencyGraph, Value, Vec<vulnlife::depgraph::CveRecord>)> {
    let (mut graph, report) = ingest_graph_files(releases, deps)
        .with_context(|| format!("reading {} and {}", releases.display(), deps.display()))?;
    let next = graph.compute_next_edges();
    let mut summary = json!({
        "releases": report.releases,
        "dep_edges": report.dep_edges,
        "dropped_edges": report.dropped_edges,
        "duplicate_edges": report.duplicate_edges,
        "diagnostics": report.diagnostics,
        "next_edges": next,
    });
    let mut records = Vec::new();
    if let Some(path) = cves {
        let ingest =
            ingest_cves_file(path, &graph).with_context(|| format!("reading {}", path.display()))?;
        graph.attach_cves(&ingest.records);
        summary["cves"] = json!(ingest.records.len());
        summary["affected_releases"] = json!(graph.affected_edges().len());
        summary["unknown_artifacts"] = json!(ingest.unknown_artifacts);
        records = ingest.records;
    }
    Ok((graph, summary, records))
}

fn ingest(a: &IngestArgs) -> Result<Value> {
    let (graph, summary, _) = load_graph(&a.releases, &a.deps, a.cves.as_deref())?;
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        graph.write_releases_csv(create(&dir.join("releases.csv"))?)?;
        graph.write_deps_csv(create(&dir.join("deps.csv"))?)?;
        let mut w = csv_writer(
            &dir.join("next_edges.csv"),
            &["artifact_id", "version", "next_version", "rule"],
        )?;
        for (id, r) in graph.releases() {
            if let Some(next) = graph.next_release(id) {
                let rule = match graph.next_rule(id) {
                    Some(NextRule::Semver) => "semver",
                    _ => "heuristic",
                };
                w.write_record([
                    r.artifact_id.as_str(),
                    r.version.as_str(),
                    graph.release(next).version.as_str(),
                    rule,
                ])?;
            }
        }
        w.flush()?;
        let mut w = csv_writer(
            &dir.join("affected.csv"),
            &["cve_id", "artifact_id", "version"],
        )?;
        for edge in graph.affected_edges() {
            let r = graph.release(edge.release);
            w.write_record([edge.cve_id.as_str(), &r.artifact_id, r.version.as_str()])?;
        }
        w.flush()?;
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct SampleSummary {
    samples: usize,
    censored: usize,
    per_level: BTreeMap<u32, usize>,
}

fn summarize(samples: &[LifetimeSample]) -> SampleSummary {
    let mut per_level = BTreeMap::new();
    for s in samples {
        *per_level.entry(s.level).or_insert(0) += 1;
    }
    SampleSummary {
        samples: samples.len(),
        censored: samples.iter().filter(|s| s.censored).count(),
        per_level,
    }
}

fn compute_samples(
    releases: &Path,
    deps: &Path,
    cves: &Path,
    max_level: u32,
    end: &Option<String>,
) -> Result<(Vec<LifetimeSample>, Value)> {
    let (graph, mut summary, records) = load_graph(releases, deps, Some(cves))?;
    let opts = PropagationOptions {
        max_level,
        observation_end: parse_end(end)?,
    };
    let (samples, filtered) = filter_samples(propagate_all(&graph, &records, opts));
    summary["filter"] = json!(filtered);
    Ok((samples, summary))
}

fn propagate(a: &PropagateArgs) -> Result<Value> {
    let (samples, mut summary) =
        compute_samples(&a.releases, &a.deps, &a.cves, a.max_level, &a.observation_end)?;
    out_dir(&a.out)?;
    let path = a.out.join("samples.csv");
    write_samples_csv(create(&path)?, &samples)?;
    summary["output"] = json!(summarize(&samples));
    Ok(summary)
}

/// Samples from `--samples`, or propagated from the graph inputs, with the
/// censoring policy applied.
fn load_samples(input: &SampleInput, flags: &AnalysisFlags) -> Result<Vec<LifetimeSample>> {
    let mut samples = match (&input.samples, &input.releases, &input.deps, &input.cves) {
        (Some(path), None, None, None) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let (kept, _) = filter_samples(
                read_samples_csv(std::io::BufReader::new(file))
                    .with_context(|| format!("reading {}", path.display()))?,
            );
            kept
        }
        (None, Some(r), Some(d), Some(c)) => {
            compute_samples(r, d, c, input.max_level, &input.observation_end)?.0
        }
        _ => {
            return Err(usage(
                "give either --samples or all of --releases, --deps and --cves",
            ))
        }
    };
    if flags.include_censored_as_events {
        for s in &mut samples {
            s.censored = false;
        }
    }
    Ok(samples)
}

fn write_curves(path: &Path, curves: &BTreeMap<u32, SurvivalCurve>) -> Result<()> {
    let mut w = csv_writer(path, &["level", "t", "survival", "at_risk", "deaths"])?;
    for (level, c) in curves {
        for i in 0..c.len() {
            w.serialize((level, c.times[i], c.survival[i], c.at_risk[i], c.deaths[i]))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_stats(path: &Path, stats: &[LevelStats]) -> Result<()> {
    let mut w = csv_writer(
        path,
        &["level", "mean", "std", "min", "q25", "median", "q75", "max", "count"],
    )?;
    for row in stats {
        let s = &row.stats;
        w.serialize((row.level, s.mean, s.std, s.min, s.q25, s.median, s.q75, s.max, s.count))?;
    }
    w.flush()?;
    Ok(())
}

fn curve_summary(curves: &BTreeMap<u32, SurvivalCurve>) -> Value {
    curves
        .iter()
        .map(|(level, c)| {
            (
                level.to_string(),
                json!({ "n": c.at_risk.first().copied().unwrap_or(0), "median": c.median() }),
            )
        })
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn survival(a: &SurvivalArgs) -> Result<Value> {
    let samples = load_samples(&a.input, &a.flags)?;
    if samples.is_empty() {
        warn!("no lifetime samples; writing empty tables");
    }
    let curves = stratified_survival(&samples, a.flags.duration)?;
    let stats = level_stats(&samples, a.flags.duration, false);
    out_dir(&a.out)?;
    write_curves(&a.out.join("survival_curves.csv"), &curves)?;
    write_stats(&a.out.join("level_stats.csv"), &stats)?;
    Ok(json!({
        "input": summarize(&samples),
        "curves": curve_summary(&curves),
        "level_stats": stats,
    }))
}

fn durations(samples: &[LifetimeSample], field: DurationField, level: Option<u32>) -> Vec<f64> {
    samples
        .iter()
        .filter(|s| !s.censored && level.is_none_or(|l| s.level == l))
        .map(|s| s.duration(field) as f64)
        .collect()
}

fn fit(a: &FitArgs) -> Result<Value> {
    let samples = load_samples(&a.input, &a.flags)?;
    let data = durations(&samples, a.flags.duration, a.level);
    let families = if a.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        let mut f = a.families.clone();
        f.sort();
        f.dedup();
        f
    };
    let opts = BootstrapOptions {
        replicates: a.bootstrap,
        seed: a.seed,
    };
    let mut fits = Vec::new();
    for &family in &families {
        let result = if a.bootstrap == 0 {
            fit_mle(family, &data)
        } else {
            fit_with_gof(family, &data, opts)
        };
        fits.push(result.with_context(|| format!("fitting {family} to {} durations", data.len()))?);
    }
    let ranked = aic_rank(fits);
    out_dir(&a.out)?;
    let mut w = csv_writer(&a.out.join("qq_points.csv"), &["family", "theoretical", "empirical"])?;
    for f in &ranked {
        for (t, e) in qq_points(f, &data)? {
            w.serialize((f.family, t, e))?;
        }
    }
    w.flush()?;
    let reports: Vec<FitReport> = ranked.iter().map(FitReport::from).collect();
    let body = json!({ "n": data.len(), "fits": reports });
    write_json(&a.out.join("fits.json"), &with_config("fit", a, &body))?;
    Ok(body)
}

#[derive(Debug, Deserialize)]
struct StatsRow {
    level: u32,
    mean: Option<f64>,
    median: Option<f64>,
}

fn read_stats_points(path: &Path, target: Target) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut points = Vec::new();
    for row in rdr.deserialize::<StatsRow>() {
        let row = row.with_context(|| format!("reading {}", path.display()))?;
        let y = match target {
            Target::Mean => row.mean,
            Target::Median => row.median,
        };
        let Some(y) = y else {
            bail!("{}: level {} has no {:?} value", path.display(), row.level, target);
        };
        points.push((f64::from(row.level), y));
    }
    Ok(points)
}

fn regression_json(target: Target, r: &RegressionResult) -> Value {
    let (slope_m, intercept_m) = months_rule(r);
    json!({
        "target": target,
        "intercept": r.intercept,
        "slope": r.slope,
        "r2": r.r_squared,
        "n": r.n_points,
        "months": { "slope": slope_m, "intercept": intercept_m },
    })
}

fn regress(a: &RegressArgs) -> Result<Value> {
    let result = match &a.stats {
        Some(path) => {
            if a.per_sample {
                return Err(usage("--per-sample needs sample input, not --stats"));
            }
            ols_fit(&read_stats_points(path, a.target)?)?
        }
        None => {
            let samples = load_samples(&a.input, &a.flags)?;
            if a.per_sample && a.target == Target::Median {
                warn!("per-sample regression ignores the median target");
            }
            regress_samples(&samples, a.flags.duration, a.target, false, a.per_sample)?
        }
    };
    let body = regression_json(a.target, &result);
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        write_json(&dir.join("regression.json"), &with_config("regress", a, &body))?;
    }
    Ok(body)
}

fn simulate(a: &SimulateArgs) -> Result<Value> {
    let params = ModelParams::new(a.alpha, a.k, a.c).map_err(|e| usage(e.to_string()))?;
    let window_start = parse_day(&a.window_start)
        .ok_or_else(|| usage(format!("bad --window-start {:?}", a.window_start)))?;
    let spec = SyntheticCorpusSpec {
        depth: a.depth,
        artifacts_per_level: a.per_level,
        seed: a.seed,
        window_start,
        window_days: a.window_days,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = generate_corpus(&spec, &params)?;
    let paths = corpus.write_to(&a.out)?;
    let (slope, intercept) = params.expected_line();
    Ok(json!({
        "releases": corpus.graph.len(),
        "dep_edges": corpus.graph.dep_edge_count(),
        "cves": corpus.cves.len(),
        "expected_level_days": { "slope": slope, "intercept": intercept },
        "files": {
            "releases": paths.releases,
            "deps": paths.deps,
            "cves": paths.cves,
        },
    }))
}

fn report(a: &ReportArgs) -> Result<Value> {
    let samples = load_samples(&a.input, &a.flags)?;
    let field = a.flags.duration;
    if samples.is_empty() {
        warn!("no lifetime samples; writing empty report tables");
    }
    out_dir(&a.out)?;
    let files: BTreeMap<&str, PathBuf> = [
        "survival_curves.csv",
        "level_stats.csv",
        "durations.csv",
        "regression.csv",
        "report.json",
    ]
    .into_iter()
    .map(|f| (f, a.out.join(f)))
    .collect();

    let curves = stratified_survival(&samples, field)?;
    write_curves(&files["survival_curves.csv"], &curves)?;
    let stats = level_stats(&samples, field, false);
    write_stats(&files["level_stats.csv"], &stats)?;

    let mut w = csv_writer(
        &files["durations.csv"],
        &["level", "cve_id", "artifact_id", "duration", "censored"],
    )?;
    for s in &samples {
        w.serialize((s.level, &s.cve_id, &s.artifact_id, s.duration(field), s.censored))?;
    }
    w.flush()?;

    let fit_for = |target| match ols_fit(&aggregate_points(&stats, target)) {
        Ok(r) => Some(r),
        Err(e) => {
            warn!("no {target:?} regression: {e}");
            None
        }
    };
    let (mean_fit, median_fit) = (fit_for(Target::Mean), fit_for(Target::Median));
    let mut w = csv_writer(
        &files["regression.csv"],
        &["level", "mean", "median", "count", "fitted_mean", "fitted_median"],
    )?;
    for row in &stats {
        let x = f64::from(row.level);
        w.serialize((
            row.level,
            row.stats.mean,
            row.stats.median,
            row.stats.count,
            mean_fit.map(|r| r.predict(x)),
            median_fit.map(|r| r.predict(x)),
        ))?;
    }
    w.flush()?;

    let body = json!({
        "input": summarize(&samples),
        "duration": field,
        "curves": curve_summary(&curves),
        "regression": {
            "mean": mean_fit.map(|r| regression_json(Target::Mean, &r)),
            "median": median_fit.map(|r| regression_json(Target::Median, &r)),
        },
        "files": files,
    });
    write_json(&files["report.json"], &with_config("report", a, &body))?;
    Ok(body)
}
