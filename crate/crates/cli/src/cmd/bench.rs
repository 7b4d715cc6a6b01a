use std::time::Instant;

use serde::Serialize;

use aflow_core::classifier::EngineKind;
use aflow_core::Policy;

use crate::error::CliResult;
use crate::io::{emit, load_trace, to_json};
use crate::manifest::RunManifest;
use crate::Cli;

use super::classify::{classify, PipelineArgs};
use super::{check_timeout, out_path, parse_list_arg, progress, TraceArgs};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: TraceArgs,
    /// Comma-separated engines.
    #[arg(long, default_value = "oracle,ports,signature")]
    pub engines: String,
    /// Comma-separated policies.
    #[arg(long, default_value = "ms-hybrid,lru,lfu")]
    pub policies: String,
    /// Timed runs per cell; the fastest is reported.
    #[arg(long, default_value_t = 1)]
    pub repeat: u32,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Serialize)]
struct Row {
    engine: EngineKind,
    /// `None` for the run without a cache.
    policy: Option<Policy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    packets: u64,
    connections: u64,
    seconds: f64,
    packets_per_sec: f64,
    workload_reduction: f64,
    engine_work_units: u64,
    baseline_work_units: u64,
    classifier_work_units: f64,
    speedup_estimate: f64,
}

#[derive(Serialize)]
struct Output {
    manifest: RunManifest,
    rows: Vec<Row>,
}

pub fn run(cli: &Cli, args: &Args) -> CliResult<()> {
    check_timeout(args.input.idle_timeout)?;
    let engines: Vec<EngineKind> = parse_list_arg("--engines", &args.engines)?;
    let policies: Vec<Policy> = parse_list_arg("--policies", &args.policies)?;
    let loaded = load_trace(&args.input.trace, cli.format)?;
    let records = &loaded.trace.records;

    let mut cells: Vec<Option<Policy>> = Vec::new();
    if !args.pipeline.no_cache {
        cells.extend(policies.iter().copied().map(Some));
    }
    cells.push(None);

    let mut manifest = RunManifest::new("bench", args)
        .seed("adapter", cli.seed)
        .seed("filter", cli.seed)
        .input(loaded.digest.clone());
    let mut rows = Vec::new();
    for &kind in &engines {
        let (engine, rules) = args.pipeline.engine.build(kind)?;
        if let Some(r) = rules {
            if !manifest.inputs.contains(&r) {
                manifest = manifest.input(r);
            }
        }
        for &policy in &cells {
            let mut pipeline = args.pipeline.clone();
            pipeline.no_cache = policy.is_none();
            let config = pipeline.config(
                cli,
                policy.unwrap_or(Policy::MsHybrid),
                args.input.idle_timeout,
                records,
            )?;
            let mut best = f64::INFINITY;
            let mut outcome = None;
            for _ in 0..args.repeat.max(1) {
                let start = Instant::now();
                let r = classify(records, engine.as_ref(), &config, pipeline.workers);
                best = best.min(start.elapsed().as_secs_f64());
                outcome = Some(r);
            }
            let row = match outcome.expect("at least one run") {
                Ok((r, _)) => Row {
                    engine: kind,
                    policy,
                    error: None,
                    packets: r.packets,
                    connections: r.total_connections,
                    seconds: best,
                    packets_per_sec: r.packets as f64 / best.max(1e-9),
                    workload_reduction: r.workload_reduction,
                    engine_work_units: r.engine_work_units,
                    baseline_work_units: r.baseline_work_units,
                    classifier_work_units: r.classifier_work_units,
                    speedup_estimate: r.speedup_estimate,
                },
                Err(e) => Row {
                    engine: kind,
                    policy,
                    error: Some(e.to_string()),
                    packets: 0,
                    connections: 0,
                    seconds: best,
                    packets_per_sec: 0.0,
                    workload_reduction: 0.0,
                    engine_work_units: 0,
                    baseline_work_units: 0,
                    classifier_work_units: 0.0,
                    speedup_estimate: 0.0,
                },
            };
            progress(
                cli,
                format!(
                    "{kind} {}: {:.0} packets/s, speedup {:.2}{}",
                    policy.map_or("no-cache".to_string(), |p| p.to_string()),
                    row.packets_per_sec,
                    row.speedup_estimate,
                    row.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
                ),
            );
            rows.push(row);
        }
    }
    emit(out_path(cli), &to_json(&Output { manifest, rows })?)?;
    Ok(())
}
