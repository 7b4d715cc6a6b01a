use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use aflow_core::classifier::{
    run_sharded, AdapterConfig, ClassifierConfig, ClassifierReport, ConnectionSummary, Engine, EngineKind, LabelSource,
};
use aflow_core::trace::IngestStats;
use aflow_core::{PacketRecord, Policy};

use crate::capacity::Capacity;
use crate::error::{CliError, CliResult};
use crate::io::{emit, load_trace, to_json, write_atomic};
use crate::manifest::RunManifest;
use crate::Cli;

use super::{check_timeout, distinct, out_path, progress, references, EngineArgs, FilterArgs, TraceArgs};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct PipelineArgs {
    /// Cache size, as entries or percent of distinct flows.
    #[arg(long, default_value = "100%")]
    pub capacity: Capacity,
    /// Send every connection to the engine.
    #[arg(long)]
    pub no_cache: bool,
    /// Probability that a cache hit is re-checked by the engine.
    #[arg(long, default_value_t = 0.0)]
    pub sample_prob: f64,
    /// Label conflicts after which a key is blacklisted.
    #[arg(long, default_value_t = 3)]
    pub blacklist_threshold: u32,
    /// Work units charged per cache lookup.
    #[arg(long, default_value_t = 0.01)]
    pub lookup_cost: f64,
    /// Shard the pipeline over this many threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub filter: FilterArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,
}

impl PipelineArgs {
    pub fn config(
        &self,
        cli: &Cli,
        policy: Policy,
        idle_timeout: f64,
        records: &[PacketRecord],
    ) -> CliResult<ClassifierConfig> {
        if self.workers == 0 {
            return Err(CliError::config("InvalidConfig", "--workers must be >= 1"));
        }
        let cache_capacity = if self.no_cache {
            None
        } else {
            let flows = distinct(&references(records, false, idle_timeout));
            Some(self.capacity.resolve(flows.max(1)))
        };
        let config = ClassifierConfig {
            cache_capacity,
            policy,
            filter: self.filter.config(cli.seed)?,
            adapter: AdapterConfig {
                sample_prob: self.sample_prob,
                conflict_blacklist_threshold: self.blacklist_threshold,
                rng_seed: cli.seed,
                ..AdapterConfig::default()
            },
            idle_timeout,
            lookup_cost: self.lookup_cost,
            ..ClassifierConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: TraceArgs,
    /// oracle, ports or signature.
    #[arg(long, default_value = "oracle")]
    pub engine: EngineKind,
    #[arg(long, default_value = "ms-hybrid")]
    pub policy: Policy,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
    /// Write one CSV row per finished connection here.
    #[arg(long)]
    pub connections_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    engine: EngineKind,
    engine_options: &'a EngineArgs,
    capacity: Capacity,
    workers: usize,
    trace: &'a PathBuf,
    classifier: &'a ClassifierConfig,
    connections_csv: &'a Option<PathBuf>,
}

#[derive(Serialize)]
struct Output<'a> {
    manifest: RunManifest,
    ingest: &'a IngestStats,
    report: &'a ClassifierReport,
}

pub fn classify(
    records: &[PacketRecord],
    engine: &dyn Engine,
    config: &ClassifierConfig,
    workers: usize,
) -> CliResult<(ClassifierReport, Vec<ConnectionSummary>)> {
    Ok(run_sharded(records, engine, config, workers)?)
}

pub fn connections_csv(summaries: &[ConnectionSummary]) -> String {
    let mut s = String::from("client,client_port,server,server_port,proto,label,source,packets\n");
    for c in summaries {
        let (client, server) = (c.tuple.src, c.tuple.dst);
        let (client, server) = if server.ip == c.key.server.ip && server.port == c.key.server.port {
            (client, server)
        } else {
            (server, client)
        };
        let source = match c.source {
            Some(LabelSource::Cache) => "cache",
            Some(LabelSource::Engine) => "engine",
            None => "",
        };
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            client.ip,
            client.port,
            server.ip,
            server.port,
            c.key.server.proto,
            c.label.as_ref().map(|l| l.as_str()).unwrap_or(""),
            source,
            c.packets
        )
        .expect("string write");
    }
    s
}

pub fn run(cli: &Cli, args: &Args) -> CliResult<()> {
    check_timeout(args.input.idle_timeout)?;
    let loaded = load_trace(&args.input.trace, cli.format)?;
    let records = &loaded.trace.records;
    let mut config = args
        .pipeline
        .config(cli, args.policy, args.input.idle_timeout, records)?;
    config.record_connections = args.connections_csv.is_some();
    let (engine, rules) = args.pipeline.engine.build(args.engine)?;

    let (report, summaries) = classify(records, engine.as_ref(), &config, args.pipeline.workers)?;
    if let Some(p) = &args.connections_csv {
        write_atomic(p, connections_csv(&summaries).as_bytes())?;
    }

    let mut manifest = RunManifest::new(
        "classify",
        Resolved {
            engine: args.engine,
            engine_options: &args.pipeline.engine,
            capacity: args.pipeline.capacity,
            workers: args.pipeline.workers,
            trace: &args.input.trace,
            classifier: &config,
            connections_csv: &args.connections_csv,
        },
    )
    .seed("adapter", config.adapter.rng_seed)
    .seed("filter", config.filter.seed)
    .input(loaded.digest);
    if let Some(r) = rules {
        manifest = manifest.input(r);
    }
    let out = Output {
        manifest,
        ingest: &loaded.trace.stats,
        report: &report,
    };
    emit(out_path(cli), &to_json(&out)?)?;
    progress(
        cli,
        format!(
            "{} connections, workload reduction {:.4}, speedup {:.2}",
            report.total_connections, report.workload_reduction, report.speedup_estimate
        ),
    );
    Ok(())
}
