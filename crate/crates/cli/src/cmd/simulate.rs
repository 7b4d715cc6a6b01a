use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use aflow_core::cache::{replay, run_policy_comparison};
use aflow_core::Policy;

use crate::capacity::Capacity;
use crate::error::{CliError, CliResult};
use crate::io::{emit, load_trace, to_json, write_atomic};
use crate::manifest::RunManifest;
use crate::Cli;

use super::{check_timeout, distinct, out_path, parse_list_arg, progress, references, FilterArgs, TraceArgs};

/// Fraction of the full-capacity hit ratio that counts as saturated.
const SATURATION_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: TraceArgs,
    /// Comma-separated policies: ms-hybrid, lru, lfu, optimal-lfu.
    #[arg(long, default_value = "ms-hybrid,lru,lfu,optimal-lfu")]
    pub policies: String,
    /// Comma-separated capacities, as entries or percent of distinct flows.
    #[arg(long, default_value = "5%,10%,15%,40%,100%")]
    pub capacities: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub filter: FilterArgs,
    /// One reference per packet instead of one per connection.
    #[arg(long)]
    pub per_packet: bool,
    /// Also write the matrix as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Row {
    policy: Policy,
    capacity: usize,
    capacity_spec: Capacity,
    capacity_fraction: f64,
    hit_ratio: f64,
    lookups: u64,
    hits: u64,
    evictions: u64,
    admission_rejects: u64,
}

#[derive(Debug, Serialize)]
struct Saturation {
    /// MS-Hybrid hit ratio with room for every flow.
    full_capacity_hit_ratio: f64,
    level: f64,
    /// Smallest requested capacity reaching `level` of the full-capacity ratio.
    capacity: Option<usize>,
    capacity_fraction: Option<f64>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    #[serde(flatten)]
    args: &'a Args,
    policies: &'a [Policy],
    capacities: &'a [usize],
    filter: &'a aflow_core::FilterConfig,
}

#[derive(Serialize)]
struct Output {
    manifest: RunManifest,
    references: usize,
    distinct_flows: usize,
    rows: Vec<Row>,
    saturation: Option<Saturation>,
}

pub fn run(cli: &Cli, args: &Args) -> CliResult<()> {
    check_timeout(args.input.idle_timeout)?;
    let policies: Vec<Policy> = parse_list_arg("--policies", &args.policies)?;
    let specs: Vec<Capacity> = parse_list_arg("--capacities", &args.capacities)?;
    let filter = args.filter.config(cli.seed)?;
    let loaded = load_trace(&args.input.trace, cli.format)?;
    let keys = references(&loaded.trace.records, args.per_packet, args.input.idle_timeout);
    if keys.is_empty() {
        return Err(CliError::input("EmptyInput", "trace has no TCP/UDP packets"));
    }
    let flows = distinct(&keys);
    let caps: Vec<usize> = specs.iter().map(|c| c.resolve(flows)).collect();

    let results = run_policy_comparison(&keys, &caps, &policies, &filter)?;
    let rows: Vec<Row> = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| Row {
            policy: r.policy,
            capacity: r.capacity,
            capacity_spec: specs[i % specs.len()],
            capacity_fraction: r.capacity as f64 / flows as f64,
            hit_ratio: r.hit_ratio,
            lookups: r.lookups,
            hits: r.hits,
            evictions: r.evictions,
            admission_rejects: r.admission_rejects,
        })
        .collect();

    let saturation = if policies.contains(&Policy::MsHybrid) {
        let full = replay(&keys, Policy::MsHybrid, flows, &filter, None)?.hit_ratio();
        let reached = rows
            .iter()
            .filter(|r| r.policy == Policy::MsHybrid && r.hit_ratio >= SATURATION_LEVEL * full)
            .map(|r| r.capacity)
            .min();
        Some(Saturation {
            full_capacity_hit_ratio: full,
            level: SATURATION_LEVEL,
            capacity: reached,
            capacity_fraction: reached.map(|c| c as f64 / flows as f64),
        })
    } else {
        None
    };

    if let Some(p) = &args.csv {
        let mut s =
            String::from("policy,capacity,capacity_fraction,hit_ratio,lookups,hits,evictions,admission_rejects\n");
        for r in &rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.policy,
                r.capacity,
                r.capacity_fraction,
                r.hit_ratio,
                r.lookups,
                r.hits,
                r.evictions,
                r.admission_rejects
            )
            .expect("string write");
        }
        write_atomic(p, s.as_bytes())?;
    }

    let manifest = RunManifest::new(
        "simulate",
        Resolved {
            args,
            policies: &policies,
            capacities: &caps,
            filter: &filter,
        },
    )
    .seed("filter", filter.seed)
    .input(loaded.digest);
    let out = Output {
        manifest,
        references: keys.len(),
        distinct_flows: flows,
        rows,
        saturation,
    };
    emit(out_path(cli), &to_json(&out)?)?;
    progress(
        cli,
        format!("{} references, {} flows, {} cells", keys.len(), flows, out.rows.len()),
    );
    Ok(())
}
