use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use aflow_core::locality::{rank_frequency, scramble_compare, LocalityReport};
use aflow_core::trace::IngestStats;

use crate::error::{CliError, CliResult};
use crate::io::{emit, load_trace, to_json, write_atomic};
use crate::manifest::RunManifest;
use crate::Cli;

use super::{check_timeout, out_path, progress, references, TraceArgs};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: TraceArgs,
    /// Seed of the random permutation; defaults to --seed.
    #[arg(long)]
    pub scramble_seed: Option<u64>,
    /// One reference per packet instead of one per connection.
    #[arg(long)]
    pub per_packet: bool,
    /// Write `rank,count` here.
    #[arg(long)]
    pub ranks_csv: Option<PathBuf>,
    /// Write `distance,probability,probability_scrambled` here.
    #[arg(long)]
    pub distances_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Output<'a> {
    manifest: RunManifest,
    ingest: &'a IngestStats,
    locality: &'a LocalityReport,
}

pub fn run(cli: &Cli, args: &Args) -> CliResult<()> {
    check_timeout(args.input.idle_timeout)?;
    let loaded = load_trace(&args.input.trace, cli.format)?;
    let keys = references(&loaded.trace.records, args.per_packet, args.input.idle_timeout);
    if keys.is_empty() {
        return Err(CliError::input("EmptyInput", "trace has no TCP/UDP packets"));
    }
    let seed = args.scramble_seed.unwrap_or(cli.seed);
    let report = scramble_compare(&keys, seed)?;

    if let Some(p) = &args.ranks_csv {
        let table = rank_frequency(&keys)?;
        let mut s = String::from("rank,count\n");
        for row in &table.rows {
            writeln!(s, "{},{}", row.rank, row.count).expect("string write");
        }
        write_atomic(p, s.as_bytes())?;
    }
    if let Some(p) = &args.distances_csv {
        let h = &report.distance_histogram;
        let hs = &report.distance_histogram_scrambled;
        let all: BTreeSet<u64> = h.keys().chain(hs.keys()).copied().collect();
        let mut s = String::from("distance,probability,probability_scrambled\n");
        for d in all {
            let a = h.get(&d).copied().unwrap_or(0.0);
            let b = hs.get(&d).copied().unwrap_or(0.0);
            writeln!(s, "{d},{a},{b}").expect("string write");
        }
        write_atomic(p, s.as_bytes())?;
    }

    let manifest = RunManifest::new("analyze", args)
        .seed("scramble", seed)
        .input(loaded.digest);
    let out = Output {
        manifest,
        ingest: &loaded.trace.stats,
        locality: &report,
    };
    emit(out_path(cli), &to_json(&out)?)?;
    progress(
        cli,
        format!(
            "{} references, {} flows, alpha {}, KS {:.4}",
            report.references,
            report.distinct_keys,
            report.alpha.map_or("n/a".to_string(), |a| format!("{a:.3}")),
            report.ks_statistic
        ),
    );
    Ok(())
}
