use serde::Serialize;

use aflow_core::trace::{generate_synthetic, write_csv, write_pcap, PcapFormat, SyntheticConfig};

use crate::error::CliResult;
use crate::io::{emit, sha256_hex, to_json, write_atomic, TraceFormat};
use crate::manifest::RunManifest;
use crate::Cli;

use super::{out_path, progress};

#[derive(Debug, Clone, clap::Args)]
pub struct Args {
    /// Distinct aggregate-flows in the popularity model.
    #[arg(long, default_value_t = 10_000)]
    pub flows: usize,
    /// Zipf exponent.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    pub connections: usize,
    /// Mean packets per connection.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub packets: f64,
    /// Probability of re-referencing a recently used flow.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub correlation: f64,
    /// Recent distinct flows eligible for re-reference.
    #[arg(long, default_value_t = 256)]
    pub window: usize,
    /// Include packet payloads (needed by the signature engine).
    #[arg(long)]
    pub payloads: bool,
    /// Mean seconds between connection starts.
    #[arg(long, default_value_t = 0.001)]
    pub connection_gap: f64,
    /// Mean seconds between packets of a connection.
    #[arg(long, default_value_t = 0.010)]
    pub packet_gap: f64,
    /// Write the pcap with big-endian headers.
    #[arg(long)]
    pub big_endian: bool,
}

#[derive(Serialize)]
struct Resolved<'a> {
    synthetic: &'a SyntheticConfig,
    format: TraceFormat,
    big_endian: bool,
}

pub fn run(cli: &Cli, args: &Args) -> CliResult<()> {
    let config = SyntheticConfig {
        n_flows: args.flows,
        alpha: args.alpha,
        n_connections: args.connections,
        packets_per_connection: args.packets,
        correlation_p: args.correlation,
        window: args.window,
        seed: cli.seed,
        payloads: args.payloads,
        mean_connection_gap: args.connection_gap,
        mean_packet_gap: args.packet_gap,
        ..SyntheticConfig::default()
    };
    let trace = generate_synthetic(&config)?;
    let format = TraceFormat::resolve(cli.format, out_path(cli));
    let mut bytes = Vec::new();
    match format {
        TraceFormat::Csv => write_csv(&mut bytes, &trace.records)?,
        TraceFormat::Pcap => write_pcap(
            &mut bytes,
            &trace.records,
            PcapFormat {
                big_endian: args.big_endian,
                ..PcapFormat::default()
            },
        )?,
    }
    emit(out_path(cli), &bytes)?;

    if let Some(out) = out_path(cli).filter(|p| *p != std::path::Path::new("-")) {
        let manifest = RunManifest::new(
            "generate",
            Resolved {
                synthetic: &config,
                format,
                big_endian: args.big_endian,
            },
        )
        .seed("generator", cli.seed);
        #[derive(Serialize)]
        struct Sidecar {
            manifest: RunManifest,
            output_sha256: String,
            records: usize,
            distinct_flows: usize,
        }
        let sidecar = Sidecar {
            manifest,
            output_sha256: sha256_hex(&bytes),
            records: trace.records.len(),
            distinct_flows: trace.references.iter().collect::<std::collections::HashSet<_>>().len(),
        };
        let mut path = out.as_os_str().to_owned();
        path.push(".manifest.json");
        write_atomic(std::path::Path::new(&path), &to_json(&sidecar)?)?;
        progress(
            cli,
            format!(
                "wrote {} packets of {} connections to {}",
                trace.records.len(),
                trace.references.len(),
                out.display()
            ),
        );
    }
    Ok(())
}
