//! CSV interchange format.
//!
//! ```text
//! ts,src_ip,src_port,dst_ip,dst_port,proto,len,flags,label,payload_hex
//! 0.000000,10.0.0.5,51000,93.184.216.34,80,tcp,60,S,,
//! ```
//!
//! `len` is the transport payload length, `flags` a subset of `SAFRP`,
//! `label` and `payload_hex` may be empty. Timestamps are written with six
//! decimals (microsecond precision).

use std::io::{Read, Write};
use std::net::Ipv4Addr;

use super::{order_records, IngestStats, Trace, TraceError};
use crate::flow::{AppLabel, FiveTuple, PacketRecord, TcpFlags, TransportProto};

pub const CSV_HEADER: [&str; 10] = [
    "ts",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "proto",
    "len",
    "flags",
    "label",
    "payload_hex",
];

enum RowError {
    Unsupported(String),
    Invalid(String),
}

fn field(row: &::csv::StringRecord, i: usize) -> &str {
    row.get(i).unwrap_or("").trim()
}

fn parse<T: std::str::FromStr>(row: &::csv::StringRecord, i: usize) -> Result<T, RowError> {
    let raw = field(row, i);
    raw.parse()
        .map_err(|_| RowError::Invalid(format!("bad {} {raw:?}", CSV_HEADER[i])))
}

fn parse_row(row: &::csv::StringRecord) -> Result<PacketRecord, RowError> {
    if row.len() != CSV_HEADER.len() {
        return Err(RowError::Invalid(format!(
            "expected {} fields, found {}",
            CSV_HEADER.len(),
            row.len()
        )));
    }
    let proto_raw = field(row, 5);
    let proto: TransportProto = proto_raw
        .parse()
        .map_err(|_| RowError::Unsupported(proto_raw.to_string()))?;
    let ts: f64 = parse(row, 0)?;
    if !ts.is_finite() {
        return Err(RowError::Invalid(format!("bad ts {ts}")));
    }
    let src: Ipv4Addr = parse(row, 1)?;
    let sport: u16 = parse(row, 2)?;
    let dst: Ipv4Addr = parse(row, 3)?;
    let dport: u16 = parse(row, 4)?;
    let len: u32 = parse(row, 6)?;
    let flags_raw = field(row, 7);
    let flags =
        TcpFlags::from_letters(flags_raw).ok_or_else(|| RowError::Invalid(format!("bad flags {flags_raw:?}")))?;
    let flags = match proto {
        TransportProto::Tcp => flags,
        TransportProto::Udp => TcpFlags::NONE,
    };
    let mut record = PacketRecord::new(ts, FiveTuple::new(src, sport, dst, dport, proto), flags, len);
    let label = field(row, 8);
    if !label.is_empty() {
        let label = AppLabel::new(label).map_err(|e| RowError::Invalid(e.to_string()))?;
        record = record.with_label(label);
    }
    let payload_hex = field(row, 9);
    if !payload_hex.is_empty() {
        let bytes = decode_hex(payload_hex).ok_or_else(|| RowError::Invalid("bad payload_hex".to_string()))?;
        if bytes.len() > len as usize {
            return Err(RowError::Invalid(format!(
                "payload of {} bytes exceeds len {len}",
                bytes.len()
            )));
        }
        record = record.with_payload(bytes);
    }
    Ok(record)
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

fn encode_hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[usize::from(b >> 4)] as char);
        s.push(DIGITS[usize::from(b & 0x0f)] as char);
    }
    s
}

/// Reads a CSV trace. Rows that fail to parse are skipped and counted with
/// their line number; rows with a non-TCP/UDP protocol are counted separately.
pub fn read_csv<R: Read>(reader: R) -> Result<Trace, TraceError> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(::csv::Trim::None)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != CSV_HEADER {
        return Err(TraceError::SchemaMismatch {
            expected: CSV_HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut row = ::csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                stats.packets_read += 1;
                stats.parse_error(line, e);
                continue;
            }
        }
        stats.packets_read += 1;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row) {
            Ok(r) => records.push(r),
            Err(RowError::Unsupported(p)) => {
                stats.skipped_unsupported_proto += 1;
                if stats.error_samples.len() < 20 {
                    stats
                        .error_samples
                        .push(format!("line {line}: unsupported protocol {p:?}"));
                }
            }
            Err(RowError::Invalid(msg)) => stats.parse_error(line, msg),
        }
    }
    stats.reordered = order_records(&mut records)?;
    stats.records = records.len() as u64;
    Ok(Trace { records, stats })
}

pub fn write_csv<W: Write>(writer: W, records: &[PacketRecord]) -> Result<(), TraceError> {
    let mut w = ::csv::WriterBuilder::new().from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let t = &r.tuple;
        w.write_record([
            format!("{:.6}", r.ts).as_str(),
            &t.src.ip.to_string(),
            &t.src.port.to_string(),
            &t.dst.ip.to_string(),
            &t.dst.port.to_string(),
            t.proto().as_str(),
            &r.payload_len.to_string(),
            &r.tcp_flags.to_letters(),
            r.truth_label.as_ref().map_or("", AppLabel::as_str),
            &r.payload.as_deref().map(encode_hex).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
