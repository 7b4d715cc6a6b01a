//! Synthetic traces with Zipf popularity and short-term temporal correlation.

use std::collections::VecDeque;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Zipf};
use serde::{Deserialize, Serialize};

use super::TraceError;
use crate::flow::{AggregateFlowKey, AppLabel, Endpoint, FiveTuple, PacketRecord, TcpFlags, TransportProto};

/// Trace start, 2010-01-01T00:00:00Z.
const EPOCH_MICROS: u64 = 1_262_304_000 * 1_000_000;
const SERVER_BASE: u32 = u32::from_be_bytes([100, 64, 0, 0]);
const CLIENT_BASE: u32 = u32::from_be_bytes([10, 0, 0, 0]);
const CLIENT_PORTS: u32 = 28_000;
const FILLER_CAPTURE: usize = 256;

const STREAM_FLOWS: u64 = 0;
const STREAM_REFS: u64 = 1;
const STREAM_PACKETS: u64 = 2;

/// An application class and how its servers look on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub label: AppLabel,
    pub proto: TransportProto,
    /// Server ports to pick from; empty means a random high port.
    pub ports: Vec<u16>,
    /// Relative share of flows carrying this label.
    pub weight: f64,
}

impl AppProfile {
    pub fn new(label: &str, proto: TransportProto, ports: &[u16], weight: f64) -> Self {
        Self {
            label: AppLabel::new(label).expect("built-in label"),
            proto,
            ports: ports.to_vec(),
            weight,
        }
    }

    pub fn default_set() -> Vec<AppProfile> {
        use TransportProto::{Tcp, Udp};
        vec![
            Self::new("http", Tcp, &[80, 8080], 0.35),
            Self::new("tls", Tcp, &[443], 0.25),
            Self::new("dns", Udp, &[53], 0.10),
            Self::new("ssh", Tcp, &[22], 0.05),
            Self::new("smtp", Tcp, &[25], 0.05),
            Self::new("bittorrent", Tcp, &[6881], 0.08),
            Self::new("sip", Udp, &[5060], 0.04),
            Self::new("p2p", Tcp, &[], 0.08),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_flows: usize,
    /// Zipf exponent of flow popularity.
    pub alpha: f64,
    pub n_connections: usize,
    /// Mean packets per connection (geometric, at least 1).
    pub packets_per_connection: f64,
    /// Probability that a connection re-references a recently used flow.
    pub correlation_p: f64,
    /// Number of recent distinct flows eligible for re-reference.
    pub window: usize,
    pub seed: u64,
    pub label_map: Vec<AppProfile>,
    /// Attach payload bytes; otherwise the trace is header-only.
    pub payloads: bool,
    /// Mean gap between connection starts, seconds.
    pub mean_connection_gap: f64,
    /// Mean gap between packets of a connection, seconds.
    pub mean_packet_gap: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_flows: 10_000,
            alpha: 1.0,
            n_connections: 100_000,
            packets_per_connection: 10.0,
            correlation_p: 0.0,
            window: 256,
            seed: 1,
            label_map: AppProfile::default_set(),
            payloads: false,
            mean_connection_gap: 0.001,
            mean_packet_gap: 0.010,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidConfig(m.to_string()));
        if self.n_flows == 0 {
            return bad("n_flows must be at least 1");
        }
        if self.n_flows > (1 << 22) {
            return bad("n_flows must be at most 4194304");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.correlation_p) {
            return bad("correlation_p must be in [0, 1)");
        }
        if !(self.packets_per_connection.is_finite() && self.packets_per_connection >= 1.0) {
            return bad("packets_per_connection must be >= 1");
        }
        if self.correlation_p > 0.0 && self.window == 0 {
            return bad("window must be at least 1 when correlation_p > 0");
        }
        if self.label_map.is_empty() {
            return bad("label_map must not be empty");
        }
        if self
            .label_map
            .iter()
            .any(|p| !(p.weight.is_finite() && p.weight >= 0.0))
            || self.label_map.iter().all(|p| p.weight == 0.0)
        {
            return bad("label_map weights must be >= 0 and not all zero");
        }
        for gap in [self.mean_connection_gap, self.mean_packet_gap] {
            if !(gap.is_finite() && gap > 0.0) {
                return bad("mean gaps must be > 0");
            }
        }
        if self.n_connections as u64 >= u64::from(CLIENT_PORTS) * (1 << 24) {
            return bad("n_connections too large for the client address plan");
        }
        Ok(())
    }
}

/// A server endpoint of the generated trace and its ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFlow {
    pub key: AggregateFlowKey,
    pub label: AppLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    pub records: Vec<PacketRecord>,
    /// Flow referenced by each connection, in connection start order.
    pub references: Vec<AggregateFlowKey>,
    pub flows: Vec<SyntheticFlow>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn make_flows(config: &SyntheticConfig) -> Vec<SyntheticFlow> {
    let mut rng = rng_stream(config.seed, STREAM_FLOWS);
    let total: f64 = config.label_map.iter().map(|p| p.weight).sum();
    (0..config.n_flows)
        .map(|i| {
            let mut x = rng.random::<f64>() * total;
            let profile = config
                .label_map
                .iter()
                .find(|p| {
                    x -= p.weight;
                    x < 0.0 && p.weight > 0.0
                })
                .unwrap_or_else(|| {
                    config
                        .label_map
                        .iter()
                        .rev()
                        .find(|p| p.weight > 0.0)
                        .expect("validated")
                });
            let port = if profile.ports.is_empty() {
                rng.random_range(10_000..30_000)
            } else {
                profile.ports[rng.random_range(0..profile.ports.len())]
            };
            let ip = Ipv4Addr::from(SERVER_BASE + 1 + i as u32);
            SyntheticFlow {
                key: AggregateFlowKey::new(Endpoint::new(ip, port, profile.proto)),
                label: profile.label.clone(),
            }
        })
        .collect()
}

/// Flow index (0 = most popular) referenced by each connection.
fn reference_indices(config: &SyntheticConfig) -> Vec<usize> {
    let mut rng = rng_stream(config.seed, STREAM_REFS);
    let zipf = Zipf::new(config.n_flows as f64, config.alpha).expect("validated");
    let mut recent: VecDeque<usize> = VecDeque::with_capacity(config.window + 1);
    let mut out = Vec::with_capacity(config.n_connections);
    for _ in 0..config.n_connections {
        let idx = if config.correlation_p > 0.0 && !recent.is_empty() && rng.random_bool(config.correlation_p) {
            recent[rng.random_range(0..recent.len())]
        } else {
            (zipf.sample(&mut rng) as usize).clamp(1, config.n_flows) - 1
        };
        if config.window > 0 {
            if let Some(pos) = recent.iter().position(|&f| f == idx) {
                recent.remove(pos);
            } else if recent.len() == config.window {
                recent.pop_back();
            }
            recent.push_front(idx);
        }
        out.push(idx);
    }
    out
}

/// Per-connection flow references only, identical to
/// `generate_synthetic(config).references` but without building packets.
pub fn generate_reference_keys(config: &SyntheticConfig) -> Result<Vec<AggregateFlowKey>, TraceError> {
    config.validate()?;
    let flows = make_flows(config);
    Ok(reference_indices(config).into_iter().map(|i| flows[i].key).collect())
}

struct Templates;

impl Templates {
    fn request(label: &str) -> Option<&'static [u8]> {
        Some(match label {
            "http" => b"GET /index.html HTTP/1.1\r\nHost: www.example.com\r\nUser-Agent: curl/7.19\r\nAccept: */*\r\n\r\n",
            "tls" => b"\x16\x03\x01\x00\xa5\x01\x00\x00\xa1\x03\x03\x4b\x3d\x9a\x00\x11\x22\x33\x44\x55\x66\x77\x88\x99\xaa\xbb\xcc\xdd\xee\xff\x00\x00\x20\xc0\x2b\xc0\x2f",
            "dns" => b"\x1a\x2b\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x03www\x07example\x03com\x00\x00\x01\x00\x01",
            "ssh" => b"SSH-2.0-OpenSSH_5.3\r\n",
            "smtp" => b"EHLO client.example.org\r\n",
            "bittorrent" => b"\x13BitTorrent protocol\x00\x00\x00\x00\x00\x10\x00\x05",
            "sip" => b"INVITE sip:bob@example.com SIP/2.0\r\nVia: SIP/2.0/UDP 10.0.0.1:5060\r\nCSeq: 1 INVITE\r\n\r\n",
            "p2p" => b"\xe3\x1a\x00\x00\x00\x01\x10\x6a\x2f\x0c\x91\x4e\x0e\x6f\xd2\x58\x77\x3b\x40\x08\x55\xe1\x00\x00\x00\x00\x36\x12",
            _ => return None,
        })
    }

    fn response(label: &str) -> Option<&'static [u8]> {
        Some(match label {
            "http" => b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: 1024\r\n\r\n<html>",
            "tls" => b"\x16\x03\x01\x00\x4a\x02\x00\x00\x46\x03\x01\x4b\x3d\x9a\x01",
            "dns" => b"\x1a\x2b\x81\x80\x00\x01\x00\x01\x00\x00\x00\x00\x03www\x07example\x03com\x00\x00\x01\x00\x01",
            "ssh" => b"SSH-2.0-OpenSSH_5.1p1 Debian-5\r\n",
            "smtp" => b"220 mail.example.com ESMTP Postfix\r\n",
            "bittorrent" => b"\x13BitTorrent protocol\x00\x00\x00\x00\x00\x10\x00\x05",
            "sip" => b"SIP/2.0 200 OK\r\nVia: SIP/2.0/UDP 10.0.0.1:5060\r\nCSeq: 1 INVITE\r\n\r\n",
            "p2p" => b"\xe3\x1a\x00\x00\x00\x4c\x10\x3e\x81\x27\xa0\x5b\x0e\x6f\x13\x90\x2c\x44\x61\x08\x55\xe1\x00\x00\x00\x00\x12\x36",
            _ => return None,
        })
    }
}

struct PacketBuilder<'a> {
    rng: ChaCha8Rng,
    config: &'a SyntheticConfig,
    geometric: Geometric,
    packet_gap: Exp<f64>,
}

impl PacketBuilder<'_> {
    fn random_bytes(&mut self, n: usize) -> Vec<u8> {
        let mut v = vec![0u8; n];
        self.rng.fill(&mut v[..]);
        v
    }

    /// Payload for a packet: the label template if there is one, random bytes
    /// otherwise. Returns `(payload_len, captured)`.
    fn payload(&mut self, template: Option<&'static [u8]>) -> (u32, Option<Vec<u8>>) {
        match template {
            Some(t) => (t.len() as u32, self.config.payloads.then(|| t.to_vec())),
            None => {
                let len = self.rng.random_range(64..=1460usize);
                // Drawn either way so header-only and full traces stay aligned.
                let bytes = self.random_bytes(len.min(FILLER_CAPTURE));
                (len as u32, self.config.payloads.then_some(bytes))
            }
        }
    }

    fn connection(&mut self, c: usize, start_micros: u64, flow: &SyntheticFlow, out: &mut Vec<(u64, PacketRecord)>) {
        let client = Endpoint::new(
            Ipv4Addr::from(CLIENT_BASE + 1 + (c as u32 / CLIENT_PORTS)),
            32_768 + (c as u32 % CLIENT_PORTS) as u16,
            flow.key.server.proto,
        );
        let up = FiveTuple {
            src: client,
            dst: flow.key.server,
        };
        let down = up.reversed();
        let k = 1 + self.geometric.sample(&mut self.rng) as usize;
        let label = flow.label.as_str();
        let mut t = start_micros;
        for i in 0..k {
            if i > 0 {
                t += (self.packet_gap.sample(&mut self.rng) * 1e6).round() as u64;
            }
            let (tuple, flags, template) = match flow.key.server.proto {
                TransportProto::Tcp => {
                    let closing = k >= 5 && i >= k - 2;
                    match i {
                        _ if closing && i == k - 2 => (up, TcpFlags::FIN | TcpFlags::ACK, None),
                        _ if closing => (down, TcpFlags::FIN | TcpFlags::ACK, None),
                        0 => (up, TcpFlags::SYN, None),
                        1 => (down, TcpFlags::SYN | TcpFlags::ACK, None),
                        2 => (up, TcpFlags::ACK | TcpFlags::PSH, Some(Templates::request(label))),
                        3 => (down, TcpFlags::ACK | TcpFlags::PSH, Some(Templates::response(label))),
                        _ if i % 2 == 0 => (up, TcpFlags::ACK, Some(None)),
                        _ => (down, TcpFlags::ACK, Some(None)),
                    }
                }
                TransportProto::Udp => {
                    let template = match i {
                        0 => Templates::request(label),
                        1 => Templates::response(label),
                        _ => None,
                    };
                    let dir = if i % 2 == 0 { up } else { down };
                    (dir, TcpFlags::NONE, Some(template))
                }
            };
            let mut record = PacketRecord::new(0.0, tuple, flags, 0);
            if let Some(template) = template {
                let (len, captured) = self.payload(template);
                record.payload_len = len;
                if let Some(bytes) = captured {
                    record = record.with_payload(bytes);
                }
            }
            record.truth_label = Some(flow.label.clone());
            out.push((t, record));
        }
    }
}

/// Generates a packet trace. Output depends only on `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticTrace, TraceError> {
    config.validate()?;
    let flows = make_flows(config);
    let indices = reference_indices(config);
    let invalid = |e: &dyn std::fmt::Display| TraceError::InvalidConfig(e.to_string());
    let conn_gap = Exp::new(1.0 / config.mean_connection_gap).map_err(|e| invalid(&e))?;
    let mut builder = PacketBuilder {
        rng: rng_stream(config.seed, STREAM_PACKETS),
        config,
        geometric: Geometric::new(1.0 / config.packets_per_connection).map_err(|e| invalid(&e))?,
        packet_gap: Exp::new(1.0 / config.mean_packet_gap).map_err(|e| invalid(&e))?,
    };
    let mut timed = Vec::new();
    let mut start = EPOCH_MICROS;
    for (c, &idx) in indices.iter().enumerate() {
        if c > 0 {
            start += (conn_gap.sample(&mut builder.rng) * 1e6).round() as u64;
        }
        builder.connection(c, start, &flows[idx], &mut timed);
    }
    timed.sort_by_key(|(t, _)| *t);
    let records = timed
        .into_iter()
        .map(|(t, mut r)| {
            r.ts = t as f64 / 1e6;
            r
        })
        .collect();
    Ok(SyntheticTrace {
        records,
        references: indices.into_iter().map(|i| flows[i].key).collect(),
        flows,
    })
}
