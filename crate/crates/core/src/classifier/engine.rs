//! Identification engines and their work-unit cost model.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use regex::bytes::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{AggregateFlowKey, AppLabel, IdentificationResult, PacketRecord, TransportProto};

/// Payload bytes per packet the signature engine inspects.
pub const SCAN_BYTES: usize = 256;
/// Payload-bearing packets per connection before the signature engine gives up.
pub const MAX_INSPECTED_PACKETS: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(
        "packet at ts {ts} has payload_len {len} but no captured payload; the signature engine needs payload bytes"
    )]
    MissingPayload { ts: String, len: u32 },
    #[error("packet at ts {0} has no truth label; the oracle engine needs labeled traces")]
    MissingTruthLabel(String),
    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },
}

/// Per-connection engine state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineContext {
    pub key: AggregateFlowKey,
    /// Packets fed to the engine.
    pub packets: u32,
    /// Packets that carried payload.
    pub payload_packets: u32,
}

impl EngineContext {
    pub fn new(key: AggregateFlowKey) -> Self {
        Self {
            key,
            packets: 0,
            payload_packets: 0,
        }
    }
}

pub trait Engine: Send + Sync {
    fn name(&self) -> &'static str;

    /// Inspects one packet of a connection. A result is final; the caller
    /// must not feed the connection again afterwards.
    fn identify(
        &self,
        ctx: &mut EngineContext,
        packet: &PacketRecord,
    ) -> Result<Option<IdentificationResult>, EngineError>;

    /// Work units spent inspecting `packet`.
    fn cost(&self, packet: &PacketRecord) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Oracle,
    Ports,
    Signature,
}

impl EngineKind {
    pub const fn as_str(self) -> &'static str {
        match self {
            EngineKind::Oracle => "oracle",
            EngineKind::Ports => "ports",
            EngineKind::Signature => "signature",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(EngineKind::Oracle),
            "ports" | "port-table" => Ok(EngineKind::Ports),
            "signature" => Ok(EngineKind::Signature),
            other => Err(format!("unknown engine {other:?} (oracle|ports|signature)")),
        }
    }
}

/// Returns the trace's truth label on the first packet.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEngine;

impl Engine for OracleEngine {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn identify(
        &self,
        ctx: &mut EngineContext,
        packet: &PacketRecord,
    ) -> Result<Option<IdentificationResult>, EngineError> {
        ctx.packets += 1;
        let label = packet
            .truth_label
            .clone()
            .ok_or_else(|| EngineError::MissingTruthLabel(format!("{:.6}", packet.ts)))?;
        Ok(Some(IdentificationResult::new(label, true, 1.0)))
    }

    fn cost(&self, _packet: &PacketRecord) -> u64 {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortEntry {
    pub label: AppLabel,
    pub cacheable: bool,
}

/// Maps the server endpoint's `(proto, port)` to a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortTableEngine {
    table: HashMap<(TransportProto, u16), PortEntry>,
}

impl PortTableEngine {
    pub const DEFAULT_TABLE: &'static str = "\
# proto,port,label,cacheable
tcp,20,ftp-data,false
tcp,21,ftp,true
tcp,22,ssh,true
tcp,25,smtp,true
udp,53,dns,true
tcp,53,dns,true
tcp,80,http,true
tcp,110,pop3,true
tcp,143,imap,true
tcp,443,tls,true
tcp,993,imaps,true
udp,5060,sip,true
tcp,6881,bittorrent,true
tcp,8080,http,true
";

    pub fn new(table: HashMap<(TransportProto, u16), PortEntry>) -> Self {
        Self { table }
    }

    /// Parses `proto,port,label,cacheable` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let mut table = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| EngineError::Config { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [proto, port, label, cacheable] = fields[..] else {
                return Err(err(format!("expected proto,port,label,cacheable, got {line:?}")));
            };
            let proto: TransportProto = proto.parse().map_err(|e| err(format!("{e}")))?;
            let port: u16 = port.parse().map_err(|_| err(format!("bad port {port:?}")))?;
            let label = AppLabel::new(label).map_err(|e| err(e.to_string()))?;
            let cacheable = match cacheable {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => return Err(err(format!("bad cacheable flag {other:?}"))),
            };
            table.insert((proto, port), PortEntry { label, cacheable });
        }
        Ok(Self { table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Default for PortTableEngine {
    fn default() -> Self {
        Self::parse(Self::DEFAULT_TABLE).expect("built-in port table")
    }
}

impl Engine for PortTableEngine {
    fn name(&self) -> &'static str {
        "ports"
    }

    fn identify(
        &self,
        ctx: &mut EngineContext,
        _packet: &PacketRecord,
    ) -> Result<Option<IdentificationResult>, EngineError> {
        ctx.packets += 1;
        let server = ctx.key.server;
        Ok(Some(match self.table.get(&(server.proto, server.port)) {
            Some(e) => IdentificationResult::new(e.label.clone(), e.cacheable, 1.0),
            None => IdentificationResult::unknown(),
        }))
    }

    fn cost(&self, _packet: &PacketRecord) -> u64 {
        1
    }
}

#[derive(Debug, Clone)]
pub struct Signature {
    pub label: AppLabel,
    pub pattern: Regex,
}

/// Ordered payload signatures, first match wins.
#[derive(Debug, Clone)]
pub struct SignatureEngine {
    rules: Vec<Signature>,
    scan_bytes: usize,
    max_packets: u32,
}

impl SignatureEngine {
    pub const DEFAULT_RULES: &'static str = r"# label<TAB>pattern
ssh	^SSH-[12]\.[0-9]
bittorrent	^\x13BitTorrent protocol
sip	^(INVITE|REGISTER|BYE|CANCEL|ACK) sip:|^SIP/2\.0 [0-9]{3}
http	^(GET|POST|HEAD|PUT|DELETE|OPTIONS) .*HTTP/1\.|^HTTP/1\.[01] [0-9]{3}
smtp	^220[ -].*SMTP|^(EHLO|HELO)
tls	^\x16\x03[\x00-\x03]..[\x01\x02]
dns	^..[\x00\x01\x80\x81][\x00\x80]\x00\x01\x00[\x00\x01]
p2p	^[\xe3\xc5]....[\x01\x4c]
";

    pub fn compile(label: AppLabel, pattern: &str) -> Result<Signature, regex::Error> {
        let pattern = RegexBuilder::new(pattern)
            .unicode(false)
            .dot_matches_new_line(true)
            .build()?;
        Ok(Signature { label, pattern })
    }

    /// Parses `label<TAB>pattern` lines; lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let err = |msg: String| EngineError::Config { line: i + 1, msg };
            let Some((label, pattern)) = raw.split_once('\t') else {
                return Err(err("expected label<TAB>pattern".to_string()));
            };
            let label = AppLabel::new(label.trim()).map_err(|e| err(e.to_string()))?;
            let rule = Self::compile(label, pattern).map_err(|e| err(e.to_string()))?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn new(rules: Vec<Signature>) -> Self {
        Self {
            rules,
            scan_bytes: SCAN_BYTES,
            max_packets: MAX_INSPECTED_PACKETS,
        }
    }

    pub fn with_limits(mut self, scan_bytes: usize, max_packets: u32) -> Self {
        self.scan_bytes = scan_bytes;
        self.max_packets = max_packets.max(1);
        self
    }

    pub fn rules(&self) -> &[Signature] {
        &self.rules
    }
}

impl Default for SignatureEngine {
    fn default() -> Self {
        Self::parse(Self::DEFAULT_RULES).expect("built-in signatures")
    }
}

impl Engine for SignatureEngine {
    fn name(&self) -> &'static str {
        "signature"
    }

    fn identify(
        &self,
        ctx: &mut EngineContext,
        packet: &PacketRecord,
    ) -> Result<Option<IdentificationResult>, EngineError> {
        ctx.packets += 1;
        if packet.payload_len == 0 {
            return Ok(None);
        }
        let Some(payload) = packet.payload.as_deref() else {
            return Err(EngineError::MissingPayload {
                ts: format!("{:.6}", packet.ts),
                len: packet.payload_len,
            });
        };
        ctx.payload_packets += 1;
        let window = &payload[..payload.len().min(self.scan_bytes)];
        if let Some(rule) = self.rules.iter().find(|r| r.pattern.is_match(window)) {
            return Ok(Some(IdentificationResult::new(rule.label.clone(), true, 1.0)));
        }
        if ctx.payload_packets >= self.max_packets {
            return Ok(Some(IdentificationResult::unknown()));
        }
        Ok(None)
    }

    fn cost(&self, packet: &PacketRecord) -> u64 {
        packet.payload_bytes().len().min(self.scan_bytes) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FiveTuple, TcpFlags};
    use std::net::Ipv4Addr;

    fn packet(proto: TransportProto, dport: u16, payload: &[u8]) -> PacketRecord {
        PacketRecord::new(
            1.0,
            FiveTuple::new(
                Ipv4Addr::new(10, 0, 0, 1),
                40000,
                Ipv4Addr::new(1, 2, 3, 4),
                dport,
                proto,
            ),
            TcpFlags::ACK,
            payload.len() as u32,
        )
        .with_payload(payload.to_vec())
    }

    fn ctx(p: &PacketRecord) -> EngineContext {
        EngineContext::new(AggregateFlowKey::new(p.tuple.dst))
    }

    #[test]
    fn port_table_dns() {
        let p = packet(TransportProto::Udp, 53, b"");
        let r = PortTableEngine::default().identify(&mut ctx(&p), &p).unwrap().unwrap();
        assert_eq!(r.label.as_str(), "dns");
        assert!(r.cacheable);
    }

    #[test]
    fn port_table_dynamic_and_unknown() {
        let eng = PortTableEngine::default();
        let p = packet(TransportProto::Tcp, 20, b"");
        let r = eng.identify(&mut ctx(&p), &p).unwrap().unwrap();
        assert_eq!(r.label.as_str(), "ftp-data");
        assert!(!r.cacheable);
        let p = packet(TransportProto::Tcp, 12345, b"");
        let r = eng.identify(&mut ctx(&p), &p).unwrap().unwrap();
        assert!(r.label.is_unknown());
        assert!(!r.cacheable);
    }

    #[test]
    fn port_table_parse_errors() {
        assert!(matches!(
            PortTableEngine::parse("tcp,80,http\n"),
            Err(EngineError::Config { line: 1, .. })
        ));
        assert!(matches!(
            PortTableEngine::parse("# c\nicmp,0,x,true\n"),
            Err(EngineError::Config { line: 2, .. })
        ));
        assert_eq!(PortTableEngine::parse("udp,53,dns,true # dns\n").unwrap().len(), 1);
    }

    #[test]
    fn signature_http() {
        let eng = SignatureEngine::new(vec![SignatureEngine::compile(
            AppLabel::new("http").unwrap(),
            r"^(GET|POST).*HTTP/1\.",
        )
        .unwrap()]);
        let p = packet(TransportProto::Tcp, 80, b"GET / HTTP/1.1\r\nHost: x\r\n\r\n");
        let r = eng.identify(&mut ctx(&p), &p).unwrap().unwrap();
        assert_eq!(r.label.as_str(), "http");
        assert_eq!(eng.cost(&p), p.payload_len as u64);
    }

    #[test]
    fn default_signatures_match_synthetic_templates() {
        let eng = SignatureEngine::default();
        let cases: [(&[u8], &str); 7] = [
            (b"SSH-2.0-OpenSSH_5.3\r\n", "ssh"),
            (b"\x13BitTorrent protocol\x00\x00", "bittorrent"),
            (b"INVITE sip:bob@example.com SIP/2.0\r\n", "sip"),
            (b"HTTP/1.1 200 OK\r\n", "http"),
            (b"220 mail.example.com ESMTP Postfix\r\n", "smtp"),
            (b"\x16\x03\x01\x00\xa5\x01\x00\x00\xa1\x03\x03", "tls"),
            (b"\x1a\x2b\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x03www", "dns"),
        ];
        for (payload, want) in cases {
            let p = packet(TransportProto::Tcp, 1, payload);
            let r = eng.identify(&mut ctx(&p), &p).unwrap().unwrap();
            assert_eq!(r.label.as_str(), want, "{payload:?}");
        }
    }

    #[test]
    fn signature_gives_up_after_payload_packets() {
        let eng = SignatureEngine::default().with_limits(SCAN_BYTES, 3);
        let p = packet(TransportProto::Tcp, 9999, b"\xde\xad\xbe\xef");
        let empty = packet(TransportProto::Tcp, 9999, b"");
        let mut c = ctx(&p);
        assert_eq!(eng.identify(&mut c, &empty).unwrap(), None);
        assert_eq!(eng.identify(&mut c, &p).unwrap(), None);
        assert_eq!(eng.identify(&mut c, &p).unwrap(), None);
        let r = eng.identify(&mut c, &p).unwrap().unwrap();
        assert!(r.label.is_unknown());
        assert_eq!(c.packets, 4);
        assert_eq!(c.payload_packets, 3);
    }

    #[test]
    fn signature_scans_bounded_prefix() {
        let eng = SignatureEngine::parse("x\tneedle\n").unwrap();
        let mut payload = vec![b'a'; 300];
        payload[280..286].copy_from_slice(b"needle");
        let p = packet(TransportProto::Tcp, 1, &payload);
        assert_eq!(eng.identify(&mut ctx(&p), &p).unwrap(), None);
        assert_eq!(eng.cost(&p), SCAN_BYTES as u64);
    }

    #[test]
    fn signature_requires_payload() {
        let p = PacketRecord::new(
            2.0,
            FiveTuple::new(
                Ipv4Addr::new(10, 0, 0, 1),
                1,
                Ipv4Addr::new(1, 1, 1, 1),
                80,
                TransportProto::Tcp,
            ),
            TcpFlags::ACK,
            100,
        );
        let err = SignatureEngine::default().identify(&mut ctx(&p), &p).unwrap_err();
        assert!(matches!(err, EngineError::MissingPayload { len: 100, .. }));
    }

    #[test]
    fn signature_parse_errors() {
        assert!(matches!(
            SignatureEngine::parse("http GET"),
            Err(EngineError::Config { line: 1, .. })
        ));
        assert!(matches!(
            SignatureEngine::parse("http\t(unclosed"),
            Err(EngineError::Config { line: 1, .. })
        ));
    }

    #[test]
    fn oracle_passes_truth() {
        let p = packet(TransportProto::Tcp, 6881, b"").with_label(AppLabel::new("bittorrent").unwrap());
        let r = OracleEngine.identify(&mut ctx(&p), &p).unwrap().unwrap();
        assert_eq!(r.label.as_str(), "bittorrent");
        assert!(r.cacheable);
        let bare = packet(TransportProto::Tcp, 6881, b"");
        assert!(OracleEngine.identify(&mut ctx(&bare), &bare).is_err());
    }
}
