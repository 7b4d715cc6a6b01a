//! Packets, connections and aggregate-flow keys.
//!
//! An aggregate-flow is the set of connections that share a server endpoint
//! `(server ip, server port, transport protocol)`. Everything downstream
//! (filter, cache, classifier, locality analysis) is keyed on
//! [`AggregateFlowKey`].

use std::collections::HashSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("unsupported IP protocol {0}")]
    UnsupportedProtocol(u8),
    #[error("unsupported transport protocol {0:?}")]
    UnknownProtocolName(String),
    #[error("invalid application label {0:?}")]
    InvalidLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportProto {
    Tcp,
    Udp,
}

impl TransportProto {
    pub const fn ip_number(self) -> u8 {
        match self {
            TransportProto::Tcp => 6,
            TransportProto::Udp => 17,
        }
    }

    pub fn from_ip_number(proto: u8) -> Result<Self, FlowError> {
        match proto {
            6 => Ok(TransportProto::Tcp),
            17 => Ok(TransportProto::Udp),
            other => Err(FlowError::UnsupportedProtocol(other)),
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            TransportProto::Tcp => "tcp",
            TransportProto::Udp => "udp",
        }
    }
}

impl fmt::Display for TransportProto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportProto {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(TransportProto::Tcp),
            "udp" => Ok(TransportProto::Udp),
            _ => Err(FlowError::UnknownProtocolName(s.to_string())),
        }
    }
}

/// One side of a connection. Ordering is `(ip, port, proto)`, which is also
/// the byte order of the serialized key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub proto: TransportProto,
}

impl Endpoint {
    pub const fn new(ip: Ipv4Addr, port: u16, proto: TransportProto) -> Self {
        Self { ip, port, proto }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}/{}", self.ip, self.port, self.proto)
    }
}

/// Identity of an aggregate-flow: the server endpoint shared by its connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AggregateFlowKey {
    pub server: Endpoint,
}

impl AggregateFlowKey {
    pub const fn new(server: Endpoint) -> Self {
        Self { server }
    }

    /// Packs the key into 56 bits: `ip << 24 | port << 8 | proto`.
    pub fn to_u64(&self) -> u64 {
        (u64::from(u32::from(self.server.ip)) << 24)
            | (u64::from(self.server.port) << 8)
            | u64::from(self.server.proto.ip_number())
    }
}

impl fmt::Display for AggregateFlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.server.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src: Endpoint,
    pub dst: Endpoint,
}

impl FiveTuple {
    pub fn new(src_ip: Ipv4Addr, src_port: u16, dst_ip: Ipv4Addr, dst_port: u16, proto: TransportProto) -> Self {
        Self {
            src: Endpoint::new(src_ip, src_port, proto),
            dst: Endpoint::new(dst_ip, dst_port, proto),
        }
    }

    pub fn proto(&self) -> TransportProto {
        self.src.proto
    }

    pub fn reversed(&self) -> Self {
        Self {
            src: self.dst,
            dst: self.src,
        }
    }

    /// Direction-independent form: the endpoint with the smaller `(ip, port)`
    /// comes first.
    pub fn canonical(&self) -> Self {
        if (self.src.ip, self.src.port) <= (self.dst.ip, self.dst.port) {
            *self
        } else {
            self.reversed()
        }
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}:{}/{}",
            self.src.ip,
            self.src.port,
            self.dst.ip,
            self.dst.port,
            self.proto()
        )
    }
}

pub fn canonical_tuple(tuple: FiveTuple) -> FiveTuple {
    tuple.canonical()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);

    pub const NONE: TcpFlags = TcpFlags(0);

    // Order used by the CSV `flags` column.
    const LETTERS: [(char, TcpFlags); 5] = [
        ('S', TcpFlags::SYN),
        ('A', TcpFlags::ACK),
        ('F', TcpFlags::FIN),
        ('R', TcpFlags::RST),
        ('P', TcpFlags::PSH),
    ];

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn union(self, other: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | other.0)
    }

    pub fn is_syn_only(self) -> bool {
        self.contains(TcpFlags::SYN) && !self.contains(TcpFlags::ACK)
    }

    /// Parses a subset of `SAFRP`. Returns `None` on any other character.
    pub fn from_letters(s: &str) -> Option<TcpFlags> {
        let mut flags = TcpFlags::NONE;
        for c in s.chars() {
            let (_, bit) = Self::LETTERS.iter().find(|(l, _)| *l == c)?;
            flags = flags.union(*bit);
        }
        Some(flags)
    }

    pub fn to_letters(self) -> String {
        Self::LETTERS
            .iter()
            .filter(|(_, bit)| self.contains(*bit))
            .map(|(l, _)| *l)
            .collect()
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;

    fn bitor(self, rhs: Self) -> Self::Output {
        self.union(rhs)
    }
}

/// Application label token, e.g. `http` or `dns`. `unknown` is reserved for
/// "not identified".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AppLabel(String);

impl AppLabel {
    pub const UNKNOWN: &'static str = "unknown";
    pub const MAX_LEN: usize = 32;

    pub fn new(name: impl Into<String>) -> Result<Self, FlowError> {
        let name = name.into();
        let valid = !name.is_empty()
            && name.len() <= Self::MAX_LEN
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'-' | b'_' | b'.'));
        if valid {
            Ok(Self(name))
        } else {
            Err(FlowError::InvalidLabel(name))
        }
    }

    pub fn unknown() -> Self {
        Self(Self::UNKNOWN.to_string())
    }

    pub fn is_unknown(&self) -> bool {
        self.0 == Self::UNKNOWN
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AppLabel {
    type Error = FlowError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        AppLabel::new(value)
    }
}

impl From<AppLabel> for String {
    fn from(label: AppLabel) -> Self {
        label.0
    }
}

impl FromStr for AppLabel {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AppLabel::new(s)
    }
}

impl fmt::Display for AppLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub label: AppLabel,
    pub cacheable: bool,
    pub confidence: f64,
}

impl IdentificationResult {
    /// An `unknown` label is never cacheable regardless of `cacheable`.
    pub fn new(label: AppLabel, cacheable: bool, confidence: f64) -> Self {
        let cacheable = cacheable && !label.is_unknown();
        Self {
            label,
            cacheable,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn unknown() -> Self {
        Self::new(AppLabel::unknown(), false, 0.0)
    }
}

/// One observed packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub ts: f64,
    pub tuple: FiveTuple,
    pub tcp_flags: TcpFlags,
    /// Transport payload length on the wire.
    pub payload_len: u32,
    /// Captured payload bytes, possibly truncated. Never `Some(empty)`.
    pub payload: Option<Vec<u8>>,
    pub truth_label: Option<AppLabel>,
}

impl PacketRecord {
    pub fn new(ts: f64, tuple: FiveTuple, tcp_flags: TcpFlags, payload_len: u32) -> Self {
        Self {
            ts,
            tuple,
            tcp_flags,
            payload_len,
            payload: None,
            truth_label: None,
        }
    }

    /// Attaches captured payload. `payload_len` grows to cover it if needed;
    /// an empty capture is stored as `None`.
    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        if payload.is_empty() {
            self.payload = None;
        } else {
            self.payload_len = self.payload_len.max(payload.len() as u32);
            self.payload = Some(payload);
        }
        self
    }

    pub fn with_label(mut self, label: AppLabel) -> Self {
        self.truth_label = Some(label);
        self
    }

    pub fn proto(&self) -> TransportProto {
        self.tuple.proto()
    }

    pub fn payload_bytes(&self) -> &[u8] {
        self.payload.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnState {
    Pending,
    Labeled,
    Sampled,
    /// The engine gave up; the connection keeps the `unknown` label.
    Unidentified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRecord {
    pub tuple: FiveTuple,
    pub key: AggregateFlowKey,
    pub label: Option<AppLabel>,
    pub state: ConnState,
    pub first_ts: f64,
    pub last_ts: f64,
    pub packets_seen: u64,
    pub bytes_seen: u64,
}

impl ConnectionRecord {
    pub fn new(first: &PacketRecord, key: AggregateFlowKey) -> Self {
        Self {
            tuple: first.tuple.canonical(),
            key,
            label: None,
            state: ConnState::Pending,
            first_ts: first.ts,
            last_ts: first.ts,
            packets_seen: 0,
            bytes_seen: 0,
        }
    }

    pub fn observe(&mut self, packet: &PacketRecord) {
        self.last_ts = self.last_ts.max(packet.ts);
        self.packets_seen += 1;
        self.bytes_seen += u64::from(packet.payload_len);
    }

    /// Records a final label. `unknown` moves the connection to
    /// [`ConnState::Unidentified`] so that `Labeled` always carries a valid label.
    pub fn set_label(&mut self, label: AppLabel) {
        self.state = if label.is_unknown() {
            ConnState::Unidentified
        } else {
            ConnState::Labeled
        };
        self.label = Some(label);
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self.state, ConnState::Labeled | ConnState::Unidentified)
    }
}

/// Client/server orientation rules for connections whose handshake may not
/// have been captured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionRules {
    /// Ports treated as service ports in addition to everything below 1024.
    pub well_known: HashSet<u16>,
}

impl Default for DirectionRules {
    fn default() -> Self {
        Self {
            well_known: [
                1080, 1194, 1433, 1521, 1723, 1935, 3128, 3306, 3389, 5060, 5222, 5432, 5900, 6379, 6881, 8000, 8008,
                8080, 8443, 8888, 9000, 9200, 11211, 27017,
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl DirectionRules {
    pub fn is_service_port(&self, port: u16) -> bool {
        port < 1024 || self.well_known.contains(&port)
    }

    /// Server endpoint of the connection `packet` belongs to.
    ///
    /// An existing connection keeps the key it was created with. Otherwise a
    /// SYN without ACK points at the server; failing that, if exactly one side
    /// uses a service port that side is the server; failing that, the
    /// destination of the first observed packet is.
    pub fn aggregate_key(&self, packet: &PacketRecord, prior: Option<&ConnectionRecord>) -> AggregateFlowKey {
        if let Some(conn) = prior {
            return conn.key;
        }
        let tuple = &packet.tuple;
        if packet.proto() == TransportProto::Tcp && packet.tcp_flags.is_syn_only() {
            return AggregateFlowKey::new(tuple.dst);
        }
        let src_service = self.is_service_port(tuple.src.port);
        let dst_service = self.is_service_port(tuple.dst.port);
        if src_service && !dst_service {
            return AggregateFlowKey::new(tuple.src);
        }
        AggregateFlowKey::new(tuple.dst)
    }
}

/// [`DirectionRules::aggregate_key`] with the default well-known port set.
pub fn aggregate_key(packet: &PacketRecord, prior: Option<&ConnectionRecord>) -> AggregateFlowKey {
    DirectionRules::default().aggregate_key(packet, prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn tcp(src: &str, sp: u16, dst: &str, dp: u16, flags: TcpFlags) -> PacketRecord {
        PacketRecord::new(
            0.0,
            FiveTuple::new(ip(src), sp, ip(dst), dp, TransportProto::Tcp),
            flags,
            0,
        )
    }

    #[test]
    fn syn_destination_is_server() {
        let p = tcp("10.0.0.5", 51000, "93.184.216.34", 80, TcpFlags::SYN);
        let key = aggregate_key(&p, None);
        assert_eq!(key.server, Endpoint::new(ip("93.184.216.34"), 80, TransportProto::Tcp));
    }

    #[test]
    fn first_udp_packet_destination_is_server() {
        let p = PacketRecord::new(
            0.0,
            FiveTuple::new(ip("10.0.0.5"), 53001, ip("8.8.8.8"), 53, TransportProto::Udp),
            TcpFlags::NONE,
            40,
        );
        assert_eq!(
            aggregate_key(&p, None).server,
            Endpoint::new(ip("8.8.8.8"), 53, TransportProto::Udp)
        );
    }

    #[test]
    fn mid_stream_uses_service_port() {
        let p = tcp("198.51.100.2", 443, "10.0.0.5", 50321, TcpFlags::ACK);
        assert_eq!(
            aggregate_key(&p, None).server,
            Endpoint::new(ip("198.51.100.2"), 443, TransportProto::Tcp)
        );
    }

    #[test]
    fn syn_wins_over_port_heuristic() {
        // Client on a low port connecting to a high port: the SYN decides.
        let p = tcp("10.0.0.5", 22, "10.0.0.9", 40000, TcpFlags::SYN);
        assert_eq!(aggregate_key(&p, None).server.port, 40000);
    }

    #[test]
    fn well_known_high_port_counts_as_service() {
        let p = tcp("10.0.0.9", 8080, "10.0.0.5", 45000, TcpFlags::ACK);
        assert_eq!(aggregate_key(&p, None).server.port, 8080);
        let mut rules = DirectionRules::default();
        rules.well_known.clear();
        // Both sides high and not registered: destination of the first packet.
        assert_eq!(rules.aggregate_key(&p, None).server.port, 45000);
    }

    #[test]
    fn prior_state_keeps_key() {
        let syn = tcp("10.0.0.5", 51000, "93.184.216.34", 80, TcpFlags::SYN);
        let key = aggregate_key(&syn, None);
        let conn = ConnectionRecord::new(&syn, key);
        let reply = tcp("93.184.216.34", 80, "10.0.0.5", 51000, TcpFlags::SYN | TcpFlags::ACK);
        assert_eq!(aggregate_key(&reply, Some(&conn)), key);
    }

    #[test]
    fn canonical_tuple_examples() {
        let t = |a: &str, ap: u16, b: &str, bp: u16| FiveTuple::new(ip(a), ap, ip(b), bp, TransportProto::Tcp);
        let ordered = t("10.0.0.5", 51000, "93.184.216.34", 80);
        assert_eq!(canonical_tuple(ordered), ordered);
        assert_eq!(canonical_tuple(t("93.184.216.34", 80, "10.0.0.5", 51000)), ordered);
        assert_eq!(
            canonical_tuple(t("10.0.0.5", 2, "10.0.0.5", 1)),
            t("10.0.0.5", 1, "10.0.0.5", 2)
        );
    }

    #[test]
    fn label_validation() {
        assert!(AppLabel::new("http").is_ok());
        assert!(AppLabel::new("ftp-data").is_ok());
        assert!(AppLabel::new("").is_err());
        assert!(AppLabel::new("HTTP").is_err());
        assert!(AppLabel::new("a".repeat(33)).is_err());
        assert!(AppLabel::unknown().is_unknown());
    }

    #[test]
    fn unknown_result_is_never_cacheable() {
        let r = IdentificationResult::new(AppLabel::unknown(), true, 2.0);
        assert!(!r.cacheable);
        assert_eq!(r.confidence, 1.0);
    }

    #[test]
    fn flag_letters_round_trip() {
        let f = TcpFlags::from_letters("SA").unwrap();
        assert!(f.contains(TcpFlags::SYN) && f.contains(TcpFlags::ACK));
        assert_eq!(f.to_letters(), "SA");
        assert_eq!(TcpFlags::from_letters("").unwrap(), TcpFlags::NONE);
        assert!(TcpFlags::from_letters("X").is_none());
    }

    #[test]
    fn unsupported_ip_protocol() {
        assert_eq!(
            TransportProto::from_ip_number(1),
            Err(FlowError::UnsupportedProtocol(1))
        );
        assert!("icmp".parse::<TransportProto>().is_err());
    }

    #[test]
    fn unknown_label_never_marks_labeled() {
        let syn = tcp("10.0.0.5", 51000, "93.184.216.34", 80, TcpFlags::SYN);
        let mut conn = ConnectionRecord::new(&syn, aggregate_key(&syn, None));
        conn.set_label(AppLabel::unknown());
        assert_eq!(conn.state, ConnState::Unidentified);
        conn.set_label(AppLabel::new("http").unwrap());
        assert_eq!(conn.state, ConnState::Labeled);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_tuple() -> impl Strategy<Value = FiveTuple> {
            (any::<u32>(), any::<u16>(), any::<u32>(), any::<u16>(), any::<bool>()).prop_map(|(a, ap, b, bp, udp)| {
                let proto = if udp { TransportProto::Udp } else { TransportProto::Tcp };
                FiveTuple::new(Ipv4Addr::from(a), ap, Ipv4Addr::from(b), bp, proto)
            })
        }

        proptest! {
            #[test]
            fn canonical_is_idempotent_and_direction_free(t in arb_tuple()) {
                let c = t.canonical();
                prop_assert_eq!(c.canonical(), c);
                prop_assert_eq!(t.reversed().canonical(), c);
            }

            #[test]
            fn aggregate_key_is_pure(t in arb_tuple(), flags in any::<u8>()) {
                let p = PacketRecord::new(0.0, t, TcpFlags(flags), 0);
                let rules = DirectionRules::default();
                let k = rules.aggregate_key(&p, None);
                prop_assert_eq!(k, rules.aggregate_key(&p, None));
                prop_assert!(k.server == t.src || k.server == t.dst);
            }
        }
    }
}
