//! Classic libpcap files, Ethernet link type only.
//!
//! Reading accepts microsecond (`a1b2c3d4`) and nanosecond (`a1b23c4d`)
//! magics in either byte order. Writing produces Ethernet/IPv4/{TCP,UDP}
//! frames whose captured payload is the record's `payload` and whose IP total
//! length reflects `payload_len`.

use std::io::{self, Read, Write};
use std::net::Ipv4Addr;

use super::{order_records, IngestStats, Trace, TraceError};
use crate::flow::{FiveTuple, PacketRecord, TcpFlags, TransportProto};

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETH_LEN: usize = 14;
const IPV4_LEN: usize = 20;
const TCP_LEN: usize = 20;
const UDP_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapFormat {
    pub big_endian: bool,
    pub nanos: bool,
    pub snaplen: u32,
}

impl Default for PcapFormat {
    fn default() -> Self {
        Self {
            big_endian: false,
            nanos: false,
            snaplen: 65535,
        }
    }
}

#[derive(Clone, Copy)]
struct Endian {
    big: bool,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        if self.big {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        }
    }

    fn put_u32(self, v: u32) -> [u8; 4] {
        if self.big {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    }

    fn put_u16(self, v: u16) -> [u8; 2] {
        if self.big {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    }
}

/// Fills `buf` completely; `Ok(false)` on a clean EOF before the first byte.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

enum Parsed {
    Record(PacketRecord),
    NonIpv4,
    UnsupportedProto,
    Truncated,
    Fragment,
}

fn parse_frame(ts: f64, frame: &[u8]) -> Parsed {
    if frame.len() < ETH_LEN {
        return Parsed::Truncated;
    }
    if u16::from_be_bytes([frame[12], frame[13]]) != ETHERTYPE_IPV4 {
        return Parsed::NonIpv4;
    }
    let ip = &frame[ETH_LEN..];
    if ip.is_empty() {
        return Parsed::Truncated;
    }
    if ip[0] >> 4 != 4 {
        return Parsed::NonIpv4;
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < IPV4_LEN || ip.len() < ihl {
        return Parsed::Truncated;
    }
    let total_len = usize::from(u16::from_be_bytes([ip[2], ip[3]]));
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    if frag & 0x3fff != 0 {
        // More-fragments set or nonzero offset.
        return Parsed::Fragment;
    }
    let Ok(proto) = TransportProto::from_ip_number(ip[9]) else {
        return Parsed::UnsupportedProto;
    };
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    // Ethernet trailers are not part of the datagram.
    let captured_ip = &ip[..ip.len().min(total_len.max(ihl))];
    let l4 = &captured_ip[ihl..];
    let (sport, dport, flags, thl) = match proto {
        TransportProto::Tcp => {
            if l4.len() < TCP_LEN {
                return Parsed::Truncated;
            }
            let thl = usize::from(l4[12] >> 4) * 4;
            if thl < TCP_LEN || l4.len() < thl {
                return Parsed::Truncated;
            }
            (
                u16::from_be_bytes([l4[0], l4[1]]),
                u16::from_be_bytes([l4[2], l4[3]]),
                TcpFlags(l4[13]),
                thl,
            )
        }
        TransportProto::Udp => {
            if l4.len() < UDP_LEN {
                return Parsed::Truncated;
            }
            (
                u16::from_be_bytes([l4[0], l4[1]]),
                u16::from_be_bytes([l4[2], l4[3]]),
                TcpFlags::NONE,
                UDP_LEN,
            )
        }
    };
    let Some(payload_len) = total_len.checked_sub(ihl + thl) else {
        return Parsed::Truncated;
    };
    let tuple = FiveTuple::new(src, sport, dst, dport, proto);
    let record = PacketRecord::new(ts, tuple, flags, payload_len as u32).with_payload(l4[thl..].to_vec());
    Parsed::Record(record)
}

/// Parses a pcap stream into records, counting skipped packets by reason.
pub fn read_pcap<R: Read>(mut reader: R) -> Result<Trace, TraceError> {
    let mut header = [0u8; 24];
    let mut got = 0;
    while got < header.len() {
        match reader.read(&mut header[got..])? {
            0 => break,
            n => got += n,
        }
    }
    if got < 4 {
        return Err(TraceError::TruncatedHeader);
    }
    let magic = [header[0], header[1], header[2], header[3]];
    let (endian, nanos) = match (u32::from_le_bytes(magic), u32::from_be_bytes(magic)) {
        (MAGIC_MICROS, _) => (Endian { big: false }, false),
        (MAGIC_NANOS, _) => (Endian { big: false }, true),
        (_, MAGIC_MICROS) => (Endian { big: true }, false),
        (_, MAGIC_NANOS) => (Endian { big: true }, true),
        _ => return Err(TraceError::BadMagic(magic)),
    };
    if got < header.len() {
        return Err(TraceError::TruncatedHeader);
    }
    let linktype = endian.u32(&header[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(TraceError::UnsupportedLinkType(linktype));
    }

    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut rec_hdr = [0u8; 16];
    let mut frame = Vec::new();
    loop {
        match read_full(&mut reader, &mut rec_hdr) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                stats.skipped_truncated += 1;
                break;
            }
            Err(e) => return Err(e.into()),
        }
        let sec = endian.u32(&rec_hdr[0..4]);
        let frac = endian.u32(&rec_hdr[4..8]);
        let incl = endian.u32(&rec_hdr[8..12]) as usize;
        frame.resize(incl, 0);
        match read_full(&mut reader, &mut frame) {
            Ok(true) => {}
            Ok(false) if incl == 0 => {}
            Ok(false) | Err(_) => {
                stats.packets_read += 1;
                stats.skipped_truncated += 1;
                break;
            }
        }
        stats.packets_read += 1;
        let scale: u64 = if nanos { 1_000_000_000 } else { 1_000_000 };
        let ts = (u64::from(sec) * scale + u64::from(frac)) as f64 / scale as f64;
        match parse_frame(ts, &frame) {
            Parsed::Record(r) => records.push(r),
            Parsed::NonIpv4 => stats.skipped_non_ipv4 += 1,
            Parsed::UnsupportedProto => stats.skipped_unsupported_proto += 1,
            Parsed::Truncated => stats.skipped_truncated += 1,
            Parsed::Fragment => stats.skipped_fragment += 1,
        }
    }
    stats.reordered = order_records(&mut records)?;
    stats.records = records.len() as u64;
    Ok(Trace { records, stats })
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Builds the Ethernet frame for one record; returns `(frame, original length)`.
fn build_frame(r: &PacketRecord) -> (Vec<u8>, usize) {
    let payload = r.payload_bytes();
    let thl = match r.proto() {
        TransportProto::Tcp => TCP_LEN,
        TransportProto::Udp => UDP_LEN,
    };
    let ip_total = IPV4_LEN + thl + r.payload_len as usize;
    let mut f = Vec::with_capacity(ETH_LEN + IPV4_LEN + thl + payload.len());
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01]);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let mut ip = [0u8; IPV4_LEN];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&(ip_total.min(usize::from(u16::MAX)) as u16).to_be_bytes());
    ip[6] = 0x40; // don't fragment
    ip[8] = 64;
    ip[9] = r.proto().ip_number();
    ip[12..16].copy_from_slice(&r.tuple.src.ip.octets());
    ip[16..20].copy_from_slice(&r.tuple.dst.ip.octets());
    let csum = ipv4_checksum(&ip);
    ip[10..12].copy_from_slice(&csum.to_be_bytes());
    f.extend_from_slice(&ip);

    f.extend_from_slice(&r.tuple.src.port.to_be_bytes());
    f.extend_from_slice(&r.tuple.dst.port.to_be_bytes());
    match r.proto() {
        TransportProto::Tcp => {
            f.extend_from_slice(&[0; 8]); // seq, ack
            f.push(0x50);
            f.push(r.tcp_flags.0);
            f.extend_from_slice(&0xffffu16.to_be_bytes());
            f.extend_from_slice(&[0; 4]); // checksum, urgent
        }
        TransportProto::Udp => {
            let len = (UDP_LEN + r.payload_len as usize).min(usize::from(u16::MAX)) as u16;
            f.extend_from_slice(&len.to_be_bytes());
            f.extend_from_slice(&[0; 2]);
        }
    }
    f.extend_from_slice(payload);
    (f, ETH_LEN + ip_total)
}

/// Writes records as a pcap stream. Truth labels are not representable and
/// are dropped; timestamps are rounded to the format's resolution.
pub fn write_pcap<W: Write>(mut writer: W, records: &[PacketRecord], format: PcapFormat) -> Result<(), TraceError> {
    let e = Endian { big: format.big_endian };
    let magic = if format.nanos { MAGIC_NANOS } else { MAGIC_MICROS };
    writer.write_all(&e.put_u32(magic))?;
    writer.write_all(&e.put_u16(2))?;
    writer.write_all(&e.put_u16(4))?;
    writer.write_all(&e.put_u32(0))?; // thiszone
    writer.write_all(&e.put_u32(0))?; // sigfigs
    writer.write_all(&e.put_u32(format.snaplen))?;
    writer.write_all(&e.put_u32(LINKTYPE_ETHERNET))?;

    let scale: u64 = if format.nanos { 1_000_000_000 } else { 1_000_000 };
    for r in records {
        let (frame, orig_len) = build_frame(r);
        let incl = frame.len().min(format.snaplen as usize);
        let ticks = (r.ts * scale as f64).round() as u64;
        writer.write_all(&e.put_u32((ticks / scale) as u32))?;
        writer.write_all(&e.put_u32((ticks % scale) as u32))?;
        writer.write_all(&e.put_u32(incl as u32))?;
        writer.write_all(&e.put_u32(orig_len as u32))?;
        writer.write_all(&frame[..incl])?;
    }
    writer.flush()?;
    Ok(())
}
