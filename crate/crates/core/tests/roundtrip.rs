use std::net::Ipv4Addr;

use proptest::prelude::*;

use aflow_core::trace::{read_csv, read_pcap, write_csv, write_pcap, PcapFormat};
use aflow_core::{AppLabel, FiveTuple, PacketRecord, TcpFlags, TransportProto};

fn record() -> impl Strategy<Value = PacketRecord> {
    (
        0u64..4_000_000_000_000_000,
        any::<u32>(),
        any::<u16>(),
        any::<u32>(),
        any::<u16>(),
        any::<bool>(),
        0u8..32,
        proptest::collection::vec(any::<u8>(), 0..64),
        0u32..1400,
        proptest::option::of("[a-z]{1,8}"),
    )
        .prop_map(|(us, src, sport, dst, dport, tcp, flags, payload, extra, label)| {
            let proto = if tcp { TransportProto::Tcp } else { TransportProto::Udp };
            let tuple = FiveTuple::new(Ipv4Addr::from(src), sport, Ipv4Addr::from(dst), dport, proto);
            let flags = if tcp { TcpFlags(flags) } else { TcpFlags::NONE };
            let len = payload.len() as u32 + extra;
            let mut r = PacketRecord::new(us as f64 / 1e6, tuple, flags, len);
            r.payload = (!payload.is_empty()).then_some(payload);
            r.truth_label = label.map(|l| AppLabel::new(&l).unwrap());
            r
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_identity(mut records in proptest::collection::vec(record(), 0..40)) {
        records.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let back = read_csv(&buf[..]).unwrap();
        prop_assert_eq!(back.records, records);
    }

    #[test]
    fn pcap_identity(mut records in proptest::collection::vec(record(), 0..40), big_endian: bool, nanos: bool) {
        records.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        for r in &mut records {
            r.truth_label = None;
        }
        let mut buf = Vec::new();
        let format = PcapFormat { big_endian, nanos, ..PcapFormat::default() };
        write_pcap(&mut buf, &records, format).unwrap();
        let mut back = read_pcap(&buf[..]).unwrap().records;
        prop_assert_eq!(back.len(), records.len());
        if nanos {
            // Nanosecond ticks do not land on the same f64 as microsecond ones.
            for (b, r) in back.iter_mut().zip(&records) {
                prop_assert!((b.ts - r.ts).abs() < 1e-6);
                b.ts = r.ts;
            }
        }
        prop_assert_eq!(back, records);
    }
}
