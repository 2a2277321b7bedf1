use proptest::prelude::*;
use sfc_core::dataplane::nsh::{NshHeader, ParseErrorKind, MAX_SPI, NSH_LEN};

fn unhex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

#[test]
fn golden_vectors() {
    let text = include_str!("fixtures/nsh_vectors.txt");
    let mut n = 0;
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
    {
        let f: Vec<&str> = line.split_whitespace().collect();
        let h = NshHeader {
            spi: f[0].parse().unwrap(),
            si: f[1].parse().unwrap(),
            flow_hash: u64::from_str_radix(f[2], 16).unwrap(),
            ttl: f[3].parse().unwrap(),
            o_bit: f[4] == "1",
            unassigned: f[5] == "1",
            next_protocol: f[6].parse().unwrap(),
        };
        let bytes = unhex(f[7]);
        assert_eq!(h.encode().to_vec(), bytes, "encode {line}");
        assert_eq!(NshHeader::decode(&bytes).unwrap(), h, "decode {line}");
        n += 1;
    }
    assert_eq!(n, 6);
}

#[test]
fn truncation_reports_offset_inside_buffer() {
    let bytes = NshHeader::new(5, 2, 99).encode();
    for len in 0..NSH_LEN {
        let err = NshHeader::decode(&bytes[..len]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Truncated, "len {len}");
        assert!(err.offset <= len);
    }
}

fn header() -> impl Strategy<Value = NshHeader> {
    (
        any::<bool>(),
        any::<bool>(),
        0u8..=0x3F,
        any::<u8>(),
        0u32..=MAX_SPI,
        any::<u8>(),
        any::<u64>(),
    )
        .prop_map(
            |(o_bit, unassigned, ttl, next_protocol, spi, si, flow_hash)| NshHeader {
                o_bit,
                unassigned,
                ttl,
                next_protocol,
                spi,
                si,
                flow_hash,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn decode_inverts_encode(h in header()) {
        prop_assert_eq!(NshHeader::decode(&h.encode()).unwrap(), h);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn any_single_bit_flip_is_visible(h in header(), bit in 0usize..NSH_LEN * 8) {
        let mut bytes = h.encode();
        bytes[bit / 8] ^= 0x80 >> (bit % 8);
        if let Ok(other) = NshHeader::decode(&bytes) {
            prop_assert_ne!(other, h);
        }
    }
}
