//! NSH (MD Type 2) header codec.
//!
//! Wire layout, all fields big-endian:
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |Ver|O|U|    TTL    |   Length  |U|U|U|U|MD Type| Next Protocol |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |          Service Path Identifier (SPI)        | Service Index |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |       Metadata Class          |     Type      |U|    Length   |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                      Flow hash (64 bits)                      |
//! |                                                               |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```
//!
//! Exactly one context TLV is carried. The four reserved bits in front of
//! the MD type and the TLV's unassigned bit must be zero; anything else is
//! rejected so that every bit of an encoding is either a field or checked.

use thiserror::Error;

/// Total encoded size.
pub const NSH_LEN: usize = 20;
/// Length field value, in 4-byte words.
pub const NSH_LEN_WORDS: u8 = (NSH_LEN / 4) as u8;
pub const NSH_VERSION: u8 = 0;
pub const MD_TYPE_2: u8 = 2;
/// Experimental metadata class.
pub const FLOW_HASH_MD_CLASS: u16 = 0xFFF6;
pub const FLOW_HASH_MD_TYPE: u8 = 0x01;
pub const FLOW_HASH_MD_LEN: u8 = 8;
pub const NEXT_PROTO_IPV4: u8 = 0x01;
pub const DEFAULT_TTL: u8 = 63;
pub const MAX_SPI: u32 = (1 << 24) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NshHeader {
    pub o_bit: bool,
    pub unassigned: bool,
    /// 6 bits.
    pub ttl: u8,
    pub next_protocol: u8,
    /// 24 bits.
    pub spi: u32,
    pub si: u8,
    pub flow_hash: u64,
}

impl NshHeader {
    pub fn new(spi: u32, si: u8, flow_hash: u64) -> Self {
        NshHeader {
            o_bit: false,
            unassigned: false,
            ttl: DEFAULT_TTL,
            next_protocol: NEXT_PROTO_IPV4,
            spi,
            si,
            flow_hash,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.ttl <= 0x3F && self.spi <= MAX_SPI
    }

    /// Panics on a header with out-of-range `ttl` or `spi`.
    pub fn encode(&self) -> [u8; NSH_LEN] {
        assert!(self.is_valid(), "NSH header field out of range: {self:?}");
        let mut b = [0u8; NSH_LEN];
        let word0: u32 = (u32::from(NSH_VERSION) << 30)
            | (u32::from(self.o_bit) << 29)
            | (u32::from(self.unassigned) << 28)
            | (u32::from(self.ttl) << 22)
            | (u32::from(NSH_LEN_WORDS) << 16)
            | (u32::from(MD_TYPE_2) << 8)
            | u32::from(self.next_protocol);
        b[0..4].copy_from_slice(&word0.to_be_bytes());
        let word1 = (self.spi << 8) | u32::from(self.si);
        b[4..8].copy_from_slice(&word1.to_be_bytes());
        b[8..10].copy_from_slice(&FLOW_HASH_MD_CLASS.to_be_bytes());
        b[10] = FLOW_HASH_MD_TYPE;
        b[11] = FLOW_HASH_MD_LEN;
        b[12..20].copy_from_slice(&self.flow_hash.to_be_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<NshHeader, ParseError> {
        if bytes.len() < 8 {
            return Err(ParseError::new(bytes.len(), ParseErrorKind::Truncated));
        }
        let word0 = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let version = (word0 >> 30) as u8;
        if version != NSH_VERSION {
            return Err(ParseError::new(0, ParseErrorKind::BadVersion(version)));
        }
        let length = ((word0 >> 16) & 0x3F) as u8;
        if length != NSH_LEN_WORDS {
            return Err(ParseError::new(2, ParseErrorKind::BadLength(length)));
        }
        if (word0 >> 12) & 0xF != 0 {
            return Err(ParseError::new(2, ParseErrorKind::ReservedBitsSet));
        }
        let md_type = ((word0 >> 8) & 0xF) as u8;
        if md_type != MD_TYPE_2 {
            return Err(ParseError::new(2, ParseErrorKind::BadMdType(md_type)));
        }
        let word1 = u32::from_be_bytes(bytes[4..8].try_into().unwrap());

        if bytes.len() < NSH_LEN {
            return Err(ParseError::new(bytes.len(), ParseErrorKind::Truncated));
        }
        let class = u16::from_be_bytes([bytes[8], bytes[9]]);
        if class != FLOW_HASH_MD_CLASS || bytes[10] != FLOW_HASH_MD_TYPE {
            return Err(ParseError::new(
                8,
                ParseErrorKind::UnknownTlv {
                    class,
                    ty: bytes[10],
                },
            ));
        }
        if bytes[11] != FLOW_HASH_MD_LEN {
            return Err(ParseError::new(11, ParseErrorKind::BadTlvLength(bytes[11])));
        }

        Ok(NshHeader {
            o_bit: word0 & (1 << 29) != 0,
            unassigned: word0 & (1 << 28) != 0,
            ttl: ((word0 >> 22) & 0x3F) as u8,
            next_protocol: (word0 & 0xFF) as u8,
            spi: word1 >> 8,
            si: (word1 & 0xFF) as u8,
            flow_hash: u64::from_be_bytes(bytes[12..20].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("NSH parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn new(offset: usize, kind: ParseErrorKind) -> Self {
        ParseError { offset, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("truncated header")]
    Truncated,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("length field {0} does not match one flow-hash TLV")]
    BadLength(u8),
    #[error("reserved bits set")]
    ReservedBitsSet,
    #[error("unsupported MD type {0}")]
    BadMdType(u8),
    #[error("unknown metadata TLV class {class:#06x} type {ty:#04x}")]
    UnknownTlv { class: u16, ty: u8 },
    #[error("bad TLV length {0}")]
    BadTlvLength(u8),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_header_encoding() {
        let h = NshHeader::new(1, 1, 0);
        let b = h.encode();
        assert_eq!(b.len(), 20);
        // ttl=63, len=5, md=2, np=1
        assert_eq!(&b[0..4], &[0x0F, 0xC5, 0x02, 0x01]);
        assert_eq!(&b[4..8], &[0x00, 0x00, 0x01, 0x01]);
        assert_eq!(NshHeader::decode(&b).unwrap(), h);
    }

    #[test]
    fn max_field_values_survive() {
        let h = NshHeader {
            o_bit: true,
            unassigned: true,
            ttl: 0x3F,
            next_protocol: 0xFF,
            spi: MAX_SPI,
            si: 255,
            flow_hash: u64::MAX,
        };
        assert_eq!(NshHeader::decode(&h.encode()).unwrap(), h);
    }

    #[test]
    fn short_input_is_truncated() {
        let b = NshHeader::new(1, 1, 0).encode();
        let err = NshHeader::decode(&b[..7]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Truncated);
        let err = NshHeader::decode(&b[..12]).unwrap_err();
        assert_eq!(err, ParseError::new(12, ParseErrorKind::Truncated));
    }

    #[test]
    fn wrong_version_and_md_type() {
        let mut b = NshHeader::new(1, 1, 0).encode();
        b[0] |= 0x40;
        assert!(matches!(
            NshHeader::decode(&b).unwrap_err().kind,
            ParseErrorKind::BadVersion(1)
        ));
        let mut b = NshHeader::new(1, 1, 0).encode();
        b[2] = 0x01;
        assert!(matches!(
            NshHeader::decode(&b).unwrap_err().kind,
            ParseErrorKind::BadMdType(1)
        ));
    }

    #[test]
    fn every_single_bit_flip_is_visible() {
        let h = NshHeader::new(0xABCDE, 3, 0x0123_4567_89AB_CDEF);
        let good = h.encode();
        for bit in 0..NSH_LEN * 8 {
            let mut b = good;
            b[bit / 8] ^= 0x80 >> (bit % 8);
            if let Ok(d) = NshHeader::decode(&b) {
                assert_ne!(d, h, "flip of bit {bit} went unnoticed");
            }
        }
    }
}
