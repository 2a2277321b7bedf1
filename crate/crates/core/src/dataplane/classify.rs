//! Flow identity, chain catalog and ingress classification.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::nsh::{NshHeader, MAX_SPI};
use super::packet::{NshPacket, PacketMeta};
use crate::types::{ServiceTypeId, Spi};

/// Longest chain the SI field can express with one value kept in reserve.
pub const MAX_CHAIN_LEN: usize = 63;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowKey {
    /// Big-endian `src | dst | sport | dport | proto`, 13 bytes.
    pub fn canonical_bytes(&self) -> [u8; 13] {
        let mut b = [0u8; 13];
        b[0..4].copy_from_slice(&self.src_addr.octets());
        b[4..8].copy_from_slice(&self.dst_addr.octets());
        b[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        b[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        b[12] = self.protocol;
        b
    }

    pub fn flow_hash(&self) -> u64 {
        fnv1a64(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("chain {spi} is empty")]
    EmptyChain { spi: Spi },
    #[error("chain {spi} has {len} services, at most {MAX_CHAIN_LEN} are allowed")]
    ChainTooLong { spi: Spi, len: usize },
    #[error("SPI {spi} does not fit in 24 bits")]
    SpiOutOfRange { spi: Spi },
}

/// Service chains by SPI. Shared by every node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChainCatalog {
    chains: BTreeMap<Spi, Vec<ServiceTypeId>>,
}

impl ChainCatalog {
    pub fn new(
        chains: impl IntoIterator<Item = (Spi, Vec<ServiceTypeId>)>,
    ) -> Result<Self, CatalogError> {
        let mut catalog = ChainCatalog::default();
        for (spi, services) in chains {
            if spi > MAX_SPI {
                return Err(CatalogError::SpiOutOfRange { spi });
            }
            if services.is_empty() {
                return Err(CatalogError::EmptyChain { spi });
            }
            if services.len() > MAX_CHAIN_LEN {
                return Err(CatalogError::ChainTooLong {
                    spi,
                    len: services.len(),
                });
            }
            catalog.chains.insert(spi, services);
        }
        Ok(catalog)
    }

    pub fn chain(&self, spi: Spi) -> Option<&[ServiceTypeId]> {
        self.chains.get(&spi).map(Vec::as_slice)
    }

    /// Service a packet with service index `si` must visit next.
    pub fn next_service(&self, spi: Spi, si: u8) -> Option<ServiceTypeId> {
        let chain = self.chain(spi)?;
        let si = usize::from(si);
        if si == 0 || si > chain.len() {
            return None;
        }
        Some(chain[chain.len() - si])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Spi, &[ServiceTypeId])> {
        self.chains.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }
}

/// IPv4 prefix used in match rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prefix {
    pub addr: Ipv4Addr,
    pub len: u8,
}

impl Prefix {
    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        if self.len == 0 {
            return true;
        }
        let mask = u32::MAX << (32 - u32::from(self.len.min(32)));
        u32::from(addr) & mask == u32::from(self.addr) & mask
    }
}

impl std::str::FromStr for Prefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => (a, l.parse::<u8>().map_err(|e| format!("{s}: {e}"))?),
            None => (s, 32),
        };
        if len > 32 {
            return Err(format!("{s}: prefix length above 32"));
        }
        let addr = addr.parse().map_err(|e| format!("{s}: {e}"))?;
        Ok(Prefix { addr, len })
    }
}

/// One classification rule. Unset fields match anything.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassificationRule {
    pub spi: Spi,
    pub src: Option<Prefix>,
    pub dst: Option<Prefix>,
    pub protocol: Option<u8>,
    pub dst_port: Option<u16>,
}

impl ClassificationRule {
    pub fn matches(&self, key: &FlowKey) -> bool {
        self.src.is_none_or(|p| p.contains(key.src_addr))
            && self.dst.is_none_or(|p| p.contains(key.dst_addr))
            && self.protocol.is_none_or(|p| p == key.protocol)
            && self.dst_port.is_none_or(|p| p == key.dst_port)
    }
}

/// Maps a raw packet to its chain, first match wins. `None` means the
/// packet is unclassified and must be dropped.
pub fn classify(
    key: FlowKey,
    meta: PacketMeta,
    rules: &[ClassificationRule],
    catalog: &ChainCatalog,
) -> Option<NshPacket> {
    let rule = rules.iter().find(|r| r.matches(&key))?;
    let chain = catalog.chain(rule.spi)?;
    let header = NshHeader::new(rule.spi, chain.len() as u8, key.flow_hash());
    Some(NshPacket {
        header,
        flow: key,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SimTime;

    fn key(src_port: u16) -> FlowKey {
        FlowKey {
            src_addr: Ipv4Addr::new(10, 1, 0, 1),
            dst_addr: Ipv4Addr::new(192, 0, 2, 10),
            src_port,
            dst_port: 80,
            protocol: 6,
        }
    }

    fn meta() -> PacketMeta {
        PacketMeta::new(1, SimTime::ZERO)
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn canonical_bytes_are_big_endian() {
        assert_eq!(
            key(0x1234).canonical_bytes(),
            [10, 1, 0, 1, 192, 0, 2, 10, 0x12, 0x34, 0, 80, 6]
        );
    }

    #[test]
    fn single_service_chain_classification() {
        let catalog = ChainCatalog::new([(1, vec![ServiceTypeId(1)])]).unwrap();
        let rules = [ClassificationRule {
            spi: 1,
            ..Default::default()
        }];
        let pkt = classify(key(4000), meta(), &rules, &catalog).unwrap();
        assert_eq!(pkt.header.spi, 1);
        assert_eq!(pkt.header.si, 1);
        assert_eq!(pkt.header.ttl, 63);
        assert_eq!(pkt.header.flow_hash, key(4000).flow_hash());
    }

    #[test]
    fn three_service_chain_starts_at_three() {
        let catalog = ChainCatalog::new([(
            9,
            vec![ServiceTypeId(1), ServiceTypeId(2), ServiceTypeId(3)],
        )])
        .unwrap();
        let rules = [ClassificationRule {
            spi: 9,
            protocol: Some(6),
            ..Default::default()
        }];
        let pkt = classify(key(1), meta(), &rules, &catalog).unwrap();
        assert_eq!(pkt.header.si, 3);
        assert_eq!(catalog.next_service(9, 3), Some(ServiceTypeId(1)));
        assert_eq!(catalog.next_service(9, 1), Some(ServiceTypeId(3)));
        assert_eq!(catalog.next_service(9, 0), None);
    }

    #[test]
    fn first_match_wins_and_no_match_drops() {
        let catalog =
            ChainCatalog::new([(1, vec![ServiceTypeId(1)]), (2, vec![ServiceTypeId(2)])]).unwrap();
        let rules = [
            ClassificationRule {
                spi: 2,
                dst_port: Some(443),
                ..Default::default()
            },
            ClassificationRule {
                spi: 1,
                src: Some("10.1.0.0/16".parse().unwrap()),
                ..Default::default()
            },
        ];
        assert_eq!(
            classify(key(1), meta(), &rules, &catalog)
                .unwrap()
                .header
                .spi,
            1
        );
        let mut other = key(1);
        other.src_addr = Ipv4Addr::new(172, 16, 0, 1);
        assert!(classify(other, meta(), &rules, &catalog).is_none());
    }

    #[test]
    fn catalog_rejects_bad_chains() {
        assert!(matches!(
            ChainCatalog::new([(1, vec![ServiceTypeId(1); 64])]),
            Err(CatalogError::ChainTooLong { len: 64, .. })
        ));
        assert!(ChainCatalog::new([(1, vec![ServiceTypeId(1); 63])]).is_ok());
        assert!(ChainCatalog::new([(1, vec![])]).is_err());
        assert!(ChainCatalog::new([(1 << 24, vec![ServiceTypeId(1)])]).is_err());
    }

    #[test]
    fn prefix_parsing_and_matching() {
        let p: Prefix = "10.0.0.0/8".parse().unwrap();
        assert!(p.contains(Ipv4Addr::new(10, 200, 1, 1)));
        assert!(!p.contains(Ipv4Addr::new(11, 0, 0, 1)));
        let any: Prefix = "0.0.0.0/0".parse().unwrap();
        assert!(any.contains(Ipv4Addr::new(1, 2, 3, 4)));
        assert!("10.0.0.0/33".parse::<Prefix>().is_err());
    }
}
