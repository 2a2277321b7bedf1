use super::classify::FlowKey;
use super::nsh::NshHeader;
use crate::types::{InstanceId, NodeId, ServiceTypeId, SimTime};

/// One VNF traversal recorded on a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    /// Service index the packet carried when it reached the VNF.
    pub si: u8,
    pub service_type: ServiceTypeId,
    pub instance: InstanceId,
    pub host: NodeId,
}

/// Simulation bookkeeping carried alongside the header; not on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketMeta {
    pub flow_id: u64,
    pub created_at: SimTime,
    pub hops: Vec<Hop>,
}

impl PacketMeta {
    pub fn new(flow_id: u64, created_at: SimTime) -> Self {
        PacketMeta {
            flow_id,
            created_at,
            hops: Vec::new(),
        }
    }
}

/// Encapsulated packet: NSH header, the original 5-tuple and metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NshPacket {
    pub header: NshHeader,
    pub flow: FlowKey,
    pub meta: PacketMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveredRecord {
    pub flow_id: u64,
    pub spi: u32,
    pub latency: SimTime,
    pub hops: Vec<Hop>,
}

/// Decapsulates a packet that finished its chain.
pub fn egress(pkt: NshPacket, now: SimTime) -> DeliveredRecord {
    debug_assert_eq!(pkt.header.si, 0, "egress before the chain completed");
    DeliveredRecord {
        flow_id: pkt.meta.flow_id,
        spi: pkt.header.spi,
        latency: now.saturating_sub(pkt.meta.created_at),
        hops: pkt.meta.hops,
    }
}
