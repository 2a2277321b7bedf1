use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classify::ChainCatalog;
use super::packet::NshPacket;
use super::DropCause;
use crate::serviceplane::WcmpTable;
use crate::types::{EndpointAddr, InstanceId, NodeId, ServiceTypeId, SimTime, Spi};

/// Default idle timeout of a cached forwarding decision.
pub const DEFAULT_CACHE_IDLE_SECS: f64 = 60.0;

/// Fractional part of the golden ratio.
const GOLDEN_STEP: f64 = 0.618_033_988_749_894_9;

/// How the uniform variate of a WCMP draw is produced.
///
/// Both modes give every draw a marginally uniform variate, so a fresh flow
/// picks instance `i` with probability `p_i` either way. They differ in how
/// successive draws relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent draws from the node's PRNG.
    Independent,
    /// Golden-ratio sequence with a PRNG-drawn random offset. Per-node
    /// selection counts stay within a few flows of their expectation.
    #[default]
    LowDiscrepancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowCacheKey {
    pub spi: Spi,
    pub si: u8,
    pub flow_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowCacheEntry {
    pub service_type: ServiceTypeId,
    pub instance: InstanceId,
    pub host: NodeId,
    pub endpoint: EndpointAddr,
    pub created_at: SimTime,
    pub last_used: SimTime,
}

#[derive(Debug, Clone)]
pub struct FlowCache {
    entries: BTreeMap<FlowCacheKey, FlowCacheEntry>,
    idle_timeout: SimTime,
}

impl FlowCache {
    pub fn new(idle_timeout: SimTime) -> Self {
        FlowCache {
            entries: BTreeMap::new(),
            idle_timeout,
        }
    }

    pub fn get(&self, key: &FlowCacheKey) -> Option<&FlowCacheEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops entries idle for longer than the timeout.
    pub fn expire_idle(&mut self, now: SimTime) -> usize {
        let timeout = self.idle_timeout;
        let before = self.entries.len();
        self.entries
            .retain(|_, e| now.saturating_sub(e.last_used) <= timeout);
        before - self.entries.len()
    }

    pub fn evict_instance(&mut self, instance: InstanceId) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.instance != instance);
        before - self.entries.len()
    }

    fn retain_live(&mut self, table: &WcmpTable) -> usize {
        let before = self.entries.len();
        self.entries
            .retain(|_, e| table.contains_instance(e.service_type, e.instance));
        before - self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardDecision {
    LocalDeliver {
        service_type: ServiceTypeId,
        instance: InstanceId,
    },
    Tunnel {
        service_type: ServiceTypeId,
        instance: InstanceId,
        host: NodeId,
        endpoint: EndpointAddr,
    },
    /// Chain completed, decapsulate towards the egress.
    Egress,
    Drop(DropCause),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConnectorStats {
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub resampled: u64,
    pub unroutable: u64,
    pub ttl_expired: u64,
}

/// Per-node NSH forwarder. Owns the WCMP table pushed by the D-MANO and
/// the per-flow decision cache.
#[derive(Debug, Clone)]
pub struct Connector {
    node: NodeId,
    table: WcmpTable,
    cache: FlowCache,
    cache_enabled: bool,
    rng: ChaCha8Rng,
    sampling: Sampling,
    sequence: f64,
    stats: ConnectorStats,
}

impl Connector {
    pub fn new(node: NodeId, seed: u64, idle_timeout: SimTime) -> Self {
        Self::with_sampling(node, seed, idle_timeout, Sampling::default())
    }

    pub fn with_sampling(
        node: NodeId,
        seed: u64,
        idle_timeout: SimTime,
        sampling: Sampling,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequence = rng.random();
        Connector {
            node,
            table: WcmpTable::default(),
            cache: FlowCache::new(idle_timeout),
            cache_enabled: true,
            rng,
            sampling,
            sequence,
            stats: ConnectorStats::default(),
        }
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    fn next_uniform(&mut self) -> f64 {
        match self.sampling {
            Sampling::Independent => self.rng.random(),
            Sampling::LowDiscrepancy => {
                self.sequence = (self.sequence + GOLDEN_STEP).fract();
                self.sequence
            }
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// With the cache off every packet is an independent WCMP draw.
    pub fn set_cache_enabled(&mut self, enabled: bool) {
        self.cache_enabled = enabled;
    }

    pub fn table(&self) -> &WcmpTable {
        &self.table
    }

    pub fn cache(&self) -> &FlowCache {
        &self.cache
    }

    pub fn stats(&self) -> ConnectorStats {
        self.stats
    }

    /// Replaces the routing table in one step. Cached decisions towards
    /// instances that left the table are evicted; all others stay.
    pub fn install_table(&mut self, table: WcmpTable) {
        self.table = table;
        self.cache.retain_live(&self.table);
    }

    pub fn evict_instance(&mut self, instance: InstanceId) -> usize {
        self.cache.evict_instance(instance)
    }

    pub fn expire_idle(&mut self, now: SimTime) -> usize {
        self.cache.expire_idle(now)
    }

    /// Decides where `pkt` goes next and decrements its TTL.
    pub fn forward(
        &mut self,
        pkt: &mut NshPacket,
        catalog: &ChainCatalog,
        now: SimTime,
    ) -> ForwardDecision {
        let si = pkt.header.si;
        if si == 0 {
            return ForwardDecision::Egress;
        }
        pkt.header.ttl = pkt.header.ttl.saturating_sub(1);
        if pkt.header.ttl == 0 {
            self.stats.ttl_expired += 1;
            return ForwardDecision::Drop(DropCause::TtlExpired);
        }
        let Some(service_type) = catalog.next_service(pkt.header.spi, si) else {
            self.stats.unroutable += 1;
            return ForwardDecision::Drop(DropCause::Unroutable);
        };
        let key = FlowCacheKey {
            spi: pkt.header.spi,
            si,
            flow_hash: pkt.header.flow_hash,
        };

        if self.cache_enabled {
            if let Some(entry) = self.cache.entries.get_mut(&key) {
                if self
                    .table
                    .contains_instance(entry.service_type, entry.instance)
                {
                    entry.last_used = now;
                    self.stats.cache_hits += 1;
                    let entry = *entry;
                    return self.decision(&entry);
                }
                self.cache.entries.remove(&key);
                self.stats.resampled += 1;
            }
        }

        if self
            .table
            .group(service_type)
            .is_none_or(|g| g.is_unroutable())
        {
            self.stats.unroutable += 1;
            return ForwardDecision::Drop(DropCause::Unroutable);
        }
        let u = self.next_uniform();
        let chosen = self
            .table
            .group(service_type)
            .and_then(|g| g.select(u))
            .expect("routable group")
            .clone();
        self.stats.cache_misses += 1;
        let entry = FlowCacheEntry {
            service_type,
            instance: chosen.instance,
            host: chosen.host,
            endpoint: chosen.nsh_endpoint,
            created_at: now,
            last_used: now,
        };
        if self.cache_enabled {
            self.cache.entries.insert(key, entry);
        }
        self.decision(&entry)
    }

    fn decision(&self, entry: &FlowCacheEntry) -> ForwardDecision {
        if entry.host == self.node {
            ForwardDecision::LocalDeliver {
                service_type: entry.service_type,
                instance: entry.instance,
            }
        } else {
            ForwardDecision::Tunnel {
                service_type: entry.service_type,
                instance: entry.instance,
                host: entry.host,
                endpoint: entry.endpoint,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::classify::FlowKey;
    use crate::dataplane::nsh::NshHeader;
    use crate::dataplane::packet::PacketMeta;
    use crate::serviceplane::{compute_wcmp, ServicePlaneView, VnfAttachment};
    use std::net::Ipv4Addr;

    const SVC: ServiceTypeId = ServiceTypeId(1);
    const A: NodeId = NodeId(1);

    fn catalog() -> ChainCatalog {
        ChainCatalog::new([(1, vec![SVC])]).unwrap()
    }

    /// Node A sees instances hosted at the given `(host, instance, cost)`
    /// with zero network cost for simplicity (all hosts adjacent at cost 0
    /// is impossible, so costs are folded into the VNF cost).
    fn table(instances: &[(u32, u32, u32)], generation: u64) -> WcmpTable {
        let mut view = ServicePlaneView::default();
        view.nfv_nodes.insert(A);
        for &(host, inst, cost) in instances {
            view.nfv_nodes.insert(NodeId(host));
            if host != A.0 {
                view.network_edges.push((A, NodeId(host), 1));
            }
            view.vnf_attachments.push(VnfAttachment {
                service_type: SVC,
                instance: InstanceId(inst),
                host: NodeId(host),
                vnf_cost: cost,
                nsh_endpoint: EndpointAddr::for_node(NodeId(host)),
            });
        }
        compute_wcmp(&view, A, generation)
    }

    fn pkt(flow: u32) -> NshPacket {
        let key = FlowKey {
            src_addr: Ipv4Addr::from(0x0a01_0000 + flow),
            dst_addr: Ipv4Addr::new(192, 0, 2, 10),
            src_port: 1024,
            dst_port: 80,
            protocol: 6,
        };
        NshPacket {
            header: NshHeader::new(1, 1, key.flow_hash()),
            flow: key,
            meta: PacketMeta::new(u64::from(flow), SimTime::ZERO),
        }
    }

    fn chosen(d: ForwardDecision) -> InstanceId {
        match d {
            ForwardDecision::LocalDeliver { instance, .. }
            | ForwardDecision::Tunnel { instance, .. } => instance,
            other => panic!("unexpected {other:?}"),
        }
    }

    fn connector() -> Connector {
        Connector::new(A, 42, SimTime::from_secs_f64(60.0))
    }

    #[test]
    fn second_packet_of_flow_hits_cache() {
        let mut c = connector();
        c.install_table(table(&[(2, 1, 100), (3, 2, 100)], 1));
        let first = chosen(c.forward(&mut pkt(7), &catalog(), SimTime::ZERO));
        for _ in 0..20 {
            assert_eq!(
                chosen(c.forward(&mut pkt(7), &catalog(), SimTime::ZERO)),
                first
            );
        }
        assert_eq!(c.stats().cache_misses, 1);
        assert_eq!(c.stats().cache_hits, 20);
    }

    #[test]
    fn single_instance_group_always_wins() {
        let mut c = connector();
        c.install_table(table(&[(3, 9, 10)], 1));
        for f in 0..100 {
            assert_eq!(
                chosen(c.forward(&mut pkt(f), &catalog(), SimTime::ZERO)),
                InstanceId(9)
            );
        }
    }

    #[test]
    fn local_instance_is_delivered_locally() {
        let mut c = connector();
        c.install_table(table(&[(1, 4, 10)], 1));
        assert!(matches!(
            c.forward(&mut pkt(1), &catalog(), SimTime::ZERO),
            ForwardDecision::LocalDeliver {
                instance: InstanceId(4),
                ..
            }
        ));
    }

    #[test]
    fn missing_group_is_unroutable() {
        let mut c = connector();
        assert_eq!(
            c.forward(&mut pkt(1), &catalog(), SimTime::ZERO),
            ForwardDecision::Drop(DropCause::Unroutable)
        );
        assert_eq!(c.stats().unroutable, 1);
    }

    #[test]
    fn withdrawn_instance_is_resampled() {
        let mut c = connector();
        c.install_table(table(&[(2, 1, 0)], 1));
        assert_eq!(
            chosen(c.forward(&mut pkt(5), &catalog(), SimTime::ZERO)),
            InstanceId(1)
        );
        c.install_table(table(&[(3, 2, 0)], 2));
        assert!(c.cache().is_empty());
        assert_eq!(
            chosen(c.forward(&mut pkt(5), &catalog(), SimTime::ZERO)),
            InstanceId(2)
        );
    }

    #[test]
    fn ttl_is_decremented_and_enforced() {
        let mut c = connector();
        c.install_table(table(&[(2, 1, 0)], 1));
        let mut p = pkt(1);
        c.forward(&mut p, &catalog(), SimTime::ZERO);
        assert_eq!(p.header.ttl, 62);
        p.header.ttl = 1;
        assert_eq!(
            c.forward(&mut p, &catalog(), SimTime::ZERO),
            ForwardDecision::Drop(DropCause::TtlExpired)
        );
    }

    #[test]
    fn exhausted_si_goes_to_egress() {
        let mut c = connector();
        let mut p = pkt(1);
        p.header.si = 0;
        assert_eq!(
            c.forward(&mut p, &catalog(), SimTime::ZERO),
            ForwardDecision::Egress
        );
    }

    #[test]
    fn idle_entries_expire() {
        let mut c = connector();
        c.install_table(table(&[(2, 1, 0)], 1));
        c.forward(&mut pkt(1), &catalog(), SimTime::ZERO);
        assert_eq!(c.expire_idle(SimTime::from_secs_f64(59.0)), 0);
        assert_eq!(c.expire_idle(SimTime::from_secs_f64(61.0)), 1);
    }
}
