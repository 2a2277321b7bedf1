use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use proptest::prelude::*;
use sfc_core::dataplane::{
    ChainCatalog, Connector, FlowKey, ForwardDecision, NshHeader, NshPacket, PacketMeta, Sampling,
};
use sfc_core::serviceplane::{CostBreakdown, WcmpEntry, WcmpGroup, WcmpTable};
use sfc_core::types::{EndpointAddr, InstanceId, NodeId, ServiceTypeId, SimTime};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SVC: ServiceTypeId = ServiceTypeId(1);
const HERE: NodeId = NodeId(1);

fn catalog() -> ChainCatalog {
    ChainCatalog::new([(1, vec![SVC])]).unwrap()
}

/// Table of node 1 with one remote instance per probability, hosted on
/// nodes 2, 3, ...
fn table(probabilities: &[f64], generation: u64) -> WcmpTable {
    let entries = probabilities
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let host = NodeId(i as u32 + 2);
            WcmpEntry {
                instance: InstanceId(i as u32 + 1),
                host,
                nsh_endpoint: EndpointAddr::for_node(host),
                cost: CostBreakdown::new(1, 0),
                weight: p,
                probability: p,
            }
        })
        .collect();
    WcmpTable {
        node: Some(HERE),
        groups: BTreeMap::from([(
            SVC,
            WcmpGroup {
                entries,
                total_weight: 1.0,
            },
        )]),
        generation,
    }
}

fn packet(flow: u32) -> NshPacket {
    let key = FlowKey {
        src_addr: Ipv4Addr::from(0x0a01_0000u32.wrapping_add(flow)),
        dst_addr: Ipv4Addr::new(192, 0, 2, 10),
        src_port: 1024 + (flow % 60_000) as u16,
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
        ForwardDecision::Tunnel { instance, .. }
        | ForwardDecision::LocalDeliver { instance, .. } => instance,
        other => panic!("unexpected decision {other:?}"),
    }
}

/// Passes when the observed counts are consistent with `p` at level 0.01.
fn chi_square_passes(counts: &[u64], p: &[f64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(p)
        .map(|(&o, &p)| {
            let e = n as f64 * p;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((p.len() - 1) as f64)
        .unwrap()
        .inverse_cdf(0.99);
    (stat, critical)
}

#[test]
fn selection_frequencies_follow_the_weights() {
    let vectors: [&[f64]; 3] = [
        &[0.5, 0.5],
        &[26.0 / 57.0, 31.0 / 57.0],
        &[0.1, 0.2, 0.3, 0.4],
    ];
    for sampling in [Sampling::Independent, Sampling::LowDiscrepancy] {
        for p in vectors {
            let mut c = Connector::with_sampling(HERE, 42, SimTime::from_secs_f64(60.0), sampling);
            c.set_cache_enabled(false);
            c.install_table(table(p, 1));
            let mut counts = vec![0u64; p.len()];
            for flow in 0..10_000 {
                let mut pkt = packet(flow);
                let inst = chosen(c.forward(&mut pkt, &catalog(), SimTime::ZERO));
                counts[inst.0 as usize - 1] += 1;
            }
            let (stat, critical) = chi_square_passes(&counts, p);
            assert!(
                stat < critical,
                "{sampling:?} {p:?}: counts {counts:?}, chi2 {stat:.3} >= {critical:.3}"
            );
        }
    }
}

#[test]
fn cached_flows_survive_generation_bumps() {
    let mut c = Connector::new(HERE, 7, SimTime::from_secs_f64(60.0));
    c.install_table(table(&[0.5, 0.3, 0.2], 1));
    let first: Vec<InstanceId> = (0..500)
        .map(|f| chosen(c.forward(&mut packet(f), &catalog(), SimTime::ZERO)))
        .collect();
    let bumps: [&[f64]; 4] = [
        &[0.1, 0.1, 0.8],
        &[0.9, 0.05, 0.05],
        &[0.0, 1.0, 0.0],
        &[0.3, 0.3, 0.4],
    ];
    for (g, p) in bumps.iter().enumerate() {
        let now = SimTime::from_secs_f64(2.0 * (g + 1) as f64);
        c.install_table(table(p, g as u64 + 2));
        for (f, &inst) in first.iter().enumerate() {
            let got = chosen(c.forward(&mut packet(f as u32), &catalog(), now));
            assert_eq!(got, inst, "flow {f} moved at generation {}", g + 2);
        }
    }
    assert_eq!(c.stats().cache_misses, 500);
}

#[test]
fn withdrawn_instance_releases_its_flows() {
    let mut c = Connector::new(HERE, 3, SimTime::from_secs_f64(60.0));
    c.install_table(table(&[0.5, 0.5], 1));
    let first: Vec<InstanceId> = (0..200)
        .map(|f| chosen(c.forward(&mut packet(f), &catalog(), SimTime::ZERO)))
        .collect();
    let mut t = table(&[0.5, 0.5], 2);
    let g = t.groups.get_mut(&SVC).unwrap();
    g.entries.retain(|e| e.instance == InstanceId(2));
    g.entries[0].probability = 1.0;
    c.install_table(t);
    for f in 0..200 {
        let got = chosen(c.forward(&mut packet(f), &catalog(), SimTime::ZERO));
        assert_eq!(got, InstanceId(2));
    }
    let moved = first.iter().filter(|i| **i == InstanceId(1)).count() as u64;
    assert_eq!(c.stats().cache_misses, 200 + moved);
    assert_eq!(c.cache().len(), 200);
}

#[test]
fn idle_entries_expire() {
    let mut c = Connector::new(HERE, 3, SimTime::from_secs_f64(60.0));
    c.install_table(table(&[1.0], 1));
    c.forward(&mut packet(1), &catalog(), SimTime::ZERO);
    assert_eq!(c.expire_idle(SimTime::from_secs_f64(59.0)), 0);
    assert_eq!(c.expire_idle(SimTime::from_secs_f64(61.0)), 1);
    assert!(c.cache().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a_live_entry_pins_the_flow(
        seed in any::<u64>(),
        flows in proptest::collection::vec(any::<u32>(), 1..50),
        tables in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 3), 1..6),
    ) {
        let mut c = Connector::new(HERE, seed, SimTime::from_secs_f64(60.0));
        c.install_table(table(&[1.0 / 3.0; 3], 0));
        let pinned: Vec<InstanceId> = flows
            .iter()
            .map(|&f| chosen(c.forward(&mut packet(f), &catalog(), SimTime::ZERO)))
            .collect();
        for (g, w) in tables.iter().enumerate() {
            let total: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|x| x / total).collect();
            c.install_table(table(&p, g as u64 + 1));
            for (&f, &inst) in flows.iter().zip(&pinned) {
                let got = chosen(c.forward(&mut packet(f), &catalog(), SimTime::ZERO));
                prop_assert_eq!(got, inst);
            }
        }
    }
}
