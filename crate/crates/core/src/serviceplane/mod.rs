//! Per-node service plane view and service-aware routing table.
//!
//! The view is the IGP graph of NFV nodes augmented with one VNF node per
//! announced instance, attached to its host by a VNF-cost edge. From it,
//! a node derives for every instance `k` of service type `i`:
//!
//! ```text
//! c(i,k) = n(i,k) + v(i,k)        network cost + VNF cost
//! w(i,k) = 1 / (1 + c(i,k))
//! W(i)   = sum over k of w(i,k)
//! p(i,k) = w(i,k) / W(i)
//! ```

pub mod spf;
mod wcmp;

pub use wcmp::{
    compute_wcmp, instance_weight, CostBreakdown, WcmpEntry, WcmpGroup, WcmpTable, WCMP_CSV_HEADER,
};

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::linkstate::{LsaBody, LsdbSnapshot};
use crate::types::{EndpointAddr, InstanceId, NodeId, ServiceTypeId};
use spf::Graph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VnfAttachment {
    pub service_type: ServiceTypeId,
    pub instance: InstanceId,
    pub host: NodeId,
    pub vnf_cost: u32,
    pub nsh_endpoint: EndpointAddr,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServicePlaneView {
    pub nfv_nodes: BTreeSet<NodeId>,
    /// Directed `(origin, neighbor, cost)` as listed in router LSAs.
    pub network_edges: Vec<(NodeId, NodeId, u32)>,
    /// Sorted by `(service_type, host, instance)`.
    pub vnf_attachments: Vec<VnfAttachment>,
    /// VNF announcements dropped because their origin has no router LSA.
    pub orphaned: u64,
}

impl ServicePlaneView {
    /// Pure function of the snapshot. Withdrawn instances are excluded.
    pub fn build(snapshot: &LsdbSnapshot) -> Self {
        let mut view = ServicePlaneView::default();
        for lsa in snapshot.iter() {
            if let LsaBody::Router(r) = &lsa.body {
                view.nfv_nodes.insert(lsa.origin);
                for adj in &r.neighbors {
                    view.network_edges
                        .push((lsa.origin, adj.neighbor, adj.link_cost));
                }
            }
        }
        for lsa in snapshot.iter() {
            let LsaBody::Vnf(v) = &lsa.body else { continue };
            if v.withdrawn {
                continue;
            }
            if !view.nfv_nodes.contains(&lsa.origin) {
                warn!(
                    "dropping VNF announcement {:?}/{:?} from unknown node {:?}",
                    v.service_type, v.instance, lsa.origin
                );
                view.orphaned += 1;
                continue;
            }
            view.vnf_attachments.push(VnfAttachment {
                service_type: v.service_type,
                instance: v.instance,
                host: lsa.origin,
                vnf_cost: v.vnf_cost,
                nsh_endpoint: v.nsh_endpoint,
            });
        }
        view.network_edges.sort();
        view.vnf_attachments
            .sort_by_key(|a| (a.service_type, a.host, a.instance));
        view
    }

    pub fn graph(&self) -> Graph {
        let mut g: Graph = self.nfv_nodes.iter().map(|n| (*n, Vec::new())).collect();
        for &(a, b, cost) in &self.network_edges {
            if self.nfv_nodes.contains(&b) {
                g.entry(a).or_default().push((b, u64::from(cost)));
            }
        }
        g
    }

    pub fn service_types(&self) -> BTreeSet<ServiceTypeId> {
        self.vnf_attachments
            .iter()
            .map(|a| a.service_type)
            .collect()
    }
}

/// Shortest-path network cost from `node` to every reachable NFV node.
/// The map is empty when `node` is not part of the view.
pub fn network_costs(view: &ServicePlaneView, node: NodeId) -> BTreeMap<NodeId, u64> {
    spf::shortest_path_tree(&view.graph(), node).dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linkstate::{Adjacency, Lsa, RouterLsa, VnfLsa};
    use crate::types::SimTime;

    fn router(origin: u32, neighbors: &[(u32, u32)]) -> Lsa {
        Lsa {
            origin: NodeId(origin),
            seq: 1,
            originated_at: SimTime::ZERO,
            body: LsaBody::Router(RouterLsa {
                neighbors: neighbors
                    .iter()
                    .map(|&(n, c)| Adjacency {
                        neighbor: NodeId(n),
                        link_cost: c,
                    })
                    .collect(),
            }),
        }
    }

    fn vnf(origin: u32, instance: u32, cost: u32, withdrawn: bool) -> Lsa {
        Lsa {
            origin: NodeId(origin),
            seq: 1,
            originated_at: SimTime::ZERO,
            body: LsaBody::Vnf(VnfLsa {
                service_type: ServiceTypeId(1),
                instance: InstanceId(instance),
                vnf_cost: cost,
                nsh_endpoint: EndpointAddr::for_node(NodeId(origin)),
                withdrawn,
            }),
        }
    }

    /// A=1 hub with B=2, C=3 at 160 and D=4 at 30; instances on B and C.
    pub(crate) fn phase_one_snapshot() -> LsdbSnapshot {
        LsdbSnapshot::from_lsas([
            router(1, &[(2, 160), (3, 160), (4, 30)]),
            router(2, &[(1, 160)]),
            router(3, &[(1, 160)]),
            router(4, &[(1, 30)]),
            vnf(2, 1, 150, false),
            vnf(3, 2, 150, false),
        ])
    }

    #[test]
    fn builds_view_of_two_phase_topology() {
        let view = ServicePlaneView::build(&phase_one_snapshot());
        assert_eq!(view.nfv_nodes.len(), 4);
        assert_eq!(view.vnf_attachments.len(), 2);
        assert_eq!(view.orphaned, 0);
    }

    #[test]
    fn empty_snapshot_gives_empty_view() {
        let view = ServicePlaneView::build(&LsdbSnapshot::default());
        assert_eq!(view, ServicePlaneView::default());
    }

    #[test]
    fn orphan_and_withdrawn_announcements_are_excluded() {
        let snap = LsdbSnapshot::from_lsas([
            router(1, &[(2, 10)]),
            router(2, &[(1, 10)]),
            vnf(9, 1, 10, false),
            vnf(2, 2, 10, true),
        ]);
        let view = ServicePlaneView::build(&snap);
        assert!(view.vnf_attachments.is_empty());
        assert_eq!(view.orphaned, 1);
    }

    #[test]
    fn network_costs_from_hub() {
        let view = ServicePlaneView::build(&phase_one_snapshot());
        let costs = network_costs(&view, NodeId(1));
        assert_eq!(costs[&NodeId(1)], 0);
        assert_eq!(costs[&NodeId(2)], 160);
        assert_eq!(costs[&NodeId(4)], 30);
        // Leaf to leaf goes through the hub.
        let from_d = network_costs(&view, NodeId(4));
        assert_eq!(from_d[&NodeId(2)], 190);
    }

    #[test]
    fn triangle_network_cost() {
        let snap = LsdbSnapshot::from_lsas([
            router(1, &[(2, 5), (3, 20)]),
            router(2, &[(1, 5), (3, 5)]),
            router(3, &[(1, 20), (2, 5)]),
        ]);
        let view = ServicePlaneView::build(&snap);
        assert_eq!(network_costs(&view, NodeId(1))[&NodeId(3)], 10);
    }
}
