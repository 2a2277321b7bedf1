use std::collections::BTreeMap;
use std::io;

use super::{network_costs, ServicePlaneView};
use crate::types::{EndpointAddr, InstanceId, NodeId, ServiceTypeId};

pub const WCMP_CSV_HEADER: [&str; 9] = [
    "service_type",
    "instance",
    "host",
    "n",
    "v",
    "c",
    "w",
    "p",
    "generation",
];

/// Cost components of one instance seen from one node. Integers are exact;
/// the weight formula is evaluated in `f64` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostBreakdown {
    pub network_cost: u64,
    pub vnf_cost: u64,
    pub total: u64,
}

impl CostBreakdown {
    pub fn new(network_cost: u64, vnf_cost: u64) -> Self {
        CostBreakdown {
            network_cost,
            vnf_cost,
            total: network_cost + vnf_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WcmpEntry {
    pub instance: InstanceId,
    pub host: NodeId,
    pub nsh_endpoint: EndpointAddr,
    pub cost: CostBreakdown,
    pub weight: f64,
    pub probability: f64,
}

/// All reachable instances of one service type. An empty group means the
/// service is unroutable from this node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WcmpGroup {
    pub entries: Vec<WcmpEntry>,
    pub total_weight: f64,
}

impl WcmpGroup {
    pub fn is_unroutable(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, instance: InstanceId) -> Option<&WcmpEntry> {
        self.entries.iter().find(|e| e.instance == instance)
    }

    /// Inverse-CDF selection with `u` drawn uniformly from `[0, 1)`.
    pub fn select(&self, u: f64) -> Option<&WcmpEntry> {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.probability;
            if u < acc {
                return Some(e);
            }
        }
        // Rounding can leave the cumulative sum a hair below 1.
        self.entries.last()
    }
}

/// Service-aware routing table pushed by the D-MANO into the connector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WcmpTable {
    pub node: Option<NodeId>,
    pub groups: BTreeMap<ServiceTypeId, WcmpGroup>,
    pub generation: u64,
}

impl WcmpTable {
    pub fn group(&self, service_type: ServiceTypeId) -> Option<&WcmpGroup> {
        self.groups.get(&service_type)
    }

    pub fn contains_instance(&self, service_type: ServiceTypeId, instance: InstanceId) -> bool {
        self.group(service_type)
            .is_some_and(|g| g.entry(instance).is_some())
    }

    /// Same content, ignoring the generation counter.
    pub fn same_routes(&self, other: &WcmpTable) -> bool {
        self.node == other.node && self.groups == other.groups
    }

    pub fn write_csv<W: io::Write>(
        &self,
        out: W,
        host_label: impl Fn(NodeId) -> String,
    ) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(WCMP_CSV_HEADER)?;
        for (svc, group) in &self.groups {
            for e in &group.entries {
                wtr.write_record([
                    svc.0.to_string(),
                    e.instance.0.to_string(),
                    host_label(e.host),
                    e.cost.network_cost.to_string(),
                    e.cost.vnf_cost.to_string(),
                    e.cost.total.to_string(),
                    e.weight.to_string(),
                    e.probability.to_string(),
                    self.generation.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `w = 1 / (1 + c)`.
pub fn instance_weight(total_cost: u64) -> f64 {
    1.0 / (1.0 + total_cost as f64)
}

/// Computes the WCMP table of `node` from its service plane view.
///
/// Instances hosted on `node` get a network cost of 0. Instances whose host
/// is unreachable are left out; a service type left with no instance gets an
/// empty (unroutable) group.
pub fn compute_wcmp(view: &ServicePlaneView, node: NodeId, generation: u64) -> WcmpTable {
    let costs = network_costs(view, node);
    let mut groups: BTreeMap<ServiceTypeId, WcmpGroup> = BTreeMap::new();

    // Attachments are already sorted by (service_type, host, instance).
    for att in &view.vnf_attachments {
        let group = groups.entry(att.service_type).or_default();
        let Some(&n) = costs.get(&att.host) else {
            continue;
        };
        let cost = CostBreakdown::new(n, u64::from(att.vnf_cost));
        group.entries.push(WcmpEntry {
            instance: att.instance,
            host: att.host,
            nsh_endpoint: att.nsh_endpoint,
            cost,
            weight: instance_weight(cost.total),
            probability: 0.0,
        });
    }

    for group in groups.values_mut() {
        group.total_weight = group.entries.iter().map(|e| e.weight).sum();
        for e in &mut group.entries {
            e.probability = e.weight / group.total_weight;
        }
    }

    WcmpTable {
        node: Some(node),
        groups,
        generation,
    }
}
