//! Distributed MANO: the per-node control loop.
//!
//! Each cycle the D-MANO first measures its local VNF instances, turns the
//! measurements into VNF costs and announces them, then rebuilds the service
//! plane view from the mirrored LSDB and swaps a fresh WCMP table into the
//! connector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{Connector, VnfInstanceModel};
use crate::linkstate::{LinkStateError, Lsa, LsaBody, Lsdb, RouterLsa, VnfLsa};
use crate::serviceplane::{compute_wcmp, ServicePlaneView};
use crate::types::{EndpointAddr, InstanceId, NodeId, ServiceTypeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostPolicy {
    /// Cost is the capacity left: `capacity - pps`.
    #[default]
    RemainingCapacity,
    /// Cost is the measured throughput.
    ConsumedLoad,
}

impl CostPolicy {
    pub const ALL: [CostPolicy; 2] = [CostPolicy::RemainingCapacity, CostPolicy::ConsumedLoad];

    pub fn name(self) -> &'static str {
        match self {
            CostPolicy::RemainingCapacity => "remaining_capacity",
            CostPolicy::ConsumedLoad => "consumed_load",
        }
    }
}

impl std::str::FromStr for CostPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "remaining_capacity" | "remainingcapacity" => Ok(CostPolicy::RemainingCapacity),
            "consumed_load" | "consumedload" => Ok(CostPolicy::ConsumedLoad),
            _ => Err(format!(
                "unknown cost policy `{s}` (expected remaining_capacity or consumed_load)"
            )),
        }
    }
}

impl std::fmt::Display for CostPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmanoConfig {
    /// Seconds between two control cycles.
    pub cycle_period: f64,
    pub cost_policy: CostPolicy,
    /// Minimum cost change that triggers a new announcement before the
    /// refresh interval elapses.
    pub min_cost_delta: u32,
    /// Announce instantiations and withdrawals right away instead of on
    /// the next cycle.
    pub announce_immediately: bool,
    pub cost_ceiling: u32,
    /// Maximum time between two announcements of an unchanged cost. Only
    /// matters when `min_cost_delta > 0`.
    pub refresh_interval: f64,
}

impl Default for DmanoConfig {
    fn default() -> Self {
        DmanoConfig {
            cycle_period: 2.0,
            cost_policy: CostPolicy::RemainingCapacity,
            min_cost_delta: 0,
            announce_immediately: true,
            cost_ceiling: 65_535,
            refresh_interval: 1800.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VnfMeasurement {
    pub instance: InstanceId,
    /// Packets per second over the last cycle.
    pub pps: f64,
    pub capacity: f64,
}

/// Turns a measurement into a VNF cost on the link-cost scale.
pub fn derive_cost(m: &VnfMeasurement, policy: CostPolicy, ceiling: u32) -> u32 {
    let raw = match policy {
        CostPolicy::RemainingCapacity => (m.capacity - m.pps).round(),
        CostPolicy::ConsumedLoad => m.pps.round(),
    };
    raw.clamp(0.0, f64::from(ceiling)) as u32
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DmanoError {
    #[error("instance {0:?} is not hosted on this node")]
    UnknownInstance(InstanceId),
    #[error("instance {0:?} is already registered")]
    DuplicateInstance(InstanceId),
    #[error(transparent)]
    LinkState(#[from] LinkStateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Announced {
    cost: u32,
    at: SimTime,
}

#[derive(Debug, Clone)]
struct LocalInstance {
    service_type: ServiceTypeId,
    last: Option<Announced>,
}

/// What one control cycle did; LSAs must be flooded by the caller.
#[derive(Debug, Clone, Default)]
pub struct CycleOutcome {
    pub originated: Vec<Lsa>,
    pub generation: u64,
    pub aged_out: usize,
}

#[derive(Debug, Clone)]
pub struct Dmano {
    node: NodeId,
    config: DmanoConfig,
    instances: BTreeMap<InstanceId, LocalInstance>,
    pending_withdrawals: Vec<(InstanceId, ServiceTypeId)>,
    generation: u64,
}

impl Dmano {
    pub fn new(node: NodeId, config: DmanoConfig) -> Self {
        Dmano {
            node,
            config,
            instances: BTreeMap::new(),
            pending_withdrawals: Vec::new(),
            generation: 0,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn config(&self) -> &DmanoConfig {
        &self.config
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn local_instances(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.instances.keys().copied()
    }

    /// Registers a local instance. With `announce_immediately` the caller
    /// receives the LSA to flood, otherwise it goes out on the next cycle.
    pub fn instantiate(
        &mut self,
        instance: InstanceId,
        service_type: ServiceTypeId,
        initial_cost: u32,
        lsdb: &mut Lsdb,
        now: SimTime,
    ) -> Result<Option<Lsa>, DmanoError> {
        if self.instances.contains_key(&instance) {
            return Err(DmanoError::DuplicateInstance(instance));
        }
        self.instances.insert(
            instance,
            LocalInstance {
                service_type,
                last: None,
            },
        );
        if !self.config.announce_immediately {
            return Ok(None);
        }
        match self.announce(instance, initial_cost, lsdb, now) {
            Ok(lsa) => Ok(Some(lsa)),
            Err(e) => {
                self.instances.remove(&instance);
                Err(e)
            }
        }
    }

    /// Removes a local instance, evicts it from the connector cache and
    /// originates the withdrawal (now or on the next cycle).
    pub fn withdraw(
        &mut self,
        instance: InstanceId,
        lsdb: &mut Lsdb,
        connector: &mut Connector,
        now: SimTime,
    ) -> Result<Option<Lsa>, DmanoError> {
        let local = self
            .instances
            .remove(&instance)
            .ok_or(DmanoError::UnknownInstance(instance))?;
        connector.evict_instance(instance);
        if self.config.announce_immediately {
            Ok(Some(self.originate_withdrawal(
                instance,
                local.service_type,
                lsdb,
                now,
            )?))
        } else {
            self.pending_withdrawals
                .push((instance, local.service_type));
            Ok(None)
        }
    }

    fn originate_withdrawal(
        &self,
        instance: InstanceId,
        service_type: ServiceTypeId,
        lsdb: &mut Lsdb,
        now: SimTime,
    ) -> Result<Lsa, DmanoError> {
        let body = LsaBody::Vnf(VnfLsa {
            service_type,
            instance,
            vnf_cost: 0,
            nsh_endpoint: EndpointAddr::for_node(self.node),
            withdrawn: true,
        });
        Ok(lsdb.originate(self.node, self.node, body, now)?)
    }

    fn announce(
        &mut self,
        instance: InstanceId,
        cost: u32,
        lsdb: &mut Lsdb,
        now: SimTime,
    ) -> Result<Lsa, DmanoError> {
        let local = self
            .instances
            .get_mut(&instance)
            .ok_or(DmanoError::UnknownInstance(instance))?;
        let body = LsaBody::Vnf(VnfLsa {
            service_type: local.service_type,
            instance,
            vnf_cost: cost,
            nsh_endpoint: EndpointAddr::for_node(self.node),
            withdrawn: false,
        });
        let lsa = lsdb.originate(self.node, self.node, body, now)?;
        local.last = Some(Announced { cost, at: now });
        Ok(lsa)
    }

    fn announcement_due(&self, instance: InstanceId, cost: u32, now: SimTime) -> bool {
        let Some(last) = self.instances.get(&instance).and_then(|l| l.last) else {
            return true;
        };
        let refresh = SimTime::from_secs_f64(self.config.refresh_interval);
        cost.abs_diff(last.cost) >= self.config.min_cost_delta
            || now.saturating_sub(last.at) >= refresh
    }

    /// One pass of the main loop. Announcements happen before the table is
    /// computed, so the node routes with its own fresh costs.
    pub fn control_cycle(
        &mut self,
        now: SimTime,
        router: RouterLsa,
        lsdb: &mut Lsdb,
        connector: &mut Connector,
        vnfs: &mut BTreeMap<InstanceId, VnfInstanceModel>,
    ) -> Result<CycleOutcome, DmanoError> {
        let mut outcome = CycleOutcome {
            aged_out: lsdb.age_out(now).len(),
            ..Default::default()
        };

        // Monitor and announce.
        outcome.originated.push(lsdb.originate(
            self.node,
            self.node,
            LsaBody::Router(router),
            now,
        )?);
        for (instance, service_type) in std::mem::take(&mut self.pending_withdrawals) {
            outcome.originated.push(self.originate_withdrawal(
                instance,
                service_type,
                lsdb,
                now,
            )?);
        }
        let local: Vec<InstanceId> = self.instances.keys().copied().collect();
        for instance in local {
            let Some(model) = vnfs.get_mut(&instance) else {
                continue;
            };
            let m = VnfMeasurement {
                instance,
                pps: model.measure_cycle(self.config.cycle_period),
                capacity: model.capacity,
            };
            let cost = derive_cost(&m, self.config.cost_policy, self.config.cost_ceiling);
            if self.announcement_due(instance, cost, now) {
                outcome
                    .originated
                    .push(self.announce(instance, cost, lsdb, now)?);
            }
        }

        // Compute and push.
        outcome.generation = self.refresh_table(lsdb, connector);
        connector.expire_idle(now);
        Ok(outcome)
    }

    /// Announces every local instance that was never announced, at the cost
    /// given by `cost_of`. Used when the node boots.
    pub fn announce_unannounced(
        &mut self,
        cost_of: impl Fn(InstanceId) -> u32,
        lsdb: &mut Lsdb,
        now: SimTime,
    ) -> Result<Vec<Lsa>, DmanoError> {
        let fresh: Vec<InstanceId> = self
            .instances
            .iter()
            .filter(|(_, l)| l.last.is_none())
            .map(|(i, _)| *i)
            .collect();
        fresh
            .into_iter()
            .map(|i| self.announce(i, cost_of(i), lsdb, now))
            .collect()
    }

    /// Rebuilds the service plane view and installs a new table generation.
    pub fn refresh_table(&mut self, lsdb: &Lsdb, connector: &mut Connector) -> u64 {
        self.generation += 1;
        let view = ServicePlaneView::build(&lsdb.snapshot());
        connector.install_table(compute_wcmp(&view, self.node, self.generation));
        self.generation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linkstate::{Adjacency, LsaKey};
    use crate::serviceplane::WcmpTable;

    const N: NodeId = NodeId(4);

    fn m(pps: f64) -> VnfMeasurement {
        VnfMeasurement {
            instance: InstanceId(1),
            pps,
            capacity: 150.0,
        }
    }

    #[test]
    fn cost_policies() {
        let c = 65_535;
        assert_eq!(derive_cost(&m(0.0), CostPolicy::RemainingCapacity, c), 150);
        assert_eq!(derive_cost(&m(80.0), CostPolicy::RemainingCapacity, c), 70);
        assert_eq!(derive_cost(&m(80.0), CostPolicy::ConsumedLoad, c), 80);
        assert_eq!(derive_cost(&m(200.0), CostPolicy::RemainingCapacity, c), 0);
        assert_eq!(derive_cost(&m(80.4), CostPolicy::ConsumedLoad, 50), 50);
    }

    #[test]
    fn policy_names_parse() {
        for p in CostPolicy::ALL {
            assert_eq!(p.name().parse::<CostPolicy>().unwrap(), p);
        }
        assert!("fastest".parse::<CostPolicy>().is_err());
    }

    struct Node {
        dmano: Dmano,
        lsdb: Lsdb,
        connector: Connector,
        vnfs: BTreeMap<InstanceId, VnfInstanceModel>,
    }

    fn node(config: DmanoConfig) -> Node {
        Node {
            dmano: Dmano::new(N, config),
            lsdb: Lsdb::new(N, SimTime::from_secs_f64(3600.0)),
            connector: Connector::new(N, 1, SimTime::from_secs_f64(60.0)),
            vnfs: BTreeMap::new(),
        }
    }

    fn router() -> RouterLsa {
        RouterLsa {
            neighbors: vec![Adjacency {
                neighbor: NodeId(1),
                link_cost: 30,
            }],
        }
    }

    impl Node {
        fn add(&mut self, inst: u32) -> Option<Lsa> {
            let id = InstanceId(inst);
            self.vnfs.insert(
                id,
                VnfInstanceModel::new(id, ServiceTypeId(1), N, 150.0, SimTime::ZERO),
            );
            self.dmano
                .instantiate(id, ServiceTypeId(1), 150, &mut self.lsdb, SimTime::ZERO)
                .unwrap()
        }

        fn cycle(&mut self, t: f64) -> CycleOutcome {
            self.dmano
                .control_cycle(
                    SimTime::from_secs_f64(t),
                    router(),
                    &mut self.lsdb,
                    &mut self.connector,
                    &mut self.vnfs,
                )
                .unwrap()
        }

        fn vnf_lsas(out: &CycleOutcome) -> usize {
            out.originated
                .iter()
                .filter(|l| matches!(l.body, LsaBody::Vnf(_)))
                .count()
        }
    }

    #[test]
    fn idle_node_refreshes_its_instance_every_cycle() {
        let mut n = node(DmanoConfig::default());
        assert!(n.add(1).is_some());
        for k in 1..=5 {
            let out = n.cycle(2.0 * k as f64);
            assert_eq!(Node::vnf_lsas(&out), 1);
            assert_eq!(out.generation, k);
        }
        let key = LsaKey::Vnf {
            origin: N,
            service_type: ServiceTypeId(1),
            instance: InstanceId(1),
        };
        assert_eq!(n.lsdb.get(&key).unwrap().seq, 6);
    }

    #[test]
    fn own_instance_has_zero_network_cost() {
        let mut n = node(DmanoConfig::default());
        n.add(1);
        n.cycle(2.0);
        let table: &WcmpTable = n.connector.table();
        let e = &table.group(ServiceTypeId(1)).unwrap().entries[0];
        assert_eq!(e.cost.network_cost, 0);
        assert_eq!(e.cost.vnf_cost, 150);
    }

    #[test]
    fn unchanged_lsdb_gives_same_table_with_new_generation() {
        let mut n = node(DmanoConfig::default());
        n.add(1);
        n.cycle(2.0);
        let first = n.connector.table().clone();
        n.cycle(4.0);
        let second = n.connector.table();
        assert!(first.same_routes(second));
        assert_eq!(second.generation, first.generation + 1);
    }

    #[test]
    fn min_cost_delta_suppresses_small_changes() {
        let cfg = DmanoConfig {
            min_cost_delta: 10,
            refresh_interval: 10.0,
            ..Default::default()
        };
        let mut n = node(cfg);
        n.add(1);
        // No load: cost stays 150, announced at t=0 by instantiate.
        assert_eq!(Node::vnf_lsas(&n.cycle(2.0)), 0);
        assert_eq!(Node::vnf_lsas(&n.cycle(4.0)), 0);
        // Refresh is due 10 s after the last announcement.
        assert_eq!(Node::vnf_lsas(&n.cycle(10.0)), 1);
    }

    #[test]
    fn deferred_announcement_goes_out_next_cycle() {
        let cfg = DmanoConfig {
            announce_immediately: false,
            ..Default::default()
        };
        let mut n = node(cfg);
        assert!(n.add(1).is_none());
        assert!(n.lsdb.is_empty());
        assert_eq!(Node::vnf_lsas(&n.cycle(2.0)), 1);
    }

    #[test]
    fn withdraw_then_double_withdraw() {
        let mut n = node(DmanoConfig::default());
        n.add(1);
        n.cycle(2.0);
        let lsa = n
            .dmano
            .withdraw(
                InstanceId(1),
                &mut n.lsdb,
                &mut n.connector,
                SimTime::from_secs_f64(3.0),
            )
            .unwrap()
            .unwrap();
        assert!(matches!(&lsa.body, LsaBody::Vnf(v) if v.withdrawn));
        n.cycle(4.0);
        assert!(n.connector.table().group(ServiceTypeId(1)).is_none());
        let err = n
            .dmano
            .withdraw(
                InstanceId(1),
                &mut n.lsdb,
                &mut n.connector,
                SimTime::from_secs_f64(5.0),
            )
            .unwrap_err();
        assert_eq!(err, DmanoError::UnknownInstance(InstanceId(1)));
    }

    #[test]
    fn duplicate_instantiation_is_rejected() {
        let mut n = node(DmanoConfig::default());
        n.add(1);
        let err = n
            .dmano
            .instantiate(
                InstanceId(1),
                ServiceTypeId(1),
                150,
                &mut n.lsdb,
                SimTime::ZERO,
            )
            .unwrap_err();
        assert_eq!(err, DmanoError::DuplicateInstance(InstanceId(1)));
    }
}
