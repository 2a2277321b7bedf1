//! Declarative experiment description (TOML) and its validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::classify::{CatalogError, MAX_CHAIN_LEN};
use crate::dataplane::connector::Sampling;
use crate::dataplane::nsh::MAX_SPI;
use crate::dataplane::{ChainCatalog, ClassificationRule, Prefix};
use crate::dmano::DmanoConfig;
use crate::linkstate::DEFAULT_MAX_AGE_SECS;
use crate::types::{InstanceId, NodeId, ServiceTypeId, SimTime, Spi};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default)]
    pub dmano: DmanoConfig,
    #[serde(default)]
    pub linkstate: LinkStateConfig,
    #[serde(default)]
    pub dataplane: DataplaneConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub chains: Vec<ChainSpec>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub vnfs: Vec<VnfSpec>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

fn default_runs() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkStateConfig {
    pub max_age: f64,
    /// Per-link propagation delay used when a link does not set one.
    pub link_delay: f64,
}

impl Default for LinkStateConfig {
    fn default() -> Self {
        LinkStateConfig {
            max_age: DEFAULT_MAX_AGE_SECS,
            link_delay: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataplaneConfig {
    pub cache_idle_timeout: f64,
    pub sampling: Sampling,
}

impl Default for DataplaneConfig {
    fn default() -> Self {
        DataplaneConfig {
            cache_idle_timeout: crate::dataplane::connector::DEFAULT_CACHE_IDLE_SECS,
            sampling: Sampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub sample_period: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { sample_period: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub cost: u32,
    pub delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub spi: Spi,
    pub services: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub spi: Spi,
    pub src: Option<String>,
    pub dst: Option<String>,
    pub protocol: Option<u8>,
    pub dst_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VnfSpec {
    pub name: String,
    pub node: String,
    pub service: String,
    /// Packets per second.
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    #[default]
    Deterministic,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    pub ingress: String,
    pub egress: String,
    /// New flows per second.
    pub flow_rate: f64,
    /// Seconds.
    pub flow_duration: f64,
    /// Packets per second per flow.
    pub flow_pps: f64,
    #[serde(default)]
    pub arrival: ArrivalProcess,
    #[serde(default)]
    pub start: f64,
    pub stop: Option<f64>,
    #[serde(default = "default_src_prefix")]
    pub src_prefix: String,
    #[serde(default = "default_dst_addr")]
    pub dst_addr: Ipv4Addr,
    #[serde(default = "default_protocol")]
    pub protocol: u8,
    #[serde(default = "default_dst_port")]
    pub dst_port: u16,
}

fn default_src_prefix() -> String {
    "10.1.0.0/16".to_string()
}

fn default_dst_addr() -> Ipv4Addr {
    Ipv4Addr::new(192, 0, 2, 10)
}

fn default_protocol() -> u8 {
    6
}

fn default_dst_port() -> u16 {
    80
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    Instantiate {
        at: f64,
        name: String,
        node: String,
        service: String,
        capacity: f64,
    },
    Withdraw {
        at: f64,
        name: String,
    },
}

impl EventSpec {
    pub fn at(&self) -> f64 {
        match self {
            EventSpec::Instantiate { at, .. } | EventSpec::Withdraw { at, .. } => *at,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(ValidationErrors),
}

/// Every violation found in a scenario, not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<String>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario has {} error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

// Resolved form consumed by the simulator.

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledLink {
    pub a: NodeId,
    pub b: NodeId,
    pub cost: u32,
    pub delay: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledVnf {
    pub instance: InstanceId,
    pub name: String,
    pub host: NodeId,
    pub service_type: ServiceTypeId,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledTraffic {
    pub ingress: NodeId,
    pub egress: NodeId,
    pub flow_rate: f64,
    pub flow_duration: SimTime,
    pub flow_pps: f64,
    pub arrival: ArrivalProcess,
    pub start: SimTime,
    pub stop: SimTime,
    pub src_prefix: Prefix,
    pub dst_addr: Ipv4Addr,
    pub protocol: u8,
    pub dst_port: u16,
}

impl CompiledTraffic {
    /// Little's law: flows in the system times per-flow rate.
    pub fn steady_state_pps(&self) -> f64 {
        self.flow_rate * self.flow_duration.as_secs_f64() * self.flow_pps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompiledEvent {
    Instantiate(CompiledVnf),
    Withdraw { instance: InstanceId, host: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub at: SimTime,
    pub event: CompiledEvent,
}

/// Steady-state measurement window of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseWindow {
    pub name: String,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone)]
pub struct CompiledScenario {
    pub source: Scenario,
    pub duration: SimTime,
    pub node_names: BTreeMap<NodeId, String>,
    pub links: Vec<CompiledLink>,
    pub service_names: BTreeMap<ServiceTypeId, String>,
    pub catalog: ChainCatalog,
    pub rules: Vec<ClassificationRule>,
    pub vnfs: Vec<CompiledVnf>,
    pub traffic: Vec<CompiledTraffic>,
    /// Sorted by time, stable for equal times.
    pub events: Vec<TimedEvent>,
    pub phases: Vec<PhaseWindow>,
}

impl CompiledScenario {
    pub fn node_name(&self, node: NodeId) -> String {
        self.node_names
            .get(&node)
            .cloned()
            .unwrap_or_else(|| node.0.to_string())
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.node_names.keys().copied()
    }

    /// Every instance that exists at some point of the run.
    pub fn all_instances(&self) -> Vec<CompiledVnf> {
        let mut all = self.vnfs.clone();
        for e in &self.events {
            if let CompiledEvent::Instantiate(v) = &e.event {
                all.push(v.clone());
            }
        }
        all
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Reads, parses and validates in one go.
    pub fn load_compiled(path: impl AsRef<Path>) -> Result<CompiledScenario, ScenarioError> {
        Self::load(path)?.compile().map_err(ScenarioError::Invalid)
    }

    /// Checks every reference and range, resolving names to ids.
    pub fn compile(&self) -> Result<CompiledScenario, ValidationErrors> {
        let mut errs = Vec::new();

        if !(self.duration > 0.0 && self.duration.is_finite()) {
            errs.push(format!("duration must be positive, got {}", self.duration));
        }
        if self.runs == 0 {
            errs.push("runs must be at least 1".into());
        }
        if !positive(self.dmano.cycle_period) {
            errs.push(format!(
                "dmano.cycle_period must be positive, got {}",
                self.dmano.cycle_period
            ));
        }
        if !positive(self.dmano.refresh_interval) {
            errs.push("dmano.refresh_interval must be positive".into());
        }
        if !positive(self.linkstate.max_age) {
            errs.push("linkstate.max_age must be positive".into());
        }
        if !non_negative(self.linkstate.link_delay) {
            errs.push("linkstate.link_delay must not be negative".into());
        }
        if !positive(self.dataplane.cache_idle_timeout) {
            errs.push("dataplane.cache_idle_timeout must be positive".into());
        }
        if !positive(self.metrics.sample_period) {
            errs.push("metrics.sample_period must be positive".into());
        }

        // Nodes.
        let mut node_ids: BTreeMap<&str, NodeId> = BTreeMap::new();
        let mut node_names = BTreeMap::new();
        if self.nodes.is_empty() {
            errs.push("at least one node is required".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let id = NodeId(i as u32 + 1);
            if node_ids.insert(n.name.as_str(), id).is_some() {
                errs.push(format!("duplicate node name `{}`", n.name));
            }
            node_names.insert(id, n.name.clone());
        }
        let node = |name: &str, what: &str, errs: &mut Vec<String>| -> Option<NodeId> {
            let id = node_ids.get(name).copied();
            if id.is_none() {
                errs.push(format!("{what} references unknown node `{name}`"));
            }
            id
        };

        // Links.
        let mut links = Vec::new();
        let mut seen_links = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            let what = format!("link #{}", i + 1);
            let a = node(&l.a, &what, &mut errs);
            let b = node(&l.b, &what, &mut errs);
            if l.cost == 0 {
                errs.push(format!("{what}: cost must be at least 1"));
            }
            let delay = l.delay.unwrap_or(self.linkstate.link_delay);
            if !non_negative(delay) {
                errs.push(format!("{what}: delay must not be negative"));
            }
            if let (Some(a), Some(b)) = (a, b) {
                if a == b {
                    errs.push(format!("{what}: self-loop on `{}`", l.a));
                } else if !seen_links.insert((a.min(b), a.max(b))) {
                    errs.push(format!("{what}: duplicate link {}-{}", l.a, l.b));
                } else {
                    links.push(CompiledLink {
                        a,
                        b,
                        cost: l.cost,
                        delay: SimTime::from_secs_f64(delay),
                    });
                }
            }
        }

        // Services and chains.
        let mut service_ids: BTreeMap<&str, ServiceTypeId> = BTreeMap::new();
        let mut service_names = BTreeMap::new();
        for (i, s) in self.services.iter().enumerate() {
            let id = ServiceTypeId(i as u32 + 1);
            if service_ids.insert(s.name.as_str(), id).is_some() {
                errs.push(format!("duplicate service name `{}`", s.name));
            }
            service_names.insert(id, s.name.clone());
        }
        let service = |name: &str, what: &str, errs: &mut Vec<String>| -> Option<ServiceTypeId> {
            let id = service_ids.get(name).copied();
            if id.is_none() {
                errs.push(format!("{what} references unknown service `{name}`"));
            }
            id
        };

        let mut chains = Vec::new();
        let mut spis = BTreeSet::new();
        for c in &self.chains {
            let what = format!("chain {}", c.spi);
            if c.spi == 0 || c.spi > MAX_SPI {
                errs.push(format!("{what}: SPI must be in 1..={MAX_SPI}"));
            }
            if !spis.insert(c.spi) {
                errs.push(format!("{what}: duplicate SPI"));
            }
            if c.services.is_empty() {
                errs.push(format!("{what}: no services"));
            }
            if c.services.len() > MAX_CHAIN_LEN {
                errs.push(format!(
                    "{what}: {} services, at most {MAX_CHAIN_LEN}",
                    c.services.len()
                ));
            }
            let resolved: Vec<_> = c
                .services
                .iter()
                .filter_map(|s| service(s, &what, &mut errs))
                .collect();
            chains.push((c.spi, resolved));
        }
        let catalog = match ChainCatalog::new(
            chains
                .into_iter()
                .filter(|(spi, s)| !s.is_empty() && s.len() <= MAX_CHAIN_LEN && *spi <= MAX_SPI),
        ) {
            Ok(c) => c,
            Err(e @ CatalogError::EmptyChain { .. })
            | Err(e @ CatalogError::ChainTooLong { .. })
            | Err(e @ CatalogError::SpiOutOfRange { .. }) => {
                errs.push(e.to_string());
                ChainCatalog::default()
            }
        };

        // Rules.
        let mut rules = Vec::new();
        for (i, r) in self.rules.iter().enumerate() {
            let what = format!("rule #{}", i + 1);
            if !spis.contains(&r.spi) {
                errs.push(format!("{what} references unknown chain {}", r.spi));
            }
            let mut parse = |p: &Option<String>| -> Option<Prefix> {
                p.as_ref().and_then(|s| match s.parse() {
                    Ok(p) => Some(p),
                    Err(e) => {
                        errs.push(format!("{what}: bad prefix {e}"));
                        None
                    }
                })
            };
            let src = parse(&r.src);
            let dst = parse(&r.dst);
            rules.push(ClassificationRule {
                spi: r.spi,
                src,
                dst,
                protocol: r.protocol,
                dst_port: r.dst_port,
            });
        }

        // VNFs, initial and instantiated by events.
        let mut next_instance = 1u32;
        let mut vnf_by_name: BTreeMap<String, (InstanceId, NodeId, f64)> = BTreeMap::new();
        let mut vnfs = Vec::new();
        let mut check_vnf = |by_name: &mut BTreeMap<String, (InstanceId, NodeId, f64)>,
                             name: &str,
                             node_name: &str,
                             svc: &str,
                             capacity: f64,
                             added_at: f64,
                             errs: &mut Vec<String>|
         -> Option<CompiledVnf> {
            let what = format!("vnf `{name}`");
            if by_name.contains_key(name) {
                errs.push(format!("duplicate vnf name `{name}`"));
            }
            if !(capacity > 0.0 && capacity.is_finite()) {
                errs.push(format!("{what}: capacity must be positive"));
            }
            let host = node(node_name, &what, errs);
            let service_type = service(svc, &what, errs);
            let instance = InstanceId(next_instance);
            next_instance += 1;
            let (host, service_type) = (host?, service_type?);
            by_name.insert(name.to_string(), (instance, host, added_at));
            Some(CompiledVnf {
                instance,
                name: name.to_string(),
                host,
                service_type,
                capacity,
            })
        };
        for v in &self.vnfs {
            if let Some(c) = check_vnf(
                &mut vnf_by_name,
                &v.name,
                &v.node,
                &v.service,
                v.capacity,
                0.0,
                &mut errs,
            ) {
                vnfs.push(c);
            }
        }

        let mut order: Vec<&EventSpec> = self.events.iter().collect();
        order.sort_by(|a, b| a.at().total_cmp(&b.at()));
        let mut events = Vec::new();
        let mut withdrawn = BTreeSet::new();
        for e in order {
            let at = e.at();
            if !(at >= 0.0 && at <= self.duration) {
                errs.push(format!("event at {at}: outside [0, duration]"));
            }
            match e {
                EventSpec::Instantiate {
                    name,
                    node,
                    service,
                    capacity,
                    ..
                } => {
                    if let Some(c) = check_vnf(
                        &mut vnf_by_name,
                        name,
                        node,
                        service,
                        *capacity,
                        at,
                        &mut errs,
                    ) {
                        events.push(TimedEvent {
                            at: SimTime::from_secs_f64(at),
                            event: CompiledEvent::Instantiate(c),
                        });
                    }
                }
                EventSpec::Withdraw { name, .. } => match vnf_by_name.get(name) {
                    None => errs.push(format!("withdraw at {at}: unknown vnf `{name}`")),
                    Some(_) if withdrawn.contains(name) => {
                        errs.push(format!("withdraw at {at}: vnf `{name}` already withdrawn"))
                    }
                    Some(&(instance, host, added_at)) => {
                        if added_at > at {
                            errs.push(format!(
                                "withdraw at {at}: vnf `{name}` only exists from {added_at}"
                            ));
                        }
                        withdrawn.insert(name.clone());
                        events.push(TimedEvent {
                            at: SimTime::from_secs_f64(at),
                            event: CompiledEvent::Withdraw { instance, host },
                        });
                    }
                },
            }
        }

        // Traffic.
        let mut traffic = Vec::new();
        for (i, t) in self.traffic.iter().enumerate() {
            let what = format!("traffic #{}", i + 1);
            let ingress = node(&t.ingress, &what, &mut errs);
            let egress = node(&t.egress, &what, &mut errs);
            if !(t.flow_rate >= 0.0 && t.flow_rate.is_finite()) {
                errs.push(format!("{what}: flow_rate must not be negative"));
            }
            if !positive(t.flow_duration) {
                errs.push(format!("{what}: flow_duration must be positive"));
            }
            if !(t.flow_pps > 0.0 && t.flow_pps.is_finite()) {
                errs.push(format!("{what}: flow_pps must be positive"));
            }
            if !non_negative(t.start) {
                errs.push(format!("{what}: start must not be negative"));
            }
            if let Some(stop) = t.stop {
                if stop.is_nan() || stop < t.start {
                    errs.push(format!("{what}: stop before start"));
                }
            }
            let src_prefix = match t.src_prefix.parse::<Prefix>() {
                Ok(p) => Some(p),
                Err(e) => {
                    errs.push(format!("{what}: bad src_prefix {e}"));
                    None
                }
            };
            if let (Some(ingress), Some(egress), Some(src_prefix)) = (ingress, egress, src_prefix) {
                traffic.push(CompiledTraffic {
                    ingress,
                    egress,
                    flow_rate: t.flow_rate,
                    flow_duration: SimTime::from_secs_f64(t.flow_duration),
                    flow_pps: t.flow_pps,
                    arrival: t.arrival,
                    start: SimTime::from_secs_f64(t.start),
                    stop: SimTime::from_secs_f64(
                        t.stop.unwrap_or(self.duration).min(self.duration),
                    ),
                    src_prefix,
                    dst_addr: t.dst_addr,
                    protocol: t.protocol,
                    dst_port: t.dst_port,
                });
            }
        }

        if !errs.is_empty() {
            return Err(ValidationErrors(errs));
        }

        let duration = SimTime::from_secs_f64(self.duration);
        let phases = phase_windows(&events, &traffic, duration);
        Ok(CompiledScenario {
            source: self.clone(),
            duration,
            node_names,
            links,
            service_names,
            catalog,
            rules,
            vnfs,
            traffic,
            events,
            phases,
        })
    }
}

/// Phases are delimited by timed events; the steady-state window of a phase
/// skips one flow lifetime after the phase starts.
/// False for NaN as well.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn non_negative(x: f64) -> bool {
    x >= 0.0
}

fn phase_windows(
    events: &[TimedEvent],
    traffic: &[CompiledTraffic],
    duration: SimTime,
) -> Vec<PhaseWindow> {
    let settle = traffic
        .iter()
        .map(|t| t.flow_duration)
        .max()
        .unwrap_or(SimTime::ZERO);
    let mut bounds: Vec<SimTime> = vec![SimTime::ZERO];
    for e in events {
        if e.at > SimTime::ZERO && e.at < duration && bounds.last() != Some(&e.at) {
            bounds.push(e.at);
        }
    }
    bounds.push(duration);
    bounds
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let start = w[0] + settle;
            (start < w[1]).then(|| PhaseWindow {
                name: format!("phase{}", i + 1),
                start,
                end: w[1],
            })
        })
        .collect()
}
