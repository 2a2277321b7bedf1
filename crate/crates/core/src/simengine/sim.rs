use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use super::event::EventQueue;
use super::metrics::{phase_shares, InstanceSample, MetricsFrame, RunSummary};
use super::scenario::{ArrivalProcess, CompiledEvent, CompiledScenario, CompiledVnf};
use crate::dataplane::{
    classify, egress, Connector, DropCause, FlowKey, ForwardDecision, NshPacket, PacketMeta,
    VnfInstanceModel,
};
use crate::dmano::{derive_cost, Dmano, DmanoError, VnfMeasurement};
use crate::linkstate::{Adjacency, LinkStateError, Lsa, LsaBody, Lsdb, RouterLsa};
use crate::serviceplane::spf::{shortest_path_tree, Graph};
use crate::serviceplane::WcmpTable;
use crate::types::{InstanceId, NodeId, ServiceTypeId, SimTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("control plane error on node {node}: {source}")]
    Dmano {
        node: NodeId,
        #[source]
        source: DmanoError,
    },
    #[error("link-state error on node {node}: {source}")]
    LinkState {
        node: NodeId,
        #[source]
        source: LinkStateError,
    },
}

/// Mixes a base seed with a stream number (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub frames: Vec<MetricsFrame>,
}

#[derive(Debug)]
enum Arrival {
    /// Next packet of a flow at its ingress node.
    Ingress { flow: usize },
    /// Tunneled to the host of the selected instance.
    Tunnel {
        node: NodeId,
        service_type: ServiceTypeId,
        instance: InstanceId,
        pkt: Box<NshPacket>,
    },
    /// Chain complete, on its way to the egress node.
    Egress { pkt: Box<NshPacket> },
}

#[derive(Debug)]
enum Event {
    PacketArrival(Arrival),
    LsaDelivery { to: NodeId, from: NodeId, lsa: Lsa },
    DmanoCycle(NodeId),
    FlowStart(usize),
    FlowEnd,
    Timed(usize),
    MetricSample,
}

impl Event {
    /// Data in transit is drained after the end of the run.
    fn is_transit(&self) -> bool {
        matches!(
            self,
            Event::PacketArrival(Arrival::Tunnel { .. } | Arrival::Egress { .. })
        )
    }
}

struct NodeState {
    lsdb: Lsdb,
    connector: Connector,
    dmano: Dmano,
    vnfs: BTreeMap<InstanceId, VnfInstanceModel>,
    neighbors: Vec<(NodeId, SimTime)>,
    router: RouterLsa,
}

struct Flow {
    key: FlowKey,
    ingress: NodeId,
    egress: NodeId,
    end: SimTime,
    interval: SimTime,
}

struct TrafficState {
    rng: ChaCha8Rng,
    started: u64,
}

struct Simulation<'a> {
    sc: &'a CompiledScenario,
    now: SimTime,
    queue: EventQueue<Event>,
    nodes: BTreeMap<NodeId, NodeState>,
    path_delay: BTreeMap<(NodeId, NodeId), SimTime>,
    flows: Vec<Flow>,
    traffic: Vec<TrafficState>,
    /// Instances currently alive, in id order.
    alive: BTreeMap<InstanceId, NodeId>,
    frames: Vec<MetricsFrame>,
    packets_in: u64,
    delivered: u64,
    drops: BTreeMap<DropCause, u64>,
    flows_completed: u64,
    lsa_tx: u64,
    first_steered: BTreeMap<InstanceId, SimTime>,
    trace_violations: u64,
    latency_sum: f64,
}

/// Runs one replication. Output depends only on the scenario, its seed and
/// `run_index`.
pub fn run(sc: &CompiledScenario, run_index: u32) -> Result<RunOutput, SimError> {
    let seed = derive_seed(sc.source.seed, u64::from(run_index));
    let mut sim = Simulation::new(sc, seed);
    sim.bootstrap()?;
    sim.run_loop()?;
    Ok(sim.finish(run_index, seed))
}

/// The table every connector holds after all events up to `at` ran.
pub fn wcmp_tables_at(
    sc: &CompiledScenario,
    run_index: u32,
    at: SimTime,
) -> Result<BTreeMap<NodeId, WcmpTable>, SimError> {
    let seed = derive_seed(sc.source.seed, u64::from(run_index));
    let mut sim = Simulation::new(sc, seed);
    sim.bootstrap()?;
    sim.run_until(at.min(sc.duration))?;
    Ok(sim
        .nodes
        .iter()
        .map(|(id, st)| (*id, st.connector.table().clone()))
        .collect())
}

fn link_graph(sc: &CompiledScenario) -> Graph {
    let mut g: Graph = sc.node_ids().map(|n| (n, Vec::new())).collect();
    for l in &sc.links {
        g.entry(l.a).or_default().push((l.b, u64::from(l.cost)));
        g.entry(l.b).or_default().push((l.a, u64::from(l.cost)));
    }
    g
}

/// Propagation delay along the IGP shortest path for every reachable pair.
fn path_delays(sc: &CompiledScenario) -> BTreeMap<(NodeId, NodeId), SimTime> {
    let graph = link_graph(sc);
    let link_delay: BTreeMap<(NodeId, NodeId), SimTime> = sc
        .links
        .iter()
        .flat_map(|l| [((l.a, l.b), l.delay), ((l.b, l.a), l.delay)])
        .collect();
    let mut out = BTreeMap::new();
    for src in sc.node_ids() {
        let tree = shortest_path_tree(&graph, src);
        for dst in sc.node_ids() {
            if let Some(path) = tree.path_to(dst) {
                let d = path
                    .windows(2)
                    .fold(SimTime::ZERO, |acc, w| acc + link_delay[&(w[0], w[1])]);
                out.insert((src, dst), d);
            }
        }
    }
    out
}

fn idle_cost(sc: &CompiledScenario, capacity: f64) -> u32 {
    let m = VnfMeasurement {
        instance: InstanceId(0),
        pps: 0.0,
        capacity,
    };
    derive_cost(
        &m,
        sc.source.dmano.cost_policy,
        sc.source.dmano.cost_ceiling,
    )
}

impl<'a> Simulation<'a> {
    fn new(sc: &'a CompiledScenario, seed: u64) -> Self {
        let max_age = SimTime::from_secs_f64(sc.source.linkstate.max_age);
        let idle = SimTime::from_secs_f64(sc.source.dataplane.cache_idle_timeout);
        let mut adjacency: BTreeMap<NodeId, Vec<(Adjacency, SimTime)>> =
            sc.node_ids().map(|n| (n, Vec::new())).collect();
        for l in &sc.links {
            adjacency.get_mut(&l.a).unwrap().push((
                Adjacency {
                    neighbor: l.b,
                    link_cost: l.cost,
                },
                l.delay,
            ));
            adjacency.get_mut(&l.b).unwrap().push((
                Adjacency {
                    neighbor: l.a,
                    link_cost: l.cost,
                },
                l.delay,
            ));
        }
        let nodes = adjacency
            .into_iter()
            .map(|(id, mut adj)| {
                adj.sort();
                let state = NodeState {
                    lsdb: Lsdb::new(id, max_age),
                    connector: Connector::with_sampling(
                        id,
                        derive_seed(seed, u64::from(id.0)),
                        idle,
                        sc.source.dataplane.sampling,
                    ),
                    dmano: Dmano::new(id, sc.source.dmano.clone()),
                    vnfs: BTreeMap::new(),
                    neighbors: adj.iter().map(|(a, d)| (a.neighbor, *d)).collect(),
                    router: RouterLsa {
                        neighbors: adj.iter().map(|(a, _)| *a).collect(),
                    },
                };
                (id, state)
            })
            .collect();
        let traffic = (0..sc.traffic.len())
            .map(|i| TrafficState {
                rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, (1 << 32) + i as u64)),
                started: 0,
            })
            .collect();
        Simulation {
            sc,
            now: SimTime::ZERO,
            queue: EventQueue::new(),
            nodes,
            path_delay: path_delays(sc),
            flows: Vec::new(),
            traffic,
            alive: BTreeMap::new(),
            frames: Vec::new(),
            packets_in: 0,
            delivered: 0,
            drops: DropCause::ALL.iter().map(|c| (*c, 0)).collect(),
            flows_completed: 0,
            lsa_tx: 0,
            first_steered: BTreeMap::new(),
            trace_violations: 0,
            latency_sum: 0.0,
        }
    }

    fn node(&mut self, id: NodeId) -> &mut NodeState {
        self.nodes.get_mut(&id).expect("node exists")
    }

    /// Brings the control plane to a converged state at t = 0: every node
    /// announces its adjacencies and initial instances, flooding runs to
    /// quiescence and every node installs its first table.
    fn bootstrap(&mut self) -> Result<(), SimError> {
        let sc = self.sc;
        let mut outbox: Vec<(NodeId, Lsa)> = Vec::new();
        for v in &sc.vnfs {
            self.add_vnf(v);
        }
        for (&id, st) in self.nodes.iter_mut() {
            let lsa = st
                .lsdb
                .originate(id, id, LsaBody::Router(st.router.clone()), SimTime::ZERO)
                .map_err(|source| SimError::LinkState { node: id, source })?;
            outbox.push((id, lsa));
            for v in sc.vnfs.iter().filter(|v| v.host == id) {
                if let Some(lsa) = st
                    .dmano
                    .instantiate(
                        v.instance,
                        v.service_type,
                        idle_cost(sc, v.capacity),
                        &mut st.lsdb,
                        SimTime::ZERO,
                    )
                    .map_err(|source| SimError::Dmano { node: id, source })?
                {
                    outbox.push((id, lsa));
                }
            }
            let capacities: BTreeMap<InstanceId, f64> =
                st.vnfs.values().map(|m| (m.instance, m.capacity)).collect();
            let fresh = st
                .dmano
                .announce_unannounced(
                    |i| idle_cost(sc, capacities[&i]),
                    &mut st.lsdb,
                    SimTime::ZERO,
                )
                .map_err(|source| SimError::Dmano { node: id, source })?;
            outbox.extend(fresh.into_iter().map(|l| (id, l)));
        }

        let mut in_flight: VecDeque<(Lsa, NodeId, NodeId)> = VecDeque::new();
        for (from, lsa) in outbox {
            for &(to, _) in &self.nodes[&from].neighbors {
                in_flight.push_back((lsa.clone(), from, to));
                self.lsa_tx += 1;
            }
        }
        while let Some((lsa, from, to)) = in_flight.pop_front() {
            let st = self.node(to);
            let ids: Vec<NodeId> = st.neighbors.iter().map(|n| n.0).collect();
            for next in st.lsdb.flood(lsa.clone(), from, &ids, SimTime::ZERO) {
                in_flight.push_back((lsa.clone(), to, next));
                self.lsa_tx += 1;
            }
        }
        for st in self.nodes.values_mut() {
            st.dmano.refresh_table(&st.lsdb, &mut st.connector);
        }

        // Timers. Cycles come first so that at equal times the control
        // plane acts before traffic.
        let period = SimTime::from_secs_f64(sc.source.dmano.cycle_period);
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            self.queue.schedule(period, Event::DmanoCycle(id));
        }
        for (i, e) in sc.events.iter().enumerate() {
            self.queue.schedule(e.at, Event::Timed(i));
        }
        for (i, t) in sc.traffic.iter().enumerate() {
            if t.flow_rate > 0.0 && t.start < t.stop {
                self.queue.schedule(t.start, Event::FlowStart(i));
            }
        }
        let sample = SimTime::from_secs_f64(sc.source.metrics.sample_period);
        self.queue.schedule(sample, Event::MetricSample);
        Ok(())
    }

    fn add_vnf(&mut self, v: &CompiledVnf) {
        let now = self.now;
        self.node(v.host).vnfs.insert(
            v.instance,
            VnfInstanceModel::new(v.instance, v.service_type, v.host, v.capacity, now),
        );
        self.alive.insert(v.instance, v.host);
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        let end = self.sc.duration;
        while let Some((t, _, ev)) = self.queue.pop() {
            if t > end && !ev.is_transit() {
                continue;
            }
            self.dispatch(t, ev)?;
        }
        Ok(())
    }

    /// Processes every event up to and including `until`.
    fn run_until(&mut self, until: SimTime) -> Result<(), SimError> {
        while self.queue.peek_time().is_some_and(|t| t <= until) {
            let (t, _, ev) = self.queue.pop().expect("peeked");
            self.dispatch(t, ev)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, t: SimTime, ev: Event) -> Result<(), SimError> {
        debug_assert!(t >= self.now, "causality violated");
        self.now = t;
        match ev {
            Event::PacketArrival(a) => self.on_packet(a),
            Event::LsaDelivery { to, from, lsa } => self.on_lsa(to, from, lsa),
            Event::DmanoCycle(node) => self.on_cycle(node)?,
            Event::FlowStart(i) => self.on_flow_start(i),
            Event::FlowEnd => self.flows_completed += 1,
            Event::Timed(i) => self.on_scenario_event(i)?,
            Event::MetricSample => self.on_sample(),
        }
        Ok(())
    }

    fn send_lsa(&mut self, from: NodeId, lsa: &Lsa, except: Option<NodeId>) {
        let now = self.now;
        let targets: Vec<(NodeId, SimTime)> = self.nodes[&from]
            .neighbors
            .iter()
            .filter(|(n, _)| Some(*n) != except)
            .copied()
            .collect();
        for (to, delay) in targets {
            self.lsa_tx += 1;
            self.queue.schedule(
                now + delay,
                Event::LsaDelivery {
                    to,
                    from,
                    lsa: lsa.clone(),
                },
            );
        }
    }

    fn on_lsa(&mut self, to: NodeId, from: NodeId, lsa: Lsa) {
        let now = self.now;
        let st = self.node(to);
        let ids: Vec<NodeId> = st.neighbors.iter().map(|n| n.0).collect();
        if !st.lsdb.flood(lsa.clone(), from, &ids, now).is_empty() {
            self.send_lsa(to, &lsa, Some(from));
        }
    }

    fn on_cycle(&mut self, id: NodeId) -> Result<(), SimError> {
        let now = self.now;
        let st = self.node(id);
        let router = st.router.clone();
        let outcome = st
            .dmano
            .control_cycle(now, router, &mut st.lsdb, &mut st.connector, &mut st.vnfs)
            .map_err(|source| SimError::Dmano { node: id, source })?;
        for lsa in &outcome.originated {
            self.send_lsa(id, lsa, None);
        }
        let period = SimTime::from_secs_f64(self.sc.source.dmano.cycle_period);
        self.queue.schedule(now + period, Event::DmanoCycle(id));
        Ok(())
    }

    fn on_scenario_event(&mut self, index: usize) -> Result<(), SimError> {
        let sc = self.sc;
        let now = self.now;
        match &sc.events[index].event {
            CompiledEvent::Instantiate(v) => {
                self.add_vnf(v);
                let cost = idle_cost(sc, v.capacity);
                let st = self.node(v.host);
                let lsa = st
                    .dmano
                    .instantiate(v.instance, v.service_type, cost, &mut st.lsdb, now)
                    .map_err(|source| SimError::Dmano {
                        node: v.host,
                        source,
                    })?;
                if let Some(lsa) = lsa {
                    self.send_lsa(v.host, &lsa, None);
                }
            }
            CompiledEvent::Withdraw { instance, host } => {
                self.alive.remove(instance);
                let st = self.node(*host);
                st.vnfs.remove(instance);
                let lsa = st
                    .dmano
                    .withdraw(*instance, &mut st.lsdb, &mut st.connector, now)
                    .map_err(|source| SimError::Dmano {
                        node: *host,
                        source,
                    })?;
                if let Some(lsa) = lsa {
                    self.send_lsa(*host, &lsa, None);
                }
            }
        }
        Ok(())
    }

    fn on_flow_start(&mut self, class: usize) {
        let t = &self.sc.traffic[class];
        let now = self.now;
        let state = &mut self.traffic[class];
        let n = state.started;
        state.started += 1;

        let gap = match t.arrival {
            ArrivalProcess::Deterministic => 1.0 / t.flow_rate,
            ArrivalProcess::Poisson => Exp::new(t.flow_rate)
                .expect("positive rate")
                .sample(&mut state.rng),
        };
        let next = now + SimTime::from_secs_f64(gap);
        if next < t.stop {
            self.queue.schedule(next, Event::FlowStart(class));
        }

        let host_bits = 32 - u32::from(t.src_prefix.len);
        let hosts = if host_bits >= 32 {
            u64::MAX
        } else {
            1u64 << host_bits
        };
        let base = u32::from(t.src_prefix.addr) & !((hosts - 1) as u32);
        let src_addr = Ipv4Addr::from(base | (n % hosts) as u32);
        let src_port = 1024 + ((n / hosts) % 64_000) as u16;
        let key = FlowKey {
            src_addr,
            dst_addr: t.dst_addr,
            src_port,
            dst_port: t.dst_port,
            protocol: t.protocol,
        };
        let id = self.flows.len();
        self.flows.push(Flow {
            key,
            ingress: t.ingress,
            egress: t.egress,
            end: now + t.flow_duration,
            interval: SimTime::from_secs_f64(1.0 / t.flow_pps),
        });
        self.queue
            .schedule(now, Event::PacketArrival(Arrival::Ingress { flow: id }));
        self.queue.schedule(now + t.flow_duration, Event::FlowEnd);
    }

    fn drop_packet(&mut self, cause: DropCause) {
        *self.drops.entry(cause).or_default() += 1;
    }

    fn on_packet(&mut self, arrival: Arrival) {
        match arrival {
            Arrival::Ingress { flow } => {
                let now = self.now;
                let f = &self.flows[flow];
                let next = now + f.interval;
                if next < f.end {
                    self.queue
                        .schedule(next, Event::PacketArrival(Arrival::Ingress { flow }));
                }
                self.packets_in += 1;
                let ingress = f.ingress;
                let meta = PacketMeta::new(flow as u64, now);
                match classify(f.key, meta, &self.sc.rules, &self.sc.catalog) {
                    Some(pkt) => self.steer(ingress, pkt),
                    None => self.drop_packet(DropCause::Unclassified),
                }
            }
            Arrival::Tunnel {
                node,
                service_type,
                instance,
                pkt,
            } => {
                if let Some(pkt) = self.run_vnf(node, service_type, instance, *pkt) {
                    self.steer(node, pkt);
                }
            }
            Arrival::Egress { pkt } => self.deliver(*pkt),
        }
    }

    /// Hands a packet to the connector of `node` and follows local
    /// decisions until the packet leaves the node.
    fn steer(&mut self, node: NodeId, mut pkt: NshPacket) {
        loop {
            let now = self.now;
            let sc = self.sc;
            let decision = self
                .node(node)
                .connector
                .forward(&mut pkt, &sc.catalog, now);
            match decision {
                ForwardDecision::Egress => {
                    let egress = self.flows[pkt.meta.flow_id as usize].egress;
                    if egress == node {
                        self.deliver(pkt);
                    } else {
                        self.transit(node, egress, Arrival::Egress { pkt: Box::new(pkt) });
                    }
                    return;
                }
                ForwardDecision::Drop(cause) => {
                    self.drop_packet(cause);
                    return;
                }
                ForwardDecision::LocalDeliver {
                    service_type,
                    instance,
                } => {
                    self.first_steered.entry(instance).or_insert(now);
                    match self.run_vnf(node, service_type, instance, pkt) {
                        Some(p) => pkt = p,
                        None => return,
                    }
                }
                ForwardDecision::Tunnel {
                    service_type,
                    instance,
                    host,
                    ..
                } => {
                    self.first_steered.entry(instance).or_insert(now);
                    self.transit(
                        node,
                        host,
                        Arrival::Tunnel {
                            node: host,
                            service_type,
                            instance,
                            pkt: Box::new(pkt),
                        },
                    );
                    return;
                }
            }
        }
    }

    fn transit(&mut self, from: NodeId, to: NodeId, arrival: Arrival) {
        match self.path_delay.get(&(from, to)) {
            Some(&d) => {
                let at = self.now + d;
                self.queue.schedule(at, Event::PacketArrival(arrival));
            }
            None => self.drop_packet(DropCause::Unroutable),
        }
    }

    fn run_vnf(
        &mut self,
        node: NodeId,
        service_type: ServiceTypeId,
        instance: InstanceId,
        pkt: NshPacket,
    ) -> Option<NshPacket> {
        let now = self.now;
        let result = match self.node(node).vnfs.get_mut(&instance) {
            Some(v) if v.service_type == service_type => v.process(pkt, now),
            Some(v) => Err(v.reject_misdelivery()),
            None => Err(DropCause::Misdelivery),
        };
        match result {
            Ok(p) => Some(p),
            Err(cause) => {
                self.drop_packet(cause);
                None
            }
        }
    }

    fn deliver(&mut self, pkt: NshPacket) {
        let rec = egress(pkt, self.now);
        let chain = self.sc.catalog.chain(rec.spi).unwrap_or(&[]);
        let n = chain.len();
        let ok = rec.hops.len() == n
            && rec
                .hops
                .iter()
                .enumerate()
                .all(|(i, h)| usize::from(h.si) == n - i && h.service_type == chain[i]);
        if !ok {
            self.trace_violations += 1;
        }
        self.delivered += 1;
        self.latency_sum += rec.latency.as_secs_f64();
    }

    fn on_sample(&mut self) {
        let period = self.sc.source.metrics.sample_period;
        let mut instances = Vec::with_capacity(self.alive.len());
        let alive: Vec<(InstanceId, NodeId)> = self.alive.iter().map(|(i, h)| (*i, *h)).collect();
        for (instance, host) in alive {
            let Some(v) = self.node(host).vnfs.get_mut(&instance) else {
                continue;
            };
            let count = v.take_sample();
            instances.push((instance, host, count, v.overload_drops()));
        }
        let total: u64 = instances.iter().map(|x| x.2).sum();
        let frame = MetricsFrame {
            time: self.now,
            instances: instances
                .into_iter()
                .map(|(instance, host, count, drops)| InstanceSample {
                    instance,
                    host,
                    admitted_pps: count as f64 / period,
                    share: (total > 0).then(|| count as f64 / total as f64),
                    drops_overload: drops,
                })
                .collect(),
            drops: self.drops.clone(),
            lsa_tx_total: self.lsa_tx,
            generations: self
                .nodes
                .iter()
                .map(|(id, st)| (*id, st.dmano.generation()))
                .collect(),
        };
        self.frames.push(frame);
        let next = self.now + SimTime::from_secs_f64(period);
        self.queue.schedule(next, Event::MetricSample);
    }

    fn finish(self, run_index: u32, seed: u64) -> RunOutput {
        let sc = self.sc;
        let flows_started = self.flows.len() as u64;
        let phase_shares = sc
            .phases
            .iter()
            .flat_map(|w| phase_shares(sc, &self.frames, w))
            .collect();
        let summary = RunSummary {
            run_index,
            seed,
            packets_in: self.packets_in,
            delivered: self.delivered,
            drops: self.drops,
            flows_started,
            flows_completed: self.flows_completed,
            flows_active: flows_started - self.flows_completed,
            lsa_tx_total: self.lsa_tx,
            first_steered: self
                .first_steered
                .into_iter()
                .map(|(i, t)| (i, t.as_secs_f64()))
                .collect(),
            trace_violations: self.trace_violations,
            mean_latency: (self.delivered > 0).then(|| self.latency_sum / self.delivered as f64),
            phase_shares,
        };
        RunOutput {
            summary,
            frames: self.frames,
        }
    }
}
