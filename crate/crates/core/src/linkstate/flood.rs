use std::collections::{BTreeMap, VecDeque};

use super::{Adjacency, LinkStateError, Lsa, LsaBody, Lsdb, RouterLsa};
use crate::types::{NodeId, SimTime};

/// A set of link-state speakers connected by reliable, ordered links with
/// no delay. Messages are delivered in FIFO order until none are left.
///
/// The simulator runs the same [`Lsdb::flood`] discipline on timed links;
/// this type is used for control-plane bootstrap and for checking flooding
/// properties in isolation.
#[derive(Debug, Clone)]
pub struct FloodDomain {
    lsdbs: BTreeMap<NodeId, Lsdb>,
    adjacency: BTreeMap<NodeId, Vec<Adjacency>>,
    in_flight: VecDeque<(Lsa, NodeId, NodeId)>,
    transmissions: u64,
}

impl FloodDomain {
    /// Builds a domain from undirected `(a, b, cost)` links. Nodes without
    /// links can be listed in `nodes`.
    pub fn new(nodes: &[NodeId], links: &[(NodeId, NodeId, u32)], max_age: SimTime) -> Self {
        let mut adjacency: BTreeMap<NodeId, Vec<Adjacency>> = BTreeMap::new();
        for n in nodes {
            adjacency.entry(*n).or_default();
        }
        for &(a, b, cost) in links {
            adjacency.entry(a).or_default().push(Adjacency {
                neighbor: b,
                link_cost: cost,
            });
            adjacency.entry(b).or_default().push(Adjacency {
                neighbor: a,
                link_cost: cost,
            });
        }
        for adj in adjacency.values_mut() {
            adj.sort();
        }
        let lsdbs = adjacency
            .keys()
            .map(|n| (*n, Lsdb::new(*n, max_age)))
            .collect();
        FloodDomain {
            lsdbs,
            adjacency,
            in_flight: VecDeque::new(),
            transmissions: 0,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.lsdbs.keys().copied()
    }

    pub fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        self.adjacency
            .get(&node)
            .map(|a| a.iter().map(|x| x.neighbor).collect())
            .unwrap_or_default()
    }

    pub fn router_lsa(&self, node: NodeId) -> RouterLsa {
        RouterLsa {
            neighbors: self.adjacency.get(&node).cloned().unwrap_or_default(),
        }
    }

    /// Originates `body` at `node` and queues it towards every neighbor.
    pub fn originate(
        &mut self,
        node: NodeId,
        body: LsaBody,
        now: SimTime,
    ) -> Result<Lsa, LinkStateError> {
        let lsdb = self
            .lsdbs
            .get_mut(&node)
            .expect("originating node is part of the domain");
        let lsa = lsdb.originate(node, node, body, now)?;
        for n in self.neighbors(node) {
            self.in_flight.push_back((lsa.clone(), node, n));
            self.transmissions += 1;
        }
        Ok(lsa)
    }

    pub fn originate_router_lsas(&mut self, now: SimTime) -> Result<(), LinkStateError> {
        let nodes: Vec<NodeId> = self.nodes().collect();
        for n in nodes {
            let body = LsaBody::Router(self.router_lsa(n));
            self.originate(n, body, now)?;
        }
        Ok(())
    }

    /// Delivers queued messages until flooding quiesces. Returns the number
    /// of re-transmissions made by receivers during this call; the initial
    /// sends are counted by [`FloodDomain::originate`].
    pub fn run_to_quiescence(&mut self, now: SimTime) -> u64 {
        let before = self.transmissions;
        while let Some((lsa, from, to)) = self.in_flight.pop_front() {
            let neighbors = self.neighbors(to);
            let lsdb = self.lsdbs.get_mut(&to).expect("destination exists");
            for next in lsdb.flood(lsa.clone(), from, &neighbors, now) {
                self.in_flight.push_back((lsa.clone(), to, next));
                self.transmissions += 1;
            }
        }
        self.transmissions - before
    }

    pub fn pending(&self) -> usize {
        self.in_flight.len()
    }

    pub fn transmissions(&self) -> u64 {
        self.transmissions
    }

    pub fn lsdb(&self, node: NodeId) -> Option<&Lsdb> {
        self.lsdbs.get(&node)
    }

    pub fn into_lsdbs(self) -> BTreeMap<NodeId, Lsdb> {
        self.lsdbs
    }
}
