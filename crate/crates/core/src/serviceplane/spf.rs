//! Shortest-path-first over the NFV node graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::types::NodeId;

/// Directed adjacency list with additive integer costs.
pub type Graph = BTreeMap<NodeId, Vec<(NodeId, u64)>>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShortestPathTree {
    pub root: Option<NodeId>,
    /// Unreachable nodes are absent.
    pub dist: BTreeMap<NodeId, u64>,
    pub parent: BTreeMap<NodeId, NodeId>,
}

impl ShortestPathTree {
    /// Node sequence from the root to `dst`, both included.
    pub fn path_to(&self, dst: NodeId) -> Option<Vec<NodeId>> {
        if !self.dist.contains_key(&dst) {
            return None;
        }
        let mut path = vec![dst];
        let mut cur = dst;
        while let Some(p) = self.parent.get(&cur) {
            path.push(*p);
            cur = *p;
        }
        path.reverse();
        Some(path)
    }
}

/// Dijkstra from `root`. Equal-cost ties are settled in ascending node id
/// order and a node keeps the smallest-id parent among equal-cost
/// predecessors, so the tree is fully deterministic.
pub fn shortest_path_tree(graph: &Graph, root: NodeId) -> ShortestPathTree {
    let mut tree = ShortestPathTree {
        root: Some(root),
        ..Default::default()
    };
    if !graph.contains_key(&root) {
        return tree;
    }
    let mut heap = BinaryHeap::new();
    let mut best: BTreeMap<NodeId, u64> = BTreeMap::new();
    best.insert(root, 0);
    heap.push(Reverse((0u64, root)));

    while let Some(Reverse((d, u))) = heap.pop() {
        if tree.dist.contains_key(&u) {
            continue;
        }
        tree.dist.insert(u, d);
        for &(v, cost) in graph.get(&u).into_iter().flatten() {
            if tree.dist.contains_key(&v) || !graph.contains_key(&v) {
                continue;
            }
            let nd = d + cost;
            let better = match best.get(&v) {
                None => true,
                Some(&old) if nd < old => true,
                Some(&old) if nd == old => tree.parent.get(&v).is_some_and(|p| u < *p),
                _ => false,
            };
            if better {
                best.insert(v, nd);
                tree.parent.insert(v, u);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    tree
}
