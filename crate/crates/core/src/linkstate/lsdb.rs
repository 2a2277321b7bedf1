use std::collections::BTreeMap;

use super::{LinkStateError, Lsa, LsaBody, LsaKey};
use crate::types::{EndpointAddr, NodeId, SimTime};

/// Result of offering an LSA to the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallOutcome {
    Installed,
    Duplicate,
    Stale,
    Expired,
}

/// Per-node link-state database.
#[derive(Debug, Clone)]
pub struct Lsdb {
    owner: NodeId,
    max_age: SimTime,
    entries: BTreeMap<LsaKey, Lsa>,
    last_change: SimTime,
    stale_drops: u64,
    duplicate_drops: u64,
}

/// Frozen copy of a database, detached from later updates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LsdbSnapshot {
    entries: BTreeMap<LsaKey, Lsa>,
}

impl LsdbSnapshot {
    pub fn from_lsas(lsas: impl IntoIterator<Item = Lsa>) -> Self {
        let mut entries = BTreeMap::new();
        for lsa in lsas {
            match entries.get(&lsa.key()) {
                Some(old) if old_is_newer(old, &lsa) => {}
                _ => {
                    entries.insert(lsa.key(), lsa);
                }
            }
        }
        LsdbSnapshot { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Lsa> {
        self.entries.values()
    }

    pub fn get(&self, key: &LsaKey) -> Option<&Lsa> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn old_is_newer(old: &Lsa, new: &Lsa) -> bool {
    old.seq >= new.seq
}

impl Lsdb {
    pub fn new(owner: NodeId, max_age: SimTime) -> Self {
        Lsdb {
            owner,
            max_age,
            entries: BTreeMap::new(),
            last_change: SimTime::ZERO,
            stale_drops: 0,
            duplicate_drops: 0,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn max_age(&self) -> SimTime {
        self.max_age
    }

    /// Stamps `body` with the next sequence number for its identity and
    /// installs it locally. The caller floods the returned LSA to every
    /// neighbor.
    pub fn originate(
        &mut self,
        node: NodeId,
        origin: NodeId,
        body: LsaBody,
        now: SimTime,
    ) -> Result<Lsa, LinkStateError> {
        if node != origin {
            return Err(LinkStateError::OriginMismatch { node, origin });
        }
        match &body {
            LsaBody::Router(r) => {
                if let Some(adj) = r.neighbors.iter().find(|a| a.link_cost == 0) {
                    return Err(LinkStateError::ZeroLinkCost {
                        neighbor: adj.neighbor,
                    });
                }
            }
            LsaBody::Vnf(v) => {
                if v.nsh_endpoint != EndpointAddr::for_node(origin) {
                    return Err(LinkStateError::ForeignEndpoint {
                        origin,
                        endpoint: v.nsh_endpoint,
                    });
                }
                // (service_type, instance) is network-wide unique.
                let owner = self.entries.values().find_map(|l| match &l.body {
                    LsaBody::Vnf(o)
                        if l.origin != origin
                            && !o.withdrawn
                            && o.service_type == v.service_type
                            && o.instance == v.instance =>
                    {
                        Some(l.origin)
                    }
                    _ => None,
                });
                if let Some(owner) = owner {
                    return Err(LinkStateError::IdentityConflict {
                        service_type: v.service_type,
                        instance: v.instance,
                        owner,
                    });
                }
            }
        }

        let key = body.key(origin);
        let seq = self.entries.get(&key).map_or(1, |l| l.seq + 1);
        let lsa = Lsa {
            origin,
            seq,
            originated_at: now,
            body,
        };
        self.entries.insert(key, lsa.clone());
        self.last_change = now;
        Ok(lsa)
    }

    /// Offers a received LSA to the database. Only strictly newer sequence
    /// numbers replace the stored copy.
    pub fn install(&mut self, lsa: Lsa, now: SimTime) -> InstallOutcome {
        if lsa.is_expired(now, self.max_age) {
            return InstallOutcome::Expired;
        }
        let key = lsa.key();
        match self.entries.get(&key) {
            Some(stored) if stored.seq == lsa.seq => {
                self.duplicate_drops += 1;
                InstallOutcome::Duplicate
            }
            Some(stored) if stored.seq > lsa.seq => {
                self.stale_drops += 1;
                InstallOutcome::Stale
            }
            _ => {
                self.entries.insert(key, lsa);
                self.last_change = now;
                InstallOutcome::Installed
            }
        }
    }

    /// Flood-except-sender: returns the neighbors the LSA must be sent to,
    /// empty when the LSA was a duplicate or stale.
    pub fn flood(
        &mut self,
        lsa: Lsa,
        from: NodeId,
        neighbors: &[NodeId],
        now: SimTime,
    ) -> Vec<NodeId> {
        match self.install(lsa, now) {
            InstallOutcome::Installed => neighbors.iter().copied().filter(|n| *n != from).collect(),
            _ => Vec::new(),
        }
    }

    pub fn age_out(&mut self, now: SimTime) -> Vec<LsaKey> {
        let max_age = self.max_age;
        let removed: Vec<LsaKey> = self
            .entries
            .iter()
            .filter(|(_, l)| l.is_expired(now, max_age))
            .map(|(k, _)| *k)
            .collect();
        for key in &removed {
            self.entries.remove(key);
        }
        if !removed.is_empty() {
            self.last_change = now;
        }
        removed
    }

    pub fn snapshot(&self) -> LsdbSnapshot {
        LsdbSnapshot {
            entries: self.entries.clone(),
        }
    }

    pub fn get(&self, key: &LsaKey) -> Option<&Lsa> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_change(&self) -> SimTime {
        self.last_change
    }

    pub fn stale_drops(&self) -> u64 {
        self.stale_drops
    }

    pub fn duplicate_drops(&self) -> u64 {
        self.duplicate_drops
    }
}
