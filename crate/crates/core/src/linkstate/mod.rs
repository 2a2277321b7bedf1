//! Simplified link-state protocol.
//!
//! Every NFV node originates one router LSA listing its live adjacencies and
//! one VNF LSA per local VNF instance. The VNF LSA is the opaque announcement
//! that carries the anycast service type, the VNF cost and the NSH endpoint
//! of the hosting connector. LSAs are flooded hop by hop with sequence-number
//! based duplicate suppression and stored in a per-node [`Lsdb`].

mod flood;
mod lsdb;

pub use flood::FloodDomain;
pub use lsdb::{InstallOutcome, Lsdb, LsdbSnapshot};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EndpointAddr, InstanceId, NodeId, ServiceTypeId, SimTime};

/// Default LSA lifetime.
pub const DEFAULT_MAX_AGE_SECS: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Adjacency {
    pub neighbor: NodeId,
    /// Dimensionless IGP metric, always at least 1.
    pub link_cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RouterLsa {
    pub neighbors: Vec<Adjacency>,
}

/// Opaque VNF announcement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VnfLsa {
    /// Anycast prefix of the instance.
    pub service_type: ServiceTypeId,
    pub instance: InstanceId,
    /// Same scale as link costs.
    pub vnf_cost: u32,
    pub nsh_endpoint: EndpointAddr,
    /// Set when the instance is gone; the entry then only exists to
    /// supersede older announcements until it ages out.
    pub withdrawn: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LsaBody {
    Router(RouterLsa),
    Vnf(VnfLsa),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lsa {
    pub origin: NodeId,
    pub seq: u64,
    pub originated_at: SimTime,
    pub body: LsaBody,
}

/// Identity of an LSA inside the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LsaKey {
    Router(NodeId),
    Vnf {
        origin: NodeId,
        service_type: ServiceTypeId,
        instance: InstanceId,
    },
}

impl LsaBody {
    pub fn key(&self, origin: NodeId) -> LsaKey {
        match self {
            LsaBody::Router(_) => LsaKey::Router(origin),
            LsaBody::Vnf(v) => LsaKey::Vnf {
                origin,
                service_type: v.service_type,
                instance: v.instance,
            },
        }
    }
}

impl Lsa {
    pub fn key(&self) -> LsaKey {
        self.body.key(self.origin)
    }

    pub fn is_expired(&self, now: SimTime, max_age: SimTime) -> bool {
        now.saturating_sub(self.originated_at) > max_age
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkStateError {
    #[error("node {node} cannot originate an LSA on behalf of {origin}")]
    OriginMismatch { node: NodeId, origin: NodeId },
    #[error(
        "VNF instance {instance} of service {service_type} is already announced by node {owner}"
    )]
    IdentityConflict {
        service_type: ServiceTypeId,
        instance: InstanceId,
        owner: NodeId,
    },
    #[error("adjacency to {neighbor} has link cost 0")]
    ZeroLinkCost { neighbor: NodeId },
    #[error("NSH endpoint {endpoint} does not belong to node {origin}")]
    ForeignEndpoint {
        origin: NodeId,
        endpoint: EndpointAddr,
    },
}
