//! NSH dataplane: codec, ingress classifier, connector and VNF models.

pub mod classify;
pub mod connector;
pub mod nsh;
pub mod packet;
pub mod vnf;

pub use classify::{classify, fnv1a64, ChainCatalog, ClassificationRule, FlowKey, Prefix};
pub use connector::{Connector, FlowCacheEntry, FlowCacheKey, ForwardDecision, Sampling};
pub use nsh::{NshHeader, ParseError};
pub use packet::{egress, DeliveredRecord, Hop, NshPacket, PacketMeta};
pub use vnf::VnfInstanceModel;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropCause {
    Unclassified,
    Unroutable,
    Overload,
    Misdelivery,
    TtlExpired,
}

impl DropCause {
    pub const ALL: [DropCause; 5] = [
        DropCause::Unclassified,
        DropCause::Unroutable,
        DropCause::Overload,
        DropCause::Misdelivery,
        DropCause::TtlExpired,
    ];
}
