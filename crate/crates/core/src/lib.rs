//! Distributed service function chaining over an anycast-aware link-state
//! control plane.
//!
//! Each NFV node runs a router, a connector, local VNF instances and a
//! D-MANO control loop. VNF instances are announced with their cost in
//! opaque LSAs; every node builds its own service plane view from its LSDB
//! and programs a WCMP table into its connector, which steers NSH
//! encapsulated flows hop by hop. [`simengine`] runs the whole system as a
//! deterministic discrete-event simulation.

pub mod dataplane;
pub mod dmano;
pub mod linkstate;
pub mod serviceplane;
pub mod simengine;
pub mod types;

pub use types::{EndpointAddr, InstanceId, NodeId, ServiceTypeId, SimTime, Spi};
