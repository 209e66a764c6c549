//! Simulated network substrate for nymboxes.
//!
//! Each nym contributes an AnonVM and a CommVM joined by a point-to-point
//! wire; the CommVM alone has an uplink to the hypervisor's user-mode NAT
//! gateway, which fronts the Internet. The SaniVM has no links at all and
//! LAN hosts hang off the hypervisor only. Reachability is enforced by the
//! absence of edges plus policy checks at the NAT and on hypervisor egress.
//! Drops are silent.

mod identity;
mod nat;
mod node;
mod probe;
mod topology;

pub use identity::{uniform_vm_identity, MacAddr, VmIdentity};
pub use nat::{NatBinding, NatTable};
pub use node::{Frame, NodeId, NodeKind, Proto};
pub use probe::{expected_reachable, probe_isolation, Attempt, LeakReport, ProbeRecord};
pub use topology::{build_nymbox_topology, EgressRule, Outcome, Topology};

use thiserror::Error;

use crate::ids::NymId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("nym {0} already has a nymbox")]
    DuplicateNym(NymId),
    #[error("{0} has no NAT uplink")]
    NoUplink(NodeId),
    #[error("invalid node: {0}")]
    InvalidNode(&'static str),
}
