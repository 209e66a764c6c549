use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::identity::MacAddr;
use super::NetError;
use crate::ids::NymId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    AnonVm,
    CommVm,
    SaniVm,
    Hypervisor,
    NatGateway,
    InternetHost,
    LanHost,
}

/// A node in the simulated fabric.
///
/// AnonVM and CommVM nodes always carry a nym; the SaniVM and hypervisor
/// never do. Internet and LAN hosts are distinguished by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct NodeId {
    kind: NodeKind,
    nym: Option<NymId>,
    host: Option<String>,
}

impl NodeId {
    pub fn new(kind: NodeKind, nym: Option<NymId>, host: Option<String>) -> Result<Self, NetError> {
        use NodeKind::*;
        match (kind, &nym, &host) {
            (AnonVm | CommVm, Some(_), None) => {}
            (AnonVm | CommVm, None, _) => return Err(NetError::InvalidNode("nymbox VM without nym")),
            (SaniVm | Hypervisor | NatGateway, None, None) => {}
            (SaniVm | Hypervisor | NatGateway, Some(_), _) => {
                return Err(NetError::InvalidNode("shared node cannot belong to a nym"))
            }
            (InternetHost | LanHost, None, Some(_)) => {}
            _ => return Err(NetError::InvalidNode("host node needs a name and no nym")),
        }
        Ok(NodeId { kind, nym, host })
    }

    pub fn anon(nym: NymId) -> Self {
        NodeId { kind: NodeKind::AnonVm, nym: Some(nym), host: None }
    }

    pub fn comm(nym: NymId) -> Self {
        NodeId { kind: NodeKind::CommVm, nym: Some(nym), host: None }
    }

    pub fn sanivm() -> Self {
        NodeId { kind: NodeKind::SaniVm, nym: None, host: None }
    }

    pub fn hypervisor() -> Self {
        NodeId { kind: NodeKind::Hypervisor, nym: None, host: None }
    }

    pub fn nat() -> Self {
        NodeId { kind: NodeKind::NatGateway, nym: None, host: None }
    }

    pub fn internet(name: impl Into<String>) -> Self {
        NodeId { kind: NodeKind::InternetHost, nym: None, host: Some(name.into()) }
    }

    pub fn lan(name: impl Into<String>) -> Self {
        NodeId { kind: NodeKind::LanHost, nym: None, host: Some(name.into()) }
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn nym(&self) -> Option<NymId> {
        self.nym
    }

    pub fn host(&self) -> Option<&str> {
        self.host.as_deref()
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.nym, &self.host) {
            (NodeKind::AnonVm, Some(n), _) => write!(f, "anonvm:{n}"),
            (NodeKind::CommVm, Some(n), _) => write!(f, "commvm:{n}"),
            (NodeKind::SaniVm, ..) => f.write_str("sanivm"),
            (NodeKind::Hypervisor, ..) => f.write_str("hypervisor"),
            (NodeKind::NatGateway, ..) => f.write_str("nat"),
            (NodeKind::InternetHost, _, Some(h)) => write!(f, "internet:{h}"),
            (NodeKind::LanHost, _, Some(h)) => write!(f, "lan:{h}"),
            _ => f.write_str("invalid"),
        }
    }
}

impl From<NodeId> for String {
    fn from(n: NodeId) -> String {
        n.to_string()
    }
}

impl TryFrom<String> for NodeId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s.as_str(), None),
        };
        let bad = || format!("invalid node id {s:?}");
        Ok(match (head, tail) {
            ("anonvm", Some(t)) => NodeId::anon(t.parse().map_err(|_| bad())?),
            ("commvm", Some(t)) => NodeId::comm(t.parse().map_err(|_| bad())?),
            ("sanivm", None) => NodeId::sanivm(),
            ("hypervisor", None) => NodeId::hypervisor(),
            ("nat", None) => NodeId::nat(),
            ("internet", Some(t)) if !t.is_empty() => NodeId::internet(t),
            ("lan", Some(t)) if !t.is_empty() => NodeId::lan(t),
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
}

impl Proto {
    pub const ALL: [Proto; 2] = [Proto::Tcp, Proto::Udp];
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub src: NodeId,
    pub dst: NodeId,
    pub proto: Proto,
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub src_mac: MacAddr,
    pub payload: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_enforced() {
        assert!(NodeId::new(NodeKind::AnonVm, None, None).is_err());
        assert!(NodeId::new(NodeKind::SaniVm, Some(NymId(1)), None).is_err());
        assert!(NodeId::new(NodeKind::Hypervisor, Some(NymId(1)), None).is_err());
        assert!(NodeId::new(NodeKind::CommVm, Some(NymId(1)), None).is_ok());
        assert!(NodeId::new(NodeKind::InternetHost, None, None).is_err());
    }

    #[test]
    fn string_round_trip() {
        for n in [
            NodeId::anon(NymId(3)),
            NodeId::comm(NymId(3)),
            NodeId::sanivm(),
            NodeId::hypervisor(),
            NodeId::nat(),
            NodeId::internet("example.org"),
            NodeId::lan("printer"),
        ] {
            assert_eq!(NodeId::try_from(n.to_string()).unwrap(), n);
        }
    }
}
