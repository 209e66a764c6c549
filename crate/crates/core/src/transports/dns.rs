//! Name resolution paths out of a CommVM.
//!
//! Transports with a built-in resolver answer inside the transport; those
//! that carry UDP forward the query as a datagram; for anything else the
//! query is converted to a TCP-framed lookup (two-byte length prefix).

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::TransportError;
use crate::ids::NymId;
use crate::netfabric::{NodeId, Outcome, Proto, Topology};

/// Resolver host every fabric is expected to expose.
pub const RESOLVER_HOST: &str = "resolver";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DnsMode {
    /// The transport resolves names itself.
    BuiltIn,
    /// The transport carries UDP datagrams through its own network.
    UdpRedirect,
    /// Plain UDP through the NAT.
    Plain,
    /// No DNS support: the engine must convert to TCP.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DnsPath {
    InTransport,
    UdpRedirect,
    PlainUdp,
    TcpConverted,
}

pub trait DnsCapable {
    fn nym(&self) -> NymId;
    fn dns_mode(&self) -> DnsMode;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsAnswer {
    pub addr: Ipv4Addr,
    pub path: DnsPath,
    /// Bytes placed on the CommVM uplink for the query (empty when
    /// resolved in-transport).
    pub query_wire: Vec<u8>,
}

/// Minimal DNS query message for an A record.
pub fn encode_query(id: u16, name: &str) -> Vec<u8> {
    let mut q = Vec::with_capacity(18 + name.len());
    q.extend_from_slice(&id.to_be_bytes());
    q.extend_from_slice(&[0x01, 0x00]); // RD
    q.extend_from_slice(&[0, 1, 0, 0, 0, 0, 0, 0]);
    for label in name.split('.').filter(|l| !l.is_empty()) {
        q.push(label.len().min(63) as u8);
        q.extend_from_slice(&label.as_bytes()[..label.len().min(63)]);
    }
    q.push(0);
    q.extend_from_slice(&[0, 1, 0, 1]); // A, IN
    q
}

/// TCP framing of a DNS message: big-endian length then the message.
pub fn tcp_frame(query: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(query.len() + 2);
    out.extend_from_slice(&(query.len() as u16).to_be_bytes());
    out.extend_from_slice(query);
    out
}

pub fn resolve_dns<T: DnsCapable + ?Sized>(
    transport: &T,
    topology: &mut Topology,
    name: &str,
) -> Result<DnsAnswer, TransportError> {
    let (path, proto) = match transport.dns_mode() {
        DnsMode::BuiltIn => (DnsPath::InTransport, None),
        DnsMode::UdpRedirect => (DnsPath::UdpRedirect, Some(Proto::Udp)),
        DnsMode::Plain => (DnsPath::PlainUdp, Some(Proto::Udp)),
        DnsMode::None => (DnsPath::TcpConverted, Some(Proto::Tcp)),
    };
    let mut query_wire = Vec::new();
    if let Some(proto) = proto {
        let query = encode_query(0x4e59, name);
        query_wire = match proto {
            Proto::Tcp => tcp_frame(&query),
            Proto::Udp => query,
        };
        let comm = NodeId::comm(transport.nym());
        let (resolver, _) = topology
            .internet_host(RESOLVER_HOST)
            .ok_or_else(|| TransportError::Unreachable(RESOLVER_HOST.into()))?;
        let frame = topology
            .frame(&comm, &resolver, proto, 53, query_wire.clone())
            .map_err(|_| TransportError::Unreachable(comm.to_string()))?;
        if topology.send(&frame).map_err(|_| TransportError::Unreachable(RESOLVER_HOST.into()))? != Outcome::Delivered {
            return Err(TransportError::Unreachable(RESOLVER_HOST.into()));
        }
        topology
            .nat_translate(&frame)
            .map_err(|_| TransportError::Unreachable(RESOLVER_HOST.into()))?;
    }
    let (_, addr) = topology
        .internet_host(name)
        .ok_or_else(|| TransportError::NameNotFound(name.to_owned()))?;
    Ok(DnsAnswer { addr, path, query_wire })
}
