//! Anonymizers hosted in the CommVM behind one proxy interface.
//!
//! Each nym gets its own [`TransportInstance`]. Three kinds exist:
//! `Incognito` (plain masquerading NAT), `OnionSim` (three-hop circuits
//! with a stable entry guard) and `DcnetSim` (round-robin DC-net
//! broadcast). Instances are never shared between nyms.

mod dcnet;
mod dns;
mod guard;
mod onion;
mod relay;

pub use dcnet::{DcnetGroup, DcnetParams, RoundTranscript};
pub use dns::{encode_query, resolve_dns, tcp_frame, DnsAnswer, DnsCapable, DnsMode, DnsPath, RESOLVER_HOST};
pub use guard::{select_entry_guard, select_guard_set, GuardSeed};
pub use onion::{build_circuit, peel, wrap, CircuitState, OnionParams};
pub use relay::{parse_relay_directory, Relay, RelayFlags, RelayId};

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::ids::{NymId, SimTime};
use crate::netfabric::{uniform_vm_identity, NodeId, NodeKind, Outcome, Proto, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("no relays available")]
    NoRelays,
    #[error("need {need} distinct relays, have {have}")]
    InsufficientRelays { need: usize, have: usize },
    #[error("destination unreachable: {0}")]
    Unreachable(String),
    #[error("proxy requests are only accepted from the nym's own AnonVM")]
    WrongSide,
    #[error("name not found: {0}")]
    NameNotFound(String),
    #[error("payload must be non-empty")]
    EmptyPayload,
    #[error("bad relay directory: {0}")]
    BadDirectory(String),
    #[error("unknown transport kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Incognito,
    #[serde(rename = "onion")]
    OnionSim,
    #[serde(rename = "dcnet")]
    DcnetSim,
}

impl TransportKind {
    pub fn needs_relays(self) -> bool {
        !matches!(self, TransportKind::Incognito)
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::Incognito => "incognito",
            TransportKind::OnionSim => "onion",
            TransportKind::DcnetSim => "dcnet",
        })
    }
}

impl FromStr for TransportKind {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "incognito" => Ok(TransportKind::Incognito),
            "onion" | "onionsim" | "tor" => Ok(TransportKind::OnionSim),
            "dcnet" | "dcnetsim" | "dissent" => Ok(TransportKind::DcnetSim),
            _ => Err(TransportError::UnknownKind(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportParams {
    #[serde(default)]
    pub onion: OnionParams,
    #[serde(default)]
    pub dcnet: DcnetParams,
}

/// A connection request arriving at the CommVM proxy.
#[derive(Debug, Clone)]
pub struct ProxyRequest {
    /// Node the request arrived from; must be the nym's AnonVM.
    pub origin: NodeId,
    pub dest_host: String,
    pub dest_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Framing {
    None,
    Cells { cell_size: usize, cell_header: usize },
    Dcnet { members: usize, slot_bytes: usize },
}

/// A bidirectional stream opened through a transport.
#[derive(Debug, Clone)]
pub struct StreamHandle {
    pub nym: NymId,
    pub kind: TransportKind,
    pub destination: NodeId,
    pub dest_port: u16,
    /// Source address the destination observes.
    pub observed_source: Ipv4Addr,
    /// Relay that originated the connection, for circuit kinds.
    pub exit_relay: Option<RelayId>,
    framing: Framing,
    payload_bytes: u64,
    wire_bytes: u64,
}

impl StreamHandle {
    /// Accounts for sending `bytes` of payload and returns the wire bytes
    /// this transmission cost.
    pub fn transmit(&mut self, bytes: u64) -> u64 {
        let wire = framed_bytes(self.framing, bytes);
        self.payload_bytes += bytes;
        self.wire_bytes += wire;
        wire
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payload_bytes
    }

    pub fn wire_bytes(&self) -> u64 {
        self.wire_bytes
    }
}

fn framed_bytes(framing: Framing, payload: u64) -> u64 {
    match framing {
        Framing::None => payload,
        Framing::Cells { cell_size, cell_header } => {
            OnionParams { cell_size, cell_header, ..OnionParams::default() }.wire_bytes(payload)
        }
        Framing::Dcnet { members, slot_bytes } => {
            DcnetGroup::new(members, 0, [0; 32], DcnetParams { slot_bytes }).wire_bytes(payload)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportInstance {
    kind: TransportKind,
    nym: NymId,
    params: TransportParams,
    relays: Vec<Relay>,
    seed: GuardSeed,
    seeded: bool,
    circuit: Option<CircuitState>,
    generation: u64,
    dcnet: Option<DcnetGroup>,
    exposed_public_ip: Option<Ipv4Addr>,
}

/// Starts a transport for `nym`. With a seed, guard choice is a pure
/// function of (seed, relays); without one a random seed is drawn.
pub fn start_transport(
    kind: TransportKind,
    nym: NymId,
    relays: &[Relay],
    guard_seed: Option<GuardSeed>,
    params: &TransportParams,
    now: SimTime,
) -> Result<TransportInstance, TransportError> {
    if kind.needs_relays() && relays.is_empty() {
        return Err(TransportError::NoRelays);
    }
    let seeded = guard_seed.is_some();
    let seed = guard_seed.unwrap_or_else(GuardSeed::random);
    let mut inst = TransportInstance {
        kind,
        nym,
        params: params.clone(),
        relays: relays.to_vec(),
        seed,
        seeded,
        circuit: None,
        generation: 0,
        dcnet: None,
        exposed_public_ip: None,
    };
    match kind {
        TransportKind::Incognito => {}
        TransportKind::OnionSim => {
            inst.circuit = Some(build_circuit(&seed, relays, &params.onion, 0, now)?);
        }
        TransportKind::DcnetSim => {
            let mut h = Sha256::new();
            h.update(b"nymkit dcnet group v1");
            h.update(seed.0);
            inst.dcnet = Some(DcnetGroup::new(relays.len() + 1, 0, h.finalize().into(), params.dcnet.clone()));
        }
    }
    Ok(inst)
}

impl TransportInstance {
    pub fn kind(&self) -> TransportKind {
        self.kind
    }

    pub fn nym(&self) -> NymId {
        self.nym
    }

    pub fn is_seeded(&self) -> bool {
        self.seeded
    }

    pub fn circuit(&self) -> Option<&CircuitState> {
        self.circuit.as_ref()
    }

    pub fn entry_guard(&self) -> Option<&RelayId> {
        self.circuit.as_ref().map(|c| &c.entry_guard)
    }

    pub fn guard_set(&self) -> Option<&[RelayId]> {
        self.circuit.as_ref().map(|c| c.guard_set.as_slice())
    }

    pub fn dcnet(&self) -> Option<&DcnetGroup> {
        self.dcnet.as_ref()
    }

    pub fn relays(&self) -> &[Relay] {
        &self.relays
    }

    /// Tears down and rebuilds the circuit. The entry guard is kept.
    pub fn reconnect(&mut self, now: SimTime) -> Result<(), TransportError> {
        if self.kind == TransportKind::OnionSim {
            self.generation += 1;
            self.circuit = Some(build_circuit(&self.seed, &self.relays, &self.params.onion, self.generation, now)?);
        }
        Ok(())
    }

    /// Fault injection: a compromised CommVM learns the host's public
    /// address. Nothing in the AnonVM's view changes.
    pub fn compromise(&mut self, topology: &Topology) {
        self.exposed_public_ip = Some(topology.gateway_addr());
    }

    pub fn exposed_public_ip(&self) -> Option<Ipv4Addr> {
        self.exposed_public_ip
    }

    /// Addresses the AnonVM can learn from its side of the proxy.
    pub fn anonvm_visible_addresses(&self) -> Vec<Ipv4Addr> {
        let id = uniform_vm_identity(self.nym);
        vec![id.anon_ip, id.comm_ip]
    }

    fn framing(&self) -> Framing {
        match self.kind {
            TransportKind::Incognito => Framing::None,
            TransportKind::OnionSim => Framing::Cells {
                cell_size: self.params.onion.cell_size,
                cell_header: self.params.onion.cell_header,
            },
            TransportKind::DcnetSim => Framing::Dcnet {
                members: self.dcnet.as_ref().map_or(2, |g| g.members()),
                slot_bytes: self.params.dcnet.slot_bytes,
            },
        }
    }

    /// First network hop outside the CommVM for this transport.
    fn first_hop(&self, dest: &NodeId) -> NodeId {
        match self.kind {
            TransportKind::Incognito => dest.clone(),
            TransportKind::OnionSim => NodeId::internet(self.entry_guard().expect("circuit").0.clone()),
            TransportKind::DcnetSim => NodeId::internet(self.dcnet_server().0.clone()),
        }
    }

    fn dcnet_server(&self) -> RelayId {
        self.relays.iter().map(|r| r.id.clone()).min().expect("dcnet has relays")
    }

    pub fn proxy_connect(&self, topology: &mut Topology, req: &ProxyRequest) -> Result<StreamHandle, TransportError> {
        if req.origin != NodeId::anon(self.nym) || !topology.has_edge(&req.origin, &NodeId::comm(self.nym)) {
            return Err(TransportError::WrongSide);
        }
        let (dest, _) = topology
            .internet_host(&req.dest_host)
            .ok_or_else(|| TransportError::Unreachable(req.dest_host.clone()))?;
        let hop = self.first_hop(&dest);
        let comm = NodeId::comm(self.nym);
        let frame = topology
            .frame(&comm, &hop, Proto::Tcp, req.dest_port, Vec::new())
            .map_err(|_| TransportError::Unreachable(comm.to_string()))?;
        if hop.kind() != NodeKind::InternetHost
            || topology.send(&frame).map_err(|_| TransportError::Unreachable(hop.to_string()))? != Outcome::Delivered
        {
            return Err(TransportError::Unreachable(hop.to_string()));
        }
        let translated = topology
            .nat_translate(&frame)
            .map_err(|_| TransportError::Unreachable(hop.to_string()))?;

        let (observed_source, exit_relay) = match self.kind {
            TransportKind::Incognito => (translated.src_addr, None),
            TransportKind::OnionSim => {
                let exit = self.circuit.as_ref().expect("circuit").exit().clone();
                (relay_addr(topology, &exit)?, Some(exit))
            }
            TransportKind::DcnetSim => {
                let server = self.dcnet_server();
                (relay_addr(topology, &server)?, Some(server))
            }
        };
        Ok(StreamHandle {
            nym: self.nym,
            kind: self.kind,
            destination: dest,
            dest_port: req.dest_port,
            observed_source,
            exit_relay,
            framing: self.framing(),
            payload_bytes: 0,
            wire_bytes: 0,
        })
    }

    /// Wire bytes divided by payload bytes for a transfer of `payload_bytes`.
    pub fn measure_overhead(&self, payload_bytes: u64) -> Result<f64, TransportError> {
        if payload_bytes == 0 {
            return Err(TransportError::EmptyPayload);
        }
        let wire = match (self.kind, &self.dcnet) {
            (TransportKind::DcnetSim, Some(g)) => g.wire_bytes(payload_bytes),
            _ => framed_bytes(self.framing(), payload_bytes),
        };
        Ok(wire as f64 / payload_bytes as f64)
    }

    pub fn resolve_dns(&self, topology: &mut Topology, name: &str) -> Result<DnsAnswer, TransportError> {
        resolve_dns(self, topology, name)
    }
}

fn relay_addr(topology: &Topology, relay: &RelayId) -> Result<Ipv4Addr, TransportError> {
    topology
        .internet_host(&relay.0)
        .map(|(_, a)| a)
        .ok_or_else(|| TransportError::Unreachable(relay.0.clone()))
}

impl DnsCapable for TransportInstance {
    fn nym(&self) -> NymId {
        self.nym
    }

    fn dns_mode(&self) -> DnsMode {
        match self.kind {
            TransportKind::Incognito => DnsMode::Plain,
            TransportKind::OnionSim => DnsMode::BuiltIn,
            TransportKind::DcnetSim => DnsMode::UdpRedirect,
        }
    }
}

/// Deterministic Internet address for a relay, inside 100.64.0.0/10.
pub fn relay_address(id: &RelayId) -> Ipv4Addr {
    let d: [u8; 32] = Sha256::digest(id.0.as_bytes()).into();
    Ipv4Addr::new(100, 64 | (d[0] & 0x3f), d[1], d[2].max(1))
}
