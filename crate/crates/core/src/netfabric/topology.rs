use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::identity::{uniform_vm_identity, MacAddr};
use super::nat::NatTable;
use super::node::{Frame, NodeId, NodeKind, Proto};
use super::NetError;
use crate::ids::NymId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    Dropped,
}

/// Whitelisted hypervisor-originated traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressRule {
    pub proto: Proto,
    pub dst_kind: NodeKind,
    pub dst_port: u16,
}

impl EgressRule {
    pub fn dhcp() -> Self {
        EgressRule { proto: Proto::Udp, dst_kind: NodeKind::LanHost, dst_port: 67 }
    }
}

#[derive(Debug, Clone)]
struct NodeInfo {
    addr: Ipv4Addr,
    mac: MacAddr,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NatCounters {
    pub tcp: u64,
    pub udp: u64,
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeInfo>,
    wires: BTreeSet<(NodeId, NodeId)>,
    nat: NatTable,
    gateway_addr: Ipv4Addr,
    hypervisor_addr: Ipv4Addr,
    hypervisor_egress: Vec<EgressRule>,
    nat_counters: NatCounters,
}

fn edge(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl Topology {
    /// A fabric with the hypervisor and its NAT gateway.
    pub fn new(gateway_addr: Ipv4Addr, hypervisor_addr: Ipv4Addr) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeId::hypervisor(), NodeInfo { addr: hypervisor_addr, mac: MacAddr([0x02, 0, 0, 0, 0, 1]) });
        nodes.insert(NodeId::nat(), NodeInfo { addr: gateway_addr, mac: MacAddr([0x02, 0, 0, 0, 0, 2]) });
        Topology {
            nodes,
            wires: BTreeSet::new(),
            nat: NatTable::default(),
            gateway_addr,
            hypervisor_addr,
            hypervisor_egress: vec![EgressRule::dhcp()],
            nat_counters: NatCounters::default(),
        }
    }

    pub fn gateway_addr(&self) -> Ipv4Addr {
        self.gateway_addr
    }

    pub fn hypervisor_addr(&self) -> Ipv4Addr {
        self.hypervisor_addr
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains_key(node)
    }

    pub fn wires(&self) -> impl Iterator<Item = &(NodeId, NodeId)> {
        self.wires.iter()
    }

    pub fn has_edge(&self, a: &NodeId, b: &NodeId) -> bool {
        self.wires.contains(&edge(a, b))
    }

    pub fn addr_of(&self, node: &NodeId) -> Option<Ipv4Addr> {
        self.nodes.get(node).map(|n| n.addr)
    }

    pub fn mac_of(&self, node: &NodeId) -> Option<MacAddr> {
        self.nodes.get(node).map(|n| n.mac)
    }

    pub fn nat_table(&self) -> &NatTable {
        &self.nat
    }

    pub fn nat_counters(&self) -> &NatCounters {
        &self.nat_counters
    }

    pub fn hypervisor_egress(&self) -> &[EgressRule] {
        &self.hypervisor_egress
    }

    pub fn set_hypervisor_egress(&mut self, rules: Vec<EgressRule>) {
        self.hypervisor_egress = rules;
    }

    pub fn nyms(&self) -> BTreeSet<NymId> {
        self.nodes.keys().filter_map(|n| n.nym()).collect()
    }

    /// Internet host by name.
    pub fn internet_host(&self, name: &str) -> Option<(NodeId, Ipv4Addr)> {
        let id = NodeId::internet(name);
        self.addr_of(&id).map(|a| (id, a))
    }

    pub fn internet_host_by_addr(&self, addr: Ipv4Addr) -> Option<&NodeId> {
        self.nodes
            .iter()
            .find(|(id, info)| id.kind() == NodeKind::InternetHost && info.addr == addr)
            .map(|(id, _)| id)
    }

    pub fn add_sanivm(&mut self) {
        // No wires: the SaniVM is not networked.
        self.nodes.insert(NodeId::sanivm(), NodeInfo { addr: Ipv4Addr::UNSPECIFIED, mac: MacAddr([0x02, 0, 0, 0, 0, 3]) });
    }

    pub fn add_internet_host(&mut self, name: &str, addr: Ipv4Addr) {
        let id = NodeId::internet(name);
        let mac = MacAddr([0x02, 0x10, addr.octets()[0], addr.octets()[1], addr.octets()[2], addr.octets()[3]]);
        self.nodes.insert(id.clone(), NodeInfo { addr, mac });
        self.wires.insert(edge(&NodeId::nat(), &id));
    }

    pub fn add_lan_host(&mut self, name: &str, addr: Ipv4Addr) {
        let id = NodeId::lan(name);
        let mac = MacAddr([0x02, 0x20, addr.octets()[0], addr.octets()[1], addr.octets()[2], addr.octets()[3]]);
        self.nodes.insert(id.clone(), NodeInfo { addr, mac });
        self.wires.insert(edge(&NodeId::hypervisor(), &id));
    }

    /// Adds the AnonVM, the CommVM, their wire and the CommVM uplink.
    pub fn add_nymbox(&mut self, nym: NymId) -> Result<(), NetError> {
        let anon = NodeId::anon(nym);
        let comm = NodeId::comm(nym);
        if self.nodes.contains_key(&anon) || self.nodes.contains_key(&comm) {
            return Err(NetError::DuplicateNym(nym));
        }
        let id = uniform_vm_identity(nym);
        self.nodes.insert(anon.clone(), NodeInfo { addr: id.anon_ip, mac: id.anon_mac });
        self.nodes.insert(comm.clone(), NodeInfo { addr: id.comm_ip, mac: id.comm_mac });
        self.wires.insert(edge(&anon, &comm));
        self.wires.insert(edge(&comm, &NodeId::nat()));
        Ok(())
    }

    pub fn remove_nymbox(&mut self, nym: NymId) {
        let doomed: Vec<NodeId> = self.nodes.keys().filter(|n| n.nym() == Some(nym)).cloned().collect();
        for n in &doomed {
            self.nodes.remove(n);
            self.nat.release_node(n);
        }
        self.wires.retain(|(a, b)| a.nym() != Some(nym) && b.nym() != Some(nym));
    }

    /// Adds an arbitrary edge. Exists for fault-injection tests only; a
    /// correctly built topology never needs it.
    pub fn inject_edge(&mut self, a: &NodeId, b: &NodeId) -> Result<(), NetError> {
        for n in [a, b] {
            if !self.contains(n) {
                return Err(NetError::UnknownNode(n.clone()));
            }
        }
        self.wires.insert(edge(a, b));
        Ok(())
    }

    /// A frame from `src` with that node's own addressing.
    pub fn frame(&self, src: &NodeId, dst: &NodeId, proto: Proto, dst_port: u16, payload: Vec<u8>) -> Result<Frame, NetError> {
        let s = self.nodes.get(src).ok_or_else(|| NetError::UnknownNode(src.clone()))?;
        let dst_addr = self.addr_of(dst).unwrap_or(Ipv4Addr::UNSPECIFIED);
        Ok(Frame {
            src: src.clone(),
            dst: dst.clone(),
            proto,
            src_addr: s.addr,
            dst_addr,
            src_port: 33000,
            dst_port,
            src_mac: s.mac,
            payload,
        })
    }

    /// Decides delivery of a frame. Pure: NAT bindings are consulted, never
    /// created.
    pub fn send(&self, frame: &Frame) -> Result<Outcome, NetError> {
        use NodeKind::*;
        if !self.contains(&frame.src) {
            return Err(NetError::UnknownNode(frame.src.clone()));
        }
        let (src, dst) = (&frame.src, &frame.dst);
        if !self.contains(dst) || src == dst {
            return Ok(Outcome::Dropped);
        }
        match (src.kind(), dst.kind()) {
            (SaniVm, _) | (_, SaniVm) | (_, Hypervisor) | (NatGateway, _) => return Ok(Outcome::Dropped),
            _ => {}
        }
        if src.kind() == AnonVm {
            let id = uniform_vm_identity(src.nym().expect("anonvm carries nym"));
            if frame.src_mac != id.anon_mac || frame.src_addr != id.anon_ip {
                return Ok(Outcome::Dropped);
            }
        }
        if src.kind() == Hypervisor {
            let allowed = self
                .hypervisor_egress
                .iter()
                .any(|r| r.proto == frame.proto && r.dst_kind == dst.kind() && r.dst_port == frame.dst_port);
            if !allowed || !self.has_edge(src, dst) {
                return Ok(Outcome::Dropped);
            }
            return Ok(Outcome::Delivered);
        }
        if dst.kind() == NatGateway {
            // Only replies on a recorded binding pass the gateway inbound.
            return Ok(match (src.kind(), self.nat.lookup(frame.proto, frame.dst_port)) {
                (InternetHost, Some(b))
                    if self.has_edge(src, dst) && b.remote_addr == frame.src_addr && b.remote_port == frame.src_port =>
                {
                    Outcome::Delivered
                }
                _ => Outcome::Dropped,
            });
        }
        if self.has_edge(src, dst) {
            return Ok(Outcome::Delivered);
        }
        // NAT egress: a CommVM reaches Internet hosts, nothing else.
        if src.kind() == CommVm
            && dst.kind() == InternetHost
            && self.has_edge(src, &NodeId::nat())
            && self.has_edge(&NodeId::nat(), dst)
        {
            return Ok(Outcome::Delivered);
        }
        Ok(Outcome::Dropped)
    }

    /// Rewrites an outbound CommVM frame to the gateway's external address
    /// and records the binding for the reverse flow.
    pub fn nat_translate(&mut self, frame: &Frame) -> Result<Frame, NetError> {
        if frame.src.kind() != NodeKind::CommVm || !self.has_edge(&frame.src, &NodeId::nat()) {
            return Err(NetError::NoUplink(frame.src.clone()));
        }
        let port = self.nat.bind(&frame.src, frame.proto, frame.src_addr, frame.src_port, frame.dst_addr, frame.dst_port);
        match frame.proto {
            Proto::Tcp => self.nat_counters.tcp += 1,
            Proto::Udp => self.nat_counters.udp += 1,
        }
        let mut out = frame.clone();
        out.src = NodeId::nat();
        out.src_addr = self.gateway_addr;
        out.src_port = port;
        out.src_mac = self.mac_of(&NodeId::nat()).expect("gateway exists");
        Ok(out)
    }

    /// Maps a reply addressed to the gateway back to the originating CommVM,
    /// or `None` when no binding matches (the reply is dropped).
    pub fn nat_untranslate(&self, reply: &Frame) -> Option<Frame> {
        if self.send(reply).ok()? != Outcome::Delivered || reply.dst.kind() != NodeKind::NatGateway {
            return None;
        }
        let b = self.nat.lookup(reply.proto, reply.dst_port)?;
        let mut back = reply.clone();
        back.dst = b.comm.clone();
        back.dst_addr = b.internal_addr;
        back.dst_port = b.internal_port;
        Some(back)
    }
}

/// Returns `existing` extended with a nymbox for `nym`.
pub fn build_nymbox_topology(nym: NymId, existing: &Topology) -> Result<Topology, NetError> {
    let mut t = existing.clone();
    t.add_nymbox(nym)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Topology {
        let mut t = Topology::new(Ipv4Addr::new(203, 0, 113, 7), Ipv4Addr::new(192, 168, 1, 10));
        t.add_sanivm();
        t.add_internet_host("example.org", Ipv4Addr::new(93, 184, 216, 34));
        t.add_lan_host("printer", Ipv4Addr::new(192, 168, 1, 50));
        t
    }

    fn send(t: &Topology, src: &NodeId, dst: &NodeId, proto: Proto) -> Outcome {
        t.send(&t.frame(src, dst, proto, 80, vec![]).unwrap()).unwrap()
    }

    #[test]
    fn first_and_second_nym() {
        let t0 = base();
        let t1 = build_nymbox_topology(NymId(1), &t0).unwrap();
        assert_eq!(t1.node_count(), t0.node_count() + 2);
        assert_eq!(t1.wires().count(), t0.wires().count() + 2);
        let t2 = build_nymbox_topology(NymId(2), &t1).unwrap();
        assert!(t2
            .wires()
            .all(|(a, b)| !(a.nym().is_some() && b.nym().is_some() && a.nym() != b.nym())));
        assert_eq!(build_nymbox_topology(NymId(1), &t2).unwrap_err(), NetError::DuplicateNym(NymId(1)));
    }

    #[test]
    fn reachability_examples() {
        let mut t = base();
        t.add_nymbox(NymId(1)).unwrap();
        t.add_nymbox(NymId(2)).unwrap();
        let (a1, c1, a2) = (NodeId::anon(NymId(1)), NodeId::comm(NymId(1)), NodeId::anon(NymId(2)));
        assert_eq!(send(&t, &a1, &c1, Proto::Udp), Outcome::Delivered);
        assert_eq!(send(&t, &a1, &a2, Proto::Tcp), Outcome::Dropped);
        assert_eq!(send(&t, &c1, &NodeId::lan("printer"), Proto::Tcp), Outcome::Dropped);
        assert_eq!(send(&t, &c1, &NodeId::internet("example.org"), Proto::Tcp), Outcome::Delivered);
        assert_eq!(send(&t, &a1, &NodeId::internet("example.org"), Proto::Tcp), Outcome::Dropped);
        assert_eq!(send(&t, &c1, &NodeId::hypervisor(), Proto::Tcp), Outcome::Dropped);
        assert_eq!(send(&t, &NodeId::sanivm(), &c1, Proto::Tcp), Outcome::Dropped);
        let ghost = t.frame(&a1, &c1, Proto::Tcp, 80, vec![]).map(|mut f| {
            f.src = NodeId::anon(NymId(9));
            f
        });
        assert_eq!(t.send(&ghost.unwrap()), Err(NetError::UnknownNode(NodeId::anon(NymId(9)))));
    }

    #[test]
    fn hypervisor_egress_whitelist() {
        let t = base();
        let hv = NodeId::hypervisor();
        let lan = NodeId::lan("printer");
        let dhcp = t.frame(&hv, &lan, Proto::Udp, 67, vec![]).unwrap();
        assert_eq!(t.send(&dhcp).unwrap(), Outcome::Delivered);
        let other = t.frame(&hv, &lan, Proto::Tcp, 631, vec![]).unwrap();
        assert_eq!(t.send(&other).unwrap(), Outcome::Dropped);
        assert_eq!(send(&t, &lan, &hv, Proto::Udp), Outcome::Dropped);
    }

    #[test]
    fn spoofed_anonvm_source_dropped() {
        let mut t = base();
        t.add_nymbox(NymId(1)).unwrap();
        let mut f = t.frame(&NodeId::anon(NymId(1)), &NodeId::comm(NymId(1)), Proto::Tcp, 80, vec![]).unwrap();
        f.src_addr = t.hypervisor_addr();
        assert_eq!(t.send(&f).unwrap(), Outcome::Dropped);
    }

    #[test]
    fn nat_round_trip() {
        let mut t = base();
        t.add_nymbox(NymId(1)).unwrap();
        let c1 = NodeId::comm(NymId(1));
        let web = NodeId::internet("example.org");
        let out = t.frame(&c1, &web, Proto::Tcp, 443, b"GET".to_vec()).unwrap();
        let tr = t.nat_translate(&out).unwrap();
        assert_eq!(tr.src_addr, t.gateway_addr());

        let mut reply = t.frame(&web, &NodeId::nat(), Proto::Tcp, tr.src_port, b"200".to_vec()).unwrap();
        reply.src_port = 443;
        let back = t.nat_untranslate(&reply).unwrap();
        assert_eq!(back.dst, c1);
        assert_eq!(back.dst_port, out.src_port);

        reply.dst_port = tr.src_port + 1;
        assert!(t.nat_untranslate(&reply).is_none());
        assert_eq!(t.send(&reply).unwrap(), Outcome::Dropped);
    }

    #[test]
    fn nat_requires_uplink() {
        let mut t = base();
        t.add_nymbox(NymId(1)).unwrap();
        let f = t.frame(&NodeId::anon(NymId(1)), &NodeId::internet("example.org"), Proto::Tcp, 80, vec![]).unwrap();
        assert!(matches!(t.nat_translate(&f), Err(NetError::NoUplink(_))));
    }

    #[test]
    fn remove_nymbox_clears_nodes_and_bindings() {
        let mut t = base();
        t.add_nymbox(NymId(1)).unwrap();
        let f = t.frame(&NodeId::comm(NymId(1)), &NodeId::internet("example.org"), Proto::Udp, 53, vec![]).unwrap();
        t.nat_translate(&f).unwrap();
        t.remove_nymbox(NymId(1));
        assert!(t.nyms().is_empty());
        assert!(t.nat_table().is_empty());
        assert!(t.wires().all(|(a, b)| a.nym().is_none() && b.nym().is_none()));
    }
}
