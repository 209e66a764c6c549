use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use super::node::{NodeId, Proto};

/// An outbound flow as seen inside the nym.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct FlowKey {
    comm: NodeId,
    proto: Proto,
    src_port: u16,
    remote_addr: Ipv4Addr,
    remote_port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NatBinding {
    pub comm: NodeId,
    pub proto: Proto,
    pub internal_addr: Ipv4Addr,
    pub internal_port: u16,
    pub remote_addr: Ipv4Addr,
    pub remote_port: u16,
    pub external_port: u16,
}

/// Port-allocating masquerade table. Every flow gets its own external
/// port, so flows from different CommVMs never share a binding even though
/// they use identical internal addresses.
#[derive(Debug, Clone)]
pub struct NatTable {
    next_port: u16,
    by_flow: BTreeMap<FlowKey, u16>,
    by_external: BTreeMap<(Proto, u16), NatBinding>,
}

pub const FIRST_EXTERNAL_PORT: u16 = 40000;

impl Default for NatTable {
    fn default() -> Self {
        NatTable { next_port: FIRST_EXTERNAL_PORT, by_flow: BTreeMap::new(), by_external: BTreeMap::new() }
    }
}

impl NatTable {
    pub fn bind(
        &mut self,
        comm: &NodeId,
        proto: Proto,
        internal_addr: Ipv4Addr,
        internal_port: u16,
        remote_addr: Ipv4Addr,
        remote_port: u16,
    ) -> u16 {
        let key = FlowKey { comm: comm.clone(), proto, src_port: internal_port, remote_addr, remote_port };
        if let Some(p) = self.by_flow.get(&key) {
            return *p;
        }
        let port = self.allocate(proto);
        self.by_flow.insert(key, port);
        self.by_external.insert(
            (proto, port),
            NatBinding {
                comm: comm.clone(),
                proto,
                internal_addr,
                internal_port,
                remote_addr,
                remote_port,
                external_port: port,
            },
        );
        port
    }

    fn allocate(&mut self, proto: Proto) -> u16 {
        loop {
            let p = self.next_port;
            self.next_port = if p == u16::MAX { FIRST_EXTERNAL_PORT } else { p + 1 };
            if !self.by_external.contains_key(&(proto, p)) {
                return p;
            }
        }
    }

    pub fn lookup(&self, proto: Proto, external_port: u16) -> Option<&NatBinding> {
        self.by_external.get(&(proto, external_port))
    }

    pub fn bindings(&self) -> impl Iterator<Item = &NatBinding> {
        self.by_external.values()
    }

    pub fn len(&self) -> usize {
        self.by_external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_external.is_empty()
    }

    pub fn release_node(&mut self, comm: &NodeId) {
        self.by_flow.retain(|k, _| &k.comm != comm);
        self.by_external.retain(|_, b| &b.comm != comm);
    }
}
