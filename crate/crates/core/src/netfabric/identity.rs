use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::ids::NymId;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", m[0], m[1], m[2], m[3], m[4], m[5])
    }
}

/// The fingerprint-relevant identity every AnonVM/CommVM pair presents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmIdentity {
    pub anon_mac: MacAddr,
    pub comm_mac: MacAddr,
    /// AnonVM address on the nym wire.
    pub anon_ip: Ipv4Addr,
    /// CommVM address on the nym wire.
    pub comm_ip: Ipv4Addr,
    /// CommVM address on its user-mode NAT uplink.
    pub uplink_ip: Ipv4Addr,
    pub screen: (u32, u32),
    pub cpu_label: String,
    pub cpu_count: u32,
}

/// Identical for every nym by construction; the argument is accepted only
/// so call sites read naturally.
pub fn uniform_vm_identity(_nym: NymId) -> VmIdentity {
    VmIdentity {
        anon_mac: MacAddr([0x52, 0x54, 0x00, 0x12, 0x34, 0x56]),
        comm_mac: MacAddr([0x52, 0x54, 0x00, 0x12, 0x34, 0x57]),
        anon_ip: Ipv4Addr::new(10, 0, 0, 2),
        comm_ip: Ipv4Addr::new(10, 0, 0, 1),
        uplink_ip: Ipv4Addr::new(10, 0, 2, 15),
        screen: (1024, 768),
        cpu_label: "QEMU Virtual CPU".to_owned(),
        cpu_count: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nym_independent() {
        assert_eq!(uniform_vm_identity(NymId(1)), uniform_vm_identity(NymId(2)));
    }

    #[test]
    fn fixed_fingerprint_values() {
        let id = uniform_vm_identity(NymId(1));
        assert_eq!(id.screen, (1024, 768));
        assert_eq!(id.cpu_count, 1);
        assert_eq!(id.cpu_label, "QEMU Virtual CPU");
        for ip in [id.anon_ip, id.comm_ip, id.uplink_ip] {
            assert!(ip.is_private());
        }
    }
}
