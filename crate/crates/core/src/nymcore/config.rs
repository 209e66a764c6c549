//! Engine configuration, read from TOML.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::snapstore::KdfParams;
use crate::transports::{Relay, TransportKind, TransportParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmSpec {
    pub ram_mb: u64,
    pub writable_disk_mb: u64,
}

impl VmSpec {
    /// RAM plus writable disk, both backed by host RAM.
    pub fn host_mb(&self) -> u64 {
        self.ram_mb + self.writable_disk_mb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NymBoxSpec {
    pub anonvm: VmSpec,
    pub commvm: VmSpec,
}

impl Default for NymBoxSpec {
    fn default() -> Self {
        NymBoxSpec {
            anonvm: VmSpec { ram_mb: 256, writable_disk_mb: 256 },
            commvm: VmSpec { ram_mb: 128, writable_disk_mb: 16 },
        }
    }
}

impl NymBoxSpec {
    pub fn host_mb(&self) -> u64 {
        self.anonvm.host_mb() + self.commvm.host_mb()
    }
}

/// Simulated durations, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub vm_boot_ms: u64,
    pub incognito_startup_ms: u64,
    pub onion_bootstrap_ms: u64,
    /// Onion startup when stored state (consensus, guards) is present.
    pub onion_restored_ms: u64,
    pub dcnet_bootstrap_ms: u64,
    pub dcnet_restored_ms: u64,
    pub page_load_ms: u64,
    /// Uplink used to time loader downloads.
    pub link_bytes_per_ms: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            vm_boot_ms: 14_000,
            incognito_startup_ms: 400,
            onion_bootstrap_ms: 9_000,
            onion_restored_ms: 3_500,
            dcnet_bootstrap_ms: 7_000,
            dcnet_restored_ms: 3_000,
            page_load_ms: 2_500,
            link_bytes_per_ms: 1250,
        }
    }
}

impl LatencyModel {
    pub fn transport_startup(&self, kind: TransportKind, has_state: bool) -> u64 {
        match (kind, has_state) {
            (TransportKind::Incognito, _) => self.incognito_startup_ms,
            (TransportKind::OnionSim, false) => self.onion_bootstrap_ms,
            (TransportKind::OnionSim, true) => self.onion_restored_ms,
            (TransportKind::DcnetSim, false) => self.dcnet_bootstrap_ms,
            (TransportKind::DcnetSim, true) => self.dcnet_restored_ms,
        }
    }
}

fn default_relays() -> Vec<Relay> {
    (0..10).map(|i| Relay::new(&format!("relay{i:02}"), true, i >= 4)).collect()
}

fn default_internet() -> BTreeMap<String, Ipv4Addr> {
    [
        ("resolver", [198, 51, 100, 53]),
        ("cloud.example", [198, 51, 100, 80]),
        ("news.example", [203, 0, 113, 10]),
        ("mail.example", [203, 0, 113, 11]),
        ("social.example", [203, 0, 113, 12]),
        ("video.example", [203, 0, 113, 13]),
    ]
    .into_iter()
    .map(|(n, a)| (n.to_owned(), Ipv4Addr::from(a)))
    .collect()
}

fn default_lan() -> BTreeMap<String, Ipv4Addr> {
    [("dhcp".to_owned(), Ipv4Addr::new(192, 168, 1, 1))].into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub host_ram_mb: u64,
    pub spec: NymBoxSpec,
    pub default_transport: TransportKind,
    pub relays: Vec<Relay>,
    pub internet_hosts: BTreeMap<String, Ipv4Addr>,
    pub lan_hosts: BTreeMap<String, Ipv4Addr>,
    pub gateway: Ipv4Addr,
    pub hypervisor: Ipv4Addr,
    pub kdf: KdfParams,
    pub transport: TransportParams,
    pub latency: LatencyModel,
    /// Seed the download nym's guard from (location, password) on load.
    pub seeded_loader: bool,
    /// Expected Merkle root of the base image.
    pub base_merkle_root: Option<Digest>,
    pub base_image_kib: u32,
    /// Cap on modeled resident pages per VM.
    pub vm_resident_pages: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            host_ram_mb: 16 * 1024,
            spec: NymBoxSpec::default(),
            default_transport: TransportKind::OnionSim,
            relays: default_relays(),
            internet_hosts: default_internet(),
            lan_hosts: default_lan(),
            gateway: Ipv4Addr::new(192, 168, 1, 50),
            hypervisor: Ipv4Addr::new(192, 168, 1, 50),
            kdf: KdfParams::default(),
            transport: TransportParams::default(),
            latency: LatencyModel::default(),
            seeded_loader: true,
            base_merkle_root: None,
            base_image_kib: 512,
            vm_resident_pages: 256,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Defaults with cheap archive key derivation, for tests and demos.
    pub fn fast() -> Self {
        EngineConfig { kdf: KdfParams::FAST, ..Default::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial() {
        let c = EngineConfig::default();
        assert_eq!(EngineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = EngineConfig::from_toml("host_ram_mb = 1024\ndefault_transport = \"incognito\"\n").unwrap();
        assert_eq!(p.host_ram_mb, 1024);
        assert_eq!(p.default_transport, TransportKind::Incognito);
        assert_eq!(p.spec, NymBoxSpec::default());
        assert_eq!(NymBoxSpec::default().host_mb(), 656);
    }
}
