//! The machine's installed OS booted as a non-anonymous nym over a
//! copy-on-write disk.

mod disk;

pub use disk::{config_block, parse_config_block, CowDisk, DriverProfile, HostDisk, HostDiskImage, OsLabel, DISK_MAGIC};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::ids::{NymId, NymMode};
use crate::metrics::MetricSample;
use crate::nymcore::{Engine, EngineError, StoreTarget, StoredReceipt};
use crate::overlay::{FileEntry, Layer};
use crate::snapstore::{unpack, StorageBackend, Version};
use crate::transports::TransportKind;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HostError {
    #[error("{0} image still has bare-metal drivers; repair it first")]
    DriverMismatch(OsLabel),
    #[error("repair applies only to bare-metal Windows images")]
    NotApplicable,
    #[error("host disk changed since the copy-on-write disk was stored")]
    StaleBase,
    #[error("{0} is not a host nym")]
    NotHostNym(NymId),
    #[error("write-back needs the write-back policy and explicit confirmation")]
    ConfirmationRequired,
    #[error("persistence policy is {0:?}")]
    WrongPolicy(PersistencePolicy),
    #[error("host disk already attached to {0}")]
    DiskInUse(NymId),
    #[error("block {0} out of range or wrong size")]
    BadBlock(usize),
    #[error("malformed host disk image")]
    BadImage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersistencePolicy {
    #[default]
    Discard,
    WriteBack,
    StoreCow,
}

#[derive(Debug)]
pub struct HostAttachment {
    pub cow: CowDisk,
    pub policy: PersistencePolicy,
}

impl HostAttachment {
    pub(crate) fn finish_session(&mut self) {
        self.cow.erase_upper();
    }

    pub(crate) fn dump_into(&self, out: &mut Vec<u8>) {
        for b in self.cow.upper().values() {
            out.extend_from_slice(b);
        }
    }
}

/// Modeled size of the driver repair delta per OS.
pub fn repair_delta_bytes(os: OsLabel) -> Option<u64> {
    match os {
        OsLabel::Linux => None,
        OsLabel::WindowsVista => Some(4_900_000),
        OsLabel::Windows7 => Some(4_500_000),
        OsLabel::Windows8 => Some(14_000_000),
    }
}

/// Applies the driver repair to the upper layer: the config block flips to
/// the virtual profile and a deterministic run of driver blocks follows.
/// Returns the upper layer size. Repeating it yields the same upper.
pub fn repair_os(cow: &mut CowDisk) -> Result<u64, HostError> {
    let (os, profile) = {
        let lower = cow.lower().read().unwrap_or_else(|e| e.into_inner());
        (lower.os(), lower.profile())
    };
    let delta = match (repair_delta_bytes(os), profile) {
        (Some(d), DriverProfile::BareMetal) => d,
        _ => return Err(HostError::NotApplicable),
    };
    let bs = cow.block_size();
    cow.write(0, &config_block(os, DriverProfile::Virtual, bs))?;
    let extra = (delta.div_ceil(bs as u64) as usize).saturating_sub(1).min(cow.block_count() - 1);
    for i in 1..=extra {
        let d = Digest::of_parts([b"nymkit driver repair".as_slice(), &[os as u8], &(i as u64).to_be_bytes()]);
        let block: Vec<u8> = d.as_bytes().iter().copied().cycle().take(bs).collect();
        cow.write(i, &block)?;
    }
    Ok(cow.upper_bytes())
}

const COW_DIR: &str = "/cow";

fn upper_to_layer(cow: &CowDisk) -> Layer {
    let mut l = Layer::writable();
    for (i, b) in cow.upper() {
        l.put(&format!("{COW_DIR}/{i:016x}"), FileEntry::new(b.clone())).expect("writable layer");
    }
    l
}

fn layer_to_upper(l: &Layer) -> Result<BTreeMap<usize, Vec<u8>>, HostError> {
    l.entries()
        .iter()
        .map(|(p, e)| {
            let idx = p
                .strip_prefix(COW_DIR)
                .and_then(|s| s.strip_prefix('/'))
                .and_then(|s| usize::from_str_radix(s, 16).ok())
                .ok_or(HostError::BadImage)?;
            Ok((idx, e.content.clone()))
        })
        .collect()
}

impl Engine {
    /// Repairs a bare-metal Windows image inside `cow` and records the
    /// delta size.
    pub fn repair_host_disk(&self, cow: &mut CowDisk) -> Result<u64, EngineError> {
        let bytes = repair_os(cow)?;
        let os = cow.lower().read().unwrap_or_else(|e| e.into_inner()).os();
        self.metrics.record(MetricSample::RepairDelta { os: os.to_string(), bytes });
        Ok(bytes)
    }

    fn host_attachment(&mut self, id: NymId) -> Result<&mut crate::hostnym::HostAttachment, EngineError> {
        let body = self.live_body(id, "host", false)?;
        body.host.as_mut().ok_or(HostError::NotHostNym(id).into())
    }

    /// Boots the installed OS. The nym uses the incognito transport unless
    /// `transport` overrides it.
    pub fn boot_installed_os(&mut self, cow: CowDisk, transport: Option<TransportKind>) -> Result<NymId, EngineError> {
        for rec in self.nyms.values().filter(|r| !r.is_terminated()) {
            if rec.host().is_some_and(|h| Arc::ptr_eq(h.cow.lower(), cow.lower())) {
                return Err(HostError::DiskInUse(rec.id).into());
            }
        }
        let (os, profile) = cow.effective_config()?;
        if os.is_windows() && profile == DriverProfile::BareMetal {
            return Err(HostError::DriverMismatch(os).into());
        }
        let kind = transport.unwrap_or(TransportKind::Incognito);
        if kind != TransportKind::Incognito {
            log::warn!("host nym routed over {kind}: the installed OS can still identify this machine");
        }
        let mut s = crate::nymcore::engine::Spawn::fresh(NymMode::Ephemeral, kind, self.config.spec);
        s.host = Some(HostAttachment { cow, policy: PersistencePolicy::Discard });
        self.spawn(s)
    }

    pub fn host_write(&mut self, id: NymId, block: usize, data: &[u8]) -> Result<(), EngineError> {
        Ok(self.host_attachment(id)?.cow.write(block, data)?)
    }

    pub fn host_read(&mut self, id: NymId, block: usize) -> Result<Vec<u8>, EngineError> {
        Ok(self.host_attachment(id)?.cow.read(block)?)
    }

    pub fn set_persistence_policy(&mut self, id: NymId, policy: PersistencePolicy) -> Result<(), EngineError> {
        self.host_attachment(id)?.policy = policy;
        Ok(())
    }

    /// Merges the upper layer into the physical disk. Needs the write-back
    /// policy and `confirm`.
    pub fn commit_write_back(&mut self, id: NymId, confirm: bool) -> Result<Digest, EngineError> {
        let h = self.host_attachment(id)?;
        if h.policy != PersistencePolicy::WriteBack || !confirm {
            return Err(HostError::ConfirmationRequired.into());
        }
        Ok(h.cow.merge_into_lower()?)
    }

    /// Packs the upper layer, bound to the lower image digest.
    pub fn store_host_cow(&mut self, id: NymId, target: StoreTarget<'_>) -> Result<StoredReceipt, EngineError> {
        let h = self.host_attachment(id)?;
        if h.policy != PersistencePolicy::StoreCow {
            return Err(HostError::WrongPolicy(h.policy).into());
        }
        let layer = upper_to_layer(&h.cow);
        let lower = h.cow.lower_digest();
        self.store_inner(id, target, false, Some((layer, Some(lower))))
    }

    /// Boots a stored copy-on-write disk over `disk`, which must be
    /// unchanged since the store.
    pub fn restore_host_nym(
        &mut self,
        object: &str,
        password: &str,
        backend: &mut dyn StorageBackend,
        version: Option<Version>,
        disk: HostDisk,
    ) -> Result<NymId, EngineError> {
        let (bytes, _, _, _) = self.fetch_archive(object, password, backend, version)?;
        let un = unpack(&bytes, password)?;
        let mut cow = CowDisk::new(disk);
        if un.manifest.base_digest != Some(cow.lower_digest()) {
            return Err(HostError::StaleBase.into());
        }
        cow.set_upper(layer_to_upper(&un.anon)?)?;
        let id = self.boot_installed_os(cow, un.manifest.transport)?;
        self.set_persistence_policy(id, PersistencePolicy::StoreCow)?;
        Ok(id)
    }
}
