//! The Nym Manager: lifecycle of paired AnonVM/CommVM nymboxes, usage
//! modes, store and load, amnesia.

mod base;
mod config;
pub(crate) mod engine;
mod memory;
mod state;
mod workload;

pub use base::{anon_config_layer, comm_config_layer, synthetic_base_layer, BaseImage};
pub use config::{EngineConfig, LatencyModel, NymBoxSpec, VmSpec};
pub use engine::{Engine, StoreTarget};
pub use memory::{PageArena, VmMemory, PAGE};
pub use state::{NymState, StoreAction};
pub use workload::{Workload, WorkloadStats, CACHE_DIR, TRANSPORT_STATE_PATH};

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::hostnym::{HostAttachment, HostError};
use crate::ids::{NymId, NymMode, SimTime};
use crate::netfabric::NetError;
use crate::overlay::{OverlayError, OverlayStack};
use crate::sanivm::SaniError;
use crate::snapstore::{ArchiveError, BackendError, Version};
use crate::transports::{GuardSeed, RelayId, TransportError, TransportInstance, TransportKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("host RAM budget exceeded: need {need_mb} MB, {free_mb} MB free")]
    BudgetExceeded { need_mb: u64, free_mb: u64 },
    #[error("unknown nym {0}")]
    UnknownNym(NymId),
    #[error("{op} not allowed for {nym} in state {state}")]
    InvalidTransition { nym: NymId, state: NymState, op: &'static str },
    #[error("ephemeral nyms cannot be stored")]
    ModeForbidsStore,
    #[error("{op} requires a {expected} nym, {nym} is {actual}")]
    ModeMismatch { nym: NymId, op: &'static str, expected: NymMode, actual: NymMode },
    #[error("persistent nym {0} must be stored or explicitly discarded before closing")]
    StoreConfirmationRequired(NymId),
    #[error("writable disk of {nym} full ({limit_mb} MB)")]
    DiskFull { nym: NymId, limit_mb: u64 },
    #[error("base image block {chunk} failed verification")]
    BaseImageTampered { chunk: usize },
    #[error("base image root mismatch: built {0}")]
    BaseRootMismatch(Digest),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sani(#[from] SaniError),
    #[error(transparent)]
    Host(#[from] HostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VmRole {
    Anon,
    Comm,
}

/// Where a nym's archive lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub location: String,
    pub object: String,
}

pub(crate) struct NymBody {
    pub anon: OverlayStack,
    pub comm: OverlayStack,
    pub transport: TransportInstance,
    pub guard_seed: Option<GuardSeed>,
    pub anon_mem: VmMemory,
    pub comm_mem: VmMemory,
    pub origin: Option<Origin>,
    pub host: Option<HostAttachment>,
}

/// A nym and, while it is alive, its VMs' state. Terminated records keep
/// only the tombstone fields.
pub struct NymRecord {
    pub id: NymId,
    pub mode: NymMode,
    pub state: NymState,
    pub spec: NymBoxSpec,
    pub transport_kind: TransportKind,
    pub created_at: SimTime,
    pub(crate) body: Option<NymBody>,
}

impl std::fmt::Debug for NymRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NymRecord")
            .field("id", &self.id)
            .field("mode", &self.mode)
            .field("state", &self.state)
            .field("transport_kind", &self.transport_kind)
            .finish_non_exhaustive()
    }
}

impl NymRecord {
    pub fn anon_stack(&self) -> Option<&OverlayStack> {
        self.body.as_ref().map(|b| &b.anon)
    }

    pub fn comm_stack(&self) -> Option<&OverlayStack> {
        self.body.as_ref().map(|b| &b.comm)
    }

    pub fn transport(&self) -> Option<&TransportInstance> {
        self.body.as_ref().map(|b| &b.transport)
    }

    pub fn guard_seed(&self) -> Option<GuardSeed> {
        self.body.as_ref().and_then(|b| b.guard_seed)
    }

    pub fn origin(&self) -> Option<&Origin> {
        self.body.as_ref().and_then(|b| b.origin.as_ref())
    }

    pub fn host(&self) -> Option<&HostAttachment> {
        self.body.as_ref().and_then(|b| b.host.as_ref())
    }

    pub fn is_terminated(&self) -> bool {
        self.state == NymState::Terminated
    }

    pub fn summary(&self) -> NymSummary {
        let t = self.transport();
        NymSummary {
            id: self.id,
            mode: self.mode,
            state: self.state,
            transport: self.transport_kind,
            entry_guard: t.and_then(|t| t.entry_guard().cloned()),
            seeded_guard: t.is_some_and(|t| t.is_seeded()),
            host_mb: self.spec.host_mb(),
            object: self.origin().map(|o| o.object.clone()),
            host_nym: self.host().is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NymSummary {
    pub id: NymId,
    pub mode: NymMode,
    pub state: NymState,
    pub transport: TransportKind,
    pub entry_guard: Option<RelayId>,
    pub seeded_guard: bool,
    pub host_mb: u64,
    pub object: Option<String>,
    pub host_nym: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredReceipt {
    pub nym: NymId,
    pub object: String,
    pub version: Version,
    pub location: String,
    pub archive_digest: Digest,
    pub archive_bytes: u64,
    pub anon_bytes: u64,
    pub comm_bytes: u64,
    pub boot_image: bool,
    /// Source address the storage service observed, for network backends.
    pub observed_source: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EngineEvent {
    StateChanged { nym: NymId, from: NymState, to: NymState },
    Stored { nym: NymId, object: String, version: Version, archive_bytes: u64, boot_image: bool },
    Loaded { nym: NymId, object: String, version: Option<Version> },
    TamperDetected { chunk: usize },
    Transferred { nym: NymId, file: String, stored_as: String },
}
