use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use super::base::{anon_config_layer, comm_config_layer, synthetic_base_layer, BaseImage};
use super::memory::{PageArena, VmMemory};
use super::workload::TRANSPORT_STATE_PATH;
use super::{
    EngineConfig, EngineError, EngineEvent, NymBody, NymBoxSpec, NymRecord, NymState, NymSummary, Origin, StoreAction,
    StoredReceipt, VmRole,
};
use crate::digest::Digest;
use crate::hostnym::HostAttachment;
use crate::ids::{NymId, NymMode, SimTime};
use crate::metrics::{MetricSample, MetricsLog, Phase, PhaseTrace};
use crate::netfabric::{probe_isolation, LeakReport, NodeId, Topology};
use crate::overlay::{encode_layer, Layer, OverlayError, OverlayStack};
use crate::sanivm::{InboundDir, MediaFile, SaniVm, ScrubPlan, TransferReceipt};
use crate::snapstore::{derive_guard_seed, pack, unpack, Manifest, StorageBackend, Version};
use crate::transports::{relay_address, start_transport, GuardSeed, ProxyRequest, StreamHandle, TransportKind};

type Result<T> = std::result::Result<T, EngineError>;

/// Where and how to store a nym.
pub struct StoreTarget<'a> {
    pub object: &'a str,
    pub password: &'a str,
    pub backend: &'a mut dyn StorageBackend,
}

pub(crate) struct Spawn {
    pub mode: NymMode,
    pub kind: TransportKind,
    pub spec: NymBoxSpec,
    pub seed: Option<GuardSeed>,
    pub saved: Option<(Layer, Layer)>,
    pub origin: Option<Origin>,
    pub loader_ms: Option<u64>,
    pub host: Option<HostAttachment>,
    pub record_phases: bool,
}

impl Spawn {
    pub fn fresh(mode: NymMode, kind: TransportKind, spec: NymBoxSpec) -> Self {
        Spawn { mode, kind, spec, seed: None, saved: None, origin: None, loader_ms: None, host: None, record_phases: true }
    }
}

pub struct Engine {
    pub(crate) config: EngineConfig,
    pub(crate) clock: SimTime,
    pub(crate) base: BaseImage,
    pub(crate) anon_config: Arc<Layer>,
    pub(crate) comm_config: Arc<Layer>,
    pub(crate) topology: Topology,
    pub(crate) nyms: BTreeMap<NymId, NymRecord>,
    pub(crate) next_id: u32,
    pub(crate) arena: PageArena,
    pub(crate) sanivm: SaniVm,
    pub(crate) metrics: Arc<MetricsLog>,
    subscribers: Vec<Sender<EngineEvent>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("clock", &self.clock).field("nyms", &self.nyms.len()).finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        let base = BaseImage::new(synthetic_base_layer(config.base_image_kib), config.base_merkle_root)
            .map_err(EngineError::BaseRootMismatch)?;
        let mut topology = Topology::new(config.gateway, config.hypervisor);
        topology.add_sanivm();
        for (name, addr) in &config.internet_hosts {
            topology.add_internet_host(name, *addr);
        }
        for r in &config.relays {
            topology.add_internet_host(&r.id.0, relay_address(&r.id));
        }
        for (name, addr) in &config.lan_hosts {
            topology.add_lan_host(name, *addr);
        }
        Ok(Engine {
            config,
            clock: 0,
            base,
            anon_config: Arc::new(anon_config_layer()),
            comm_config: Arc::new(comm_config_layer()),
            topology,
            nyms: BTreeMap::new(),
            next_id: 1,
            arena: PageArena::default(),
            sanivm: SaniVm::default(),
            metrics: Arc::new(MetricsLog::default()),
            subscribers: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Mutable topology, for fault injection.
    pub fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topology
    }

    pub fn base_image(&self) -> &BaseImage {
        &self.base
    }

    /// Mutable base image, for fault injection.
    pub fn base_image_mut(&mut self) -> &mut BaseImage {
        &mut self.base
    }

    pub fn base_digest(&self) -> Digest {
        self.base.layer().digest()
    }

    pub fn sanivm(&self) -> &SaniVm {
        &self.sanivm
    }

    pub fn metrics(&self) -> &Arc<MetricsLog> {
        &self.metrics
    }

    pub fn subscribe(&mut self) -> Receiver<EngineEvent> {
        let (tx, rx) = channel();
        self.subscribers.push(tx);
        rx
    }

    pub(crate) fn emit(&mut self, ev: EngineEvent) {
        self.subscribers.retain(|s| s.send(ev.clone()).is_ok());
    }

    pub fn nym(&self, id: NymId) -> Option<&NymRecord> {
        self.nyms.get(&id)
    }

    pub fn list(&self) -> Vec<NymSummary> {
        self.nyms.values().map(NymRecord::summary).collect()
    }

    pub fn live_nyms(&self) -> Vec<NymId> {
        self.nyms.values().filter(|r| r.state.is_live()).map(|r| r.id).collect()
    }

    pub fn ram_in_use_mb(&self) -> u64 {
        self.nyms.values().filter(|r| !r.is_terminated()).map(|r| r.spec.host_mb()).sum()
    }

    fn record(&self, id: NymId) -> Result<&NymRecord> {
        self.nyms.get(&id).ok_or(EngineError::UnknownNym(id))
    }

    fn transition(&mut self, id: NymId, to: NymState, op: &'static str) -> Result<()> {
        let rec = self.nyms.get_mut(&id).ok_or(EngineError::UnknownNym(id))?;
        let from = rec.state;
        if !from.can_transition(to) {
            return Err(EngineError::InvalidTransition { nym: id, state: from, op });
        }
        rec.state = to;
        self.emit(EngineEvent::StateChanged { nym: id, from, to });
        Ok(())
    }

    pub(crate) fn live_body(&mut self, id: NymId, op: &'static str, running_only: bool) -> Result<&mut NymBody> {
        let rec = self.nyms.get_mut(&id).ok_or(EngineError::UnknownNym(id))?;
        let ok = if running_only { rec.state == NymState::Running } else { rec.state.is_live() };
        if !ok {
            return Err(EngineError::InvalidTransition { nym: id, state: rec.state, op });
        }
        Ok(rec.body.as_mut().expect("live nyms have a body"))
    }

    /// Opens a stream from the nym's AnonVM through its transport.
    pub fn connect(&mut self, id: NymId, host: &str, port: u16) -> Result<StreamHandle> {
        let rec = self.nyms.get_mut(&id).ok_or(EngineError::UnknownNym(id))?;
        if rec.state != NymState::Running {
            return Err(EngineError::InvalidTransition { nym: id, state: rec.state, op: "connect" });
        }
        let body = rec.body.as_ref().expect("live");
        let req = ProxyRequest { origin: NodeId::anon(id), dest_host: host.to_owned(), dest_port: port };
        Ok(body.transport.proxy_connect(&mut self.topology, &req)?)
    }

    /// Verifies every base block; a failure is reported as an event.
    pub(crate) fn check_base(&mut self) -> Result<()> {
        if let Err(OverlayError::TamperDetected { chunk }) = self.base.verify_all() {
            self.emit(EngineEvent::TamperDetected { chunk });
            return Err(EngineError::BaseImageTampered { chunk });
        }
        Ok(())
    }

    pub fn create_nym(&mut self, mode: NymMode, kind: Option<TransportKind>, spec: Option<NymBoxSpec>) -> Result<NymId> {
        let kind = kind.unwrap_or(self.config.default_transport);
        self.spawn(Spawn::fresh(mode, kind, spec.unwrap_or(self.config.spec)))
    }

    pub(crate) fn spawn(&mut self, s: Spawn) -> Result<NymId> {
        let free = self.config.host_ram_mb.saturating_sub(self.ram_in_use_mb());
        if s.spec.host_mb() > free {
            return Err(EngineError::BudgetExceeded { need_mb: s.spec.host_mb(), free_mb: free });
        }
        self.check_base()?;

        let id = NymId(self.next_id);
        let (anon_w, comm_w) = s.saved.unwrap_or_else(|| (Layer::writable(), Layer::writable()));
        let anon = OverlayStack::restore(self.base.layer().clone(), self.anon_config.clone(), &anon_w)?;
        let mut comm = OverlayStack::restore(self.base.layer().clone(), self.comm_config.clone(), &comm_w)?;
        self.topology.add_nymbox(id)?;
        let transport = match start_transport(s.kind, id, &self.config.relays, s.seed, &self.config.transport, self.clock) {
            Ok(t) => t,
            Err(e) => {
                self.topology.remove_nymbox(id);
                return Err(e.into());
            }
        };
        self.next_id += 1;

        let has_state = comm.exists(TRANSPORT_STATE_PATH);
        let state_line = match transport.guard_set() {
            Some(g) => format!("kind={}\nguards={}\n", s.kind, g.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join(",")),
            None => format!("kind={}\n", s.kind),
        };
        if !has_state {
            comm.write(TRANSPORT_STATE_PATH, state_line)?;
        }

        let mut anon_mem = VmMemory::new(self.config.vm_resident_pages);
        let mut comm_mem = VmMemory::new(self.config.vm_resident_pages);
        for i in 0..self.base.chunk_count().min(4) {
            let chunk = self.base.read_chunk(i).expect("verified above").to_vec();
            anon_mem.write(&mut self.arena, &chunk);
            comm_mem.write(&mut self.arena, &chunk);
        }

        let lat = self.config.latency;
        let mut trace = PhaseTrace::new(id, s.mode, s.origin.is_some());
        if let Some(ms) = s.loader_ms {
            trace.push(Phase::EphemeralLoader, ms);
        }
        trace.push(Phase::VmBoot, lat.vm_boot_ms);
        trace.push(Phase::TransportStartup, lat.transport_startup(s.kind, has_state));
        trace.push(Phase::PageLoad, lat.page_load_ms);
        self.clock += trace.total_ms();
        if s.record_phases {
            self.metrics.record(MetricSample::Phases(trace));
        }

        self.sanivm.register_nym(id);
        self.nyms.insert(
            id,
            NymRecord {
                id,
                mode: s.mode,
                state: NymState::Created,
                spec: s.spec,
                transport_kind: s.kind,
                created_at: self.clock,
                body: Some(NymBody {
                    anon,
                    comm,
                    transport,
                    guard_seed: s.seed,
                    anon_mem,
                    comm_mem,
                    origin: s.origin,
                    host: s.host,
                }),
            },
        );
        self.transition(id, NymState::Running, "create")?;
        Ok(id)
    }

    pub fn pause_nym(&mut self, id: NymId) -> Result<()> {
        self.transition(id, NymState::Paused, "pause")
    }

    pub fn resume_nym(&mut self, id: NymId) -> Result<()> {
        self.transition(id, NymState::Running, "resume")
    }

    fn stack_mut(&mut self, id: NymId, role: VmRole, op: &'static str) -> Result<(&mut OverlayStack, &mut VmMemory, &mut PageArena, u64)> {
        let spec = self.record(id)?.spec;
        let rec = self.nyms.get_mut(&id).expect("checked");
        if rec.state != NymState::Running {
            return Err(EngineError::InvalidTransition { nym: id, state: rec.state, op });
        }
        let body = rec.body.as_mut().expect("live");
        Ok(match role {
            VmRole::Anon => (&mut body.anon, &mut body.anon_mem, &mut self.arena, spec.anonvm.writable_disk_mb),
            VmRole::Comm => (&mut body.comm, &mut body.comm_mem, &mut self.arena, spec.commvm.writable_disk_mb),
        })
    }

    /// Writes a file into a VM's writable layer; the content also passes
    /// through the VM's page cache.
    pub fn write_file(&mut self, id: NymId, role: VmRole, path: &str, content: &[u8]) -> Result<()> {
        let (stack, mem, arena, limit_mb) = self.stack_mut(id, role, "write")?;
        let old = stack.writable().entry(path).map_or(0, |e| e.content.len() as u64);
        if stack.writable().content_bytes() - old + content.len() as u64 > limit_mb << 20 {
            return Err(EngineError::DiskFull { nym: id, limit_mb });
        }
        stack.write(path, content.to_vec())?;
        mem.write(arena, content);
        Ok(())
    }

    pub fn read_file(&mut self, id: NymId, role: VmRole, path: &str) -> Result<Vec<u8>> {
        let (stack, mem, arena, _) = self.stack_mut(id, role, "read")?;
        let content = stack.read(path)?.content.clone();
        mem.write(arena, &content);
        Ok(content)
    }

    pub fn remove_file(&mut self, id: NymId, role: VmRole, path: &str) -> Result<()> {
        let (stack, _, _, _) = self.stack_mut(id, role, "remove")?;
        Ok(stack.remove(path)?)
    }

    pub fn store_nym(&mut self, id: NymId, target: StoreTarget<'_>) -> Result<StoredReceipt> {
        let rec = self.record(id)?;
        match rec.mode {
            NymMode::Ephemeral => return Err(EngineError::ModeForbidsStore),
            NymMode::Preconfigured => {
                return Err(EngineError::ModeMismatch {
                    nym: id,
                    op: "store",
                    expected: NymMode::Persistent,
                    actual: NymMode::Preconfigured,
                })
            }
            NymMode::Persistent => {}
        }
        self.store_inner(id, target, false, None)
    }

    /// Replaces the boot image of a preconfigured nym.
    pub fn snapshot_nym(&mut self, id: NymId, target: StoreTarget<'_>) -> Result<StoredReceipt> {
        let rec = self.record(id)?;
        if rec.mode != NymMode::Preconfigured {
            return Err(EngineError::ModeMismatch { nym: id, op: "snapshot", expected: NymMode::Preconfigured, actual: rec.mode });
        }
        self.store_inner(id, target, true, None)
    }

    /// pause → extract → pack → upload through the nym's transport →
    /// resume. On failure the nym is resumed and nothing new is stored.
    pub(crate) fn store_inner(
        &mut self,
        id: NymId,
        target: StoreTarget<'_>,
        boot_image: bool,
        anon_override: Option<(Layer, Option<Digest>)>,
    ) -> Result<StoredReceipt> {
        let state = self.record(id)?.state;
        if !state.is_live() {
            return Err(EngineError::InvalidTransition { nym: id, state, op: "store" });
        }
        if state == NymState::Running {
            self.transition(id, NymState::Paused, "store")?;
        }
        self.transition(id, NymState::Storing, "store")?;
        let result = self.store_body(id, target, boot_image, anon_override);
        self.transition(id, NymState::Running, "store")?;
        let receipt = result?;
        self.metrics.record(MetricSample::ArchiveSize {
            nym: id,
            object: receipt.object.clone(),
            version: receipt.version,
            archive_bytes: receipt.archive_bytes,
            anon_bytes: receipt.anon_bytes,
            comm_bytes: receipt.comm_bytes,
        });
        self.emit(EngineEvent::Stored {
            nym: id,
            object: receipt.object.clone(),
            version: receipt.version,
            archive_bytes: receipt.archive_bytes,
            boot_image,
        });
        Ok(receipt)
    }

    fn store_body(
        &mut self,
        id: NymId,
        target: StoreTarget<'_>,
        boot_image: bool,
        anon_override: Option<(Layer, Option<Digest>)>,
    ) -> Result<StoredReceipt> {
        let clock = self.clock;
        let kdf = self.config.kdf;
        let rec = self.nyms.get_mut(&id).expect("checked");
        let (mode, kind) = (rec.mode, rec.transport_kind);
        let body = rec.body.as_mut().expect("live");
        let (anon, base_digest) = match anon_override {
            Some((layer, d)) => (layer, d),
            None => (body.anon.extract_writable(), None),
        };
        let comm = body.comm.extract_writable();
        let mut manifest = Manifest::new(target.object, mode, clock);
        manifest.boot_image = boot_image;
        manifest.base_digest = base_digest;
        manifest.transport = Some(kind);
        let bytes = pack(&anon, &comm, &manifest, target.password, &kdf);

        let mut stream = match target.backend.endpoint() {
            Some(host) => Some(body.transport.proxy_connect(
                &mut self.topology,
                &ProxyRequest { origin: NodeId::anon(id), dest_host: host.to_owned(), dest_port: 443 },
            )?),
            None => None,
        };
        let version = target.backend.put(stream.as_mut(), target.object, &bytes)?;
        let location = target.backend.location(target.object);
        body.origin = Some(Origin { location: location.clone(), object: target.object.to_owned() });
        Ok(StoredReceipt {
            nym: id,
            object: target.object.to_owned(),
            version,
            location,
            archive_digest: Digest::of(&bytes),
            archive_bytes: bytes.len() as u64,
            anon_bytes: encode_layer(&anon).len() as u64,
            comm_bytes: encode_layer(&comm).len() as u64,
            boot_image,
            observed_source: stream.map(|s| s.observed_source),
        })
    }

    /// Downloads through a short-lived ephemeral loader nym.
    pub(crate) fn fetch_archive(
        &mut self,
        object: &str,
        password: &str,
        backend: &mut dyn StorageBackend,
        version: Option<Version>,
    ) -> Result<(Vec<u8>, GuardSeed, String, u64)> {
        let location = backend.location(object);
        let seed = derive_guard_seed(&location, password);
        let mut loader = Spawn::fresh(NymMode::Ephemeral, self.config.default_transport, self.config.spec);
        loader.seed = self.config.seeded_loader.then_some(seed);
        loader.record_phases = false;
        let clock0 = self.clock;
        let lid = self.spawn(loader)?;
        let fetched = (|| -> Result<Vec<u8>> {
            let body = self.nyms.get_mut(&lid).and_then(|r| r.body.as_mut()).expect("loader live");
            let mut stream: Option<StreamHandle> = match backend.endpoint() {
                Some(host) => Some(body.transport.proxy_connect(
                    &mut self.topology,
                    &ProxyRequest { origin: NodeId::anon(lid), dest_host: host.to_owned(), dest_port: 443 },
                )?),
                None => None,
            };
            Ok(backend.get(stream.as_mut(), object, version)?)
        })();
        self.terminate_nym(lid)?;
        let bytes = fetched?;
        self.clock += bytes.len() as u64 / self.config.latency.link_bytes_per_ms.max(1);
        let loader_ms = self.clock - clock0;
        Ok((bytes, seed, location, loader_ms))
    }

    pub fn load_nym(
        &mut self,
        object: &str,
        password: &str,
        backend: &mut dyn StorageBackend,
        version: Option<Version>,
    ) -> Result<NymId> {
        let (bytes, seed, location, loader_ms) = self.fetch_archive(object, password, backend, version)?;
        let un = unpack(&bytes, password)?;
        let id = self.spawn(Spawn {
            mode: un.manifest.mode,
            kind: un.manifest.transport.unwrap_or(self.config.default_transport),
            spec: self.config.spec,
            seed: Some(seed),
            saved: Some((un.anon, un.comm)),
            origin: Some(Origin { location, object: object.to_owned() }),
            loader_ms: Some(loader_ms),
            host: None,
            record_phases: true,
        })?;
        self.emit(EngineEvent::Loaded { nym: id, object: object.to_owned(), version });
        Ok(id)
    }

    /// Securely erases the nym's layers and memory and removes its
    /// network nodes. Terminating a terminated nym does nothing.
    pub fn terminate_nym(&mut self, id: NymId) -> Result<()> {
        let rec = self.nyms.get_mut(&id).ok_or(EngineError::UnknownNym(id))?;
        if rec.state == NymState::Terminated {
            return Ok(());
        }
        if !rec.state.can_transition(NymState::Terminated) {
            return Err(EngineError::InvalidTransition { nym: id, state: rec.state, op: "terminate" });
        }
        if let Some(mut body) = rec.body.take() {
            body.anon.erase_writable();
            body.comm.erase_writable();
            body.anon_mem.release(&mut self.arena);
            body.comm_mem.release(&mut self.arena);
            if let Some(h) = body.host.as_mut() {
                h.finish_session();
            }
        }
        self.topology.remove_nymbox(id);
        self.sanivm.unregister_nym(id);
        self.transition(id, NymState::Terminated, "terminate")
    }

    pub fn session_end_policy(&self, id: NymId) -> Result<StoreAction> {
        Ok(match self.record(id)?.mode {
            NymMode::Persistent => StoreAction::StoreThenTerminate,
            NymMode::Ephemeral | NymMode::Preconfigured => StoreAction::Discard,
        })
    }

    /// Ends a session. Persistent nyms need an explicit store target;
    /// other modes are discarded.
    pub fn close_session(&mut self, id: NymId, store: Option<StoreTarget<'_>>) -> Result<Option<StoredReceipt>> {
        let receipt = match (self.session_end_policy(id)?, store) {
            (StoreAction::StoreThenTerminate, Some(t)) => Some(self.store_nym(id, t)?),
            (StoreAction::StoreThenTerminate, None) => return Err(EngineError::StoreConfirmationRequired(id)),
            (StoreAction::Discard, _) => None,
        };
        self.terminate_nym(id)?;
        Ok(receipt)
    }

    pub fn probe(&self) -> LeakReport {
        probe_isolation(&self.topology)
    }

    pub fn transfer(&mut self, id: NymId, file: &MediaFile, plan: &ScrubPlan, override_high: bool) -> Result<TransferReceipt> {
        let state = self.record(id)?.state;
        if !state.is_live() {
            return Err(crate::sanivm::SaniError::UnknownNym(id).into());
        }
        let r = self.sanivm.transfer(id, file, plan, override_high)?;
        self.emit(EngineEvent::Transferred { nym: id, file: file.name.clone(), stored_as: r.stored_as.clone() });
        Ok(r)
    }

    pub fn inbound(&self, id: NymId) -> Option<&InboundDir> {
        self.sanivm.inbound(id)
    }

    /// Raw dump of every byte buffer the engine holds, for residue scans.
    pub fn state_image(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for rec in self.nyms.values() {
            out.extend_from_slice(format!("{rec:?}").as_bytes());
            if let Some(b) = &rec.body {
                out.extend(encode_layer(b.anon.writable()));
                out.extend(encode_layer(b.comm.writable()));
                out.extend_from_slice(format!("{:?}", b.transport).as_bytes());
                if let Some(h) = &b.host {
                    h.dump_into(&mut out);
                }
            }
        }
        for p in self.arena.raw_pages() {
            out.extend_from_slice(p);
        }
        for b in self.sanivm.raw_bytes() {
            out.extend_from_slice(b);
        }
        out.extend(serde_json::to_vec(&self.metrics.snapshot()).unwrap_or_default());
        out.extend(encode_layer(&self.anon_config));
        out.extend(encode_layer(&self.comm_config));
        out.extend_from_slice(self.base.image());
        out.extend_from_slice(format!("{:?}", self.topology).as_bytes());
        out
    }
}
