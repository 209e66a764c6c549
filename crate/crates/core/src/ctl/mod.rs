//! Control surface: one dispatch table shared by the CLI and the local
//! socket API, plus the approval flow for risky transfers.

mod client;
mod server;

pub use client::CtlClient;
pub use server::{serve, ServerHandle};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, RecvTimeoutError, Sender};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::hostnym::{CowDisk, HostDiskImage};
use crate::ids::{NymId, NymMode};
use crate::metrics::phase_report;
use crate::nymcore::{Engine, EngineError, EngineEvent, StoreTarget};
use crate::sanivm::{mount_sources, MediaFile, SaniError, ScrubPlan};
use crate::snapstore::{StorageBackend, Version};
use crate::transports::TransportKind;

pub const SOCK_ENV: &str = "NYMKIT_SOCK";
pub const PASSWORD_ENV: &str = "NYMKIT_PASSWORD";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CtlError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("approval timed out")]
    ApprovalTimeout,
    #[error("transfer rejected by user")]
    ApprovalDenied,
    #[error("address in use: {0}")]
    AddressInUse(PathBuf),
    #[error("io: {0}")]
    Io(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("{0}")]
    Remote(String),
}

impl From<std::io::Error> for CtlError {
    fn from(e: std::io::Error) -> Self {
        CtlError::Io(e.to_string())
    }
}

impl From<SaniError> for CtlError {
    fn from(e: SaniError) -> Self {
        CtlError::Engine(e.into())
    }
}

impl CtlError {
    /// Innermost variant name, e.g. `ModeForbidsStore` or `StaleBase`.
    pub fn kind(&self) -> String {
        const WRAPPERS: &[&str] = &["Engine", "Host", "Transport", "Archive", "Backend", "Overlay", "Net", "Sani"];
        let dbg = format!("{self:?}");
        let mut rest = dbg.as_str();
        loop {
            let end = rest.find(|c: char| !c.is_alphanumeric() && c != '_').unwrap_or(rest.len());
            let name = &rest[..end];
            match rest[end..].strip_prefix('(') {
                Some(inner) if WRAPPERS.contains(&name) => rest = inner,
                _ => return name.to_owned(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Create,
    Load,
    Store,
    Snapshot,
    Terminate,
    List,
    Scrub,
    Transfer,
    Probe,
    Report,
    HostBoot,
}

impl Verb {
    pub const ALL: [Verb; 11] = [
        Verb::Create,
        Verb::Load,
        Verb::Store,
        Verb::Snapshot,
        Verb::Terminate,
        Verb::List,
        Verb::Scrub,
        Verb::Transfer,
        Verb::Probe,
        Verb::Report,
        Verb::HostBoot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Create => "create",
            Verb::Load => "load",
            Verb::Store => "store",
            Verb::Snapshot => "snapshot",
            Verb::Terminate => "terminate",
            Verb::List => "list",
            Verb::Scrub => "scrub",
            Verb::Transfer => "transfer",
            Verb::Probe => "probe",
            Verb::Report => "report",
            Verb::HostBoot => "host-boot",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = CtlError;

    fn from_str(s: &str) -> Result<Self, CtlError> {
        Verb::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| CtlError::UnknownVerb(s.to_owned()))
    }
}

/// Request frame: `{id, verb, args}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub verb: String,
    #[serde(default)]
    pub args: Value,
}

/// Response frame: `{id, ok, body}` or `{id, ok: false, error, kind}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub body: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl Response {
    pub fn from_result(id: u64, r: Result<Value, CtlError>) -> Self {
        match r {
            Ok(body) => Response { id, ok: true, body, error: None, kind: None },
            Err(e) => Response { id, ok: false, body: Value::Null, error: Some(e.to_string()), kind: Some(e.kind()) },
        }
    }
}

/// Notification frame pushed to subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ControlEvent {
    Engine { body: EngineEvent },
    ApprovalRequest { request: u64, nym: NymId, file: String, residual: Vec<String> },
    ApprovalResolved { request: u64, approved: bool },
    Probe { attempted: usize, violations: usize },
}

/// Engine plus the named storage backends it can reach.
pub struct CtlService {
    pub engine: Engine,
    backends: BTreeMap<String, Box<dyn StorageBackend>>,
}

impl CtlService {
    pub fn new(engine: Engine) -> Self {
        CtlService { engine, backends: BTreeMap::new() }
    }

    pub fn add_backend(&mut self, name: &str, backend: Box<dyn StorageBackend>) {
        self.backends.insert(name.to_owned(), backend);
    }

    pub fn backend_names(&self) -> Vec<String> {
        self.backends.keys().cloned().collect()
    }

    pub fn backend_mut(&mut self, name: &str) -> Result<&mut Box<dyn StorageBackend>, CtlError> {
        self.backends.get_mut(name).ok_or_else(|| CtlError::UnknownBackend(name.to_owned()))
    }

    /// Engine and backend borrowed together.
    fn split(&mut self, backend: &str) -> Result<(&mut Engine, &mut dyn StorageBackend), CtlError> {
        let b = self.backends.get_mut(backend).ok_or_else(|| CtlError::UnknownBackend(backend.to_owned()))?;
        Ok((&mut self.engine, b.as_mut()))
    }
}

/// State shared by every client of one service.
pub struct Shared {
    service: Mutex<CtlService>,
    subscribers: Mutex<Vec<Sender<ControlEvent>>>,
    pending: Mutex<BTreeMap<u64, Sender<bool>>>,
    next_request: AtomicU64,
    pub approval_timeout: Duration,
}

impl Shared {
    pub fn new(service: CtlService) -> Self {
        Shared {
            service: Mutex::new(service),
            subscribers: Mutex::new(Vec::new()),
            pending: Mutex::new(BTreeMap::new()),
            next_request: AtomicU64::new(1),
            approval_timeout: Duration::from_secs(60),
        }
    }

    pub fn with_approval_timeout(mut self, t: Duration) -> Self {
        self.approval_timeout = t;
        self
    }

    pub fn service(&self) -> MutexGuard<'_, CtlService> {
        self.service.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn subscribe(&self) -> std::sync::mpsc::Receiver<ControlEvent> {
        let (tx, rx) = channel();
        self.subscribers.lock().unwrap_or_else(|e| e.into_inner()).push(tx);
        rx
    }

    fn subscriber_count(&self) -> usize {
        self.subscribers.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn broadcast(&self, ev: ControlEvent) {
        self.subscribers.lock().unwrap_or_else(|e| e.into_inner()).retain(|s| s.send(ev.clone()).is_ok());
    }

    /// Answers a pending approval request. Returns false if none is
    /// waiting under that id.
    pub fn approve(&self, request: u64, approved: bool) -> bool {
        let tx = self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&request);
        match tx {
            Some(tx) => {
                let delivered = tx.send(approved).is_ok();
                self.broadcast(ControlEvent::ApprovalResolved { request, approved });
                delivered
            }
            None => false,
        }
    }

    /// Blocks until a subscriber answers or the timeout passes.
    fn request_approval(&self, nym: NymId, file: &str, residual: Vec<String>) -> Result<(), CtlError> {
        if self.subscriber_count() == 0 {
            return Err(SaniError::UnresolvedRisk(residual).into());
        }
        let request = self.next_request.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = channel();
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).insert(request, tx);
        self.broadcast(ControlEvent::ApprovalRequest { request, nym, file: file.to_owned(), residual });
        let answer = rx.recv_timeout(self.approval_timeout);
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(&request);
        match answer {
            Ok(true) => Ok(()),
            Ok(false) => Err(CtlError::ApprovalDenied),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => Err(CtlError::ApprovalTimeout),
        }
    }

    /// Forwards engine events to subscribers. Call after every operation.
    fn pump(&self, rx: &std::sync::mpsc::Receiver<EngineEvent>) {
        for body in rx.try_iter() {
            self.broadcast(ControlEvent::Engine { body });
        }
    }
}

type Handler = fn(&Shared, Value) -> Result<Value, CtlError>;

/// The single verb → operation table.
pub const DISPATCH: [(Verb, Handler); 11] = [
    (Verb::Create, h_create),
    (Verb::Load, h_load),
    (Verb::Store, h_store),
    (Verb::Snapshot, h_snapshot),
    (Verb::Terminate, h_terminate),
    (Verb::List, h_list),
    (Verb::Scrub, h_scrub),
    (Verb::Transfer, h_transfer),
    (Verb::Probe, h_probe),
    (Verb::Report, h_report),
    (Verb::HostBoot, h_host_boot),
];

pub fn handler(verb: Verb) -> Handler {
    DISPATCH.iter().find(|(v, _)| *v == verb).map(|(_, h)| *h).expect("every verb has a handler")
}

/// Runs one verb against the service.
pub fn dispatch(shared: &Shared, verb: &str, args: Value) -> Result<Value, CtlError> {
    let verb: Verb = verb.parse()?;
    log::info!("ctl {verb}");
    handler(verb)(shared, args)
}

fn parse<T: for<'de> Deserialize<'de>>(args: Value) -> Result<T, CtlError> {
    let args = if args.is_null() { json!({}) } else { args };
    serde_json::from_value(args).map_err(|e| CtlError::BadRequest(e.to_string()))
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CtlError> {
    serde_json::to_value(v).map_err(|e| CtlError::Protocol(e.to_string()))
}

/// Locks the service and forwards any engine events the closure caused.
fn with_service<T>(sh: &Shared, f: impl FnOnce(&mut CtlService) -> Result<T, CtlError>) -> Result<T, CtlError> {
    let mut svc = sh.service();
    let rx = svc.engine.subscribe();
    let out = f(&mut svc);
    drop(svc);
    sh.pump(&rx);
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateArgs {
    mode: NymMode,
    #[serde(default)]
    transport: Option<TransportKind>,
}

fn h_create(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: CreateArgs = parse(args)?;
    with_service(sh, |s| {
        let id = s.engine.create_nym(a.mode, a.transport, None)?;
        to_value(&s.engine.nym(id).expect("just created").summary())
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadArgs {
    object: String,
    password: String,
    #[serde(default = "default_backend")]
    backend: String,
    #[serde(default)]
    version: Option<Version>,
}

fn default_backend() -> String {
    "cloud".to_owned()
}

fn h_load(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: LoadArgs = parse(args)?;
    with_service(sh, |s| {
        let (engine, b) = s.split(&a.backend)?;
        let id = engine.load_nym(&a.object, &a.password, b, a.version)?;
        to_value(&engine.nym(id).expect("just loaded").summary())
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreArgs {
    nym: NymId,
    object: String,
    password: String,
    #[serde(default = "default_backend")]
    backend: String,
}

fn h_store(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: StoreArgs = parse(args)?;
    with_service(sh, |s| {
        let (engine, backend) = s.split(&a.backend)?;
        to_value(&engine.store_nym(a.nym, StoreTarget { object: &a.object, password: &a.password, backend })?)
    })
}

fn h_snapshot(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: StoreArgs = parse(args)?;
    with_service(sh, |s| {
        let (engine, backend) = s.split(&a.backend)?;
        to_value(&engine.snapshot_nym(a.nym, StoreTarget { object: &a.object, password: &a.password, backend })?)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NymArgs {
    nym: NymId,
}

fn h_terminate(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: NymArgs = parse(args)?;
    with_service(sh, |s| {
        s.engine.terminate_nym(a.nym)?;
        Ok(json!({ "nym": a.nym, "state": "terminated" }))
    })
}

fn h_list(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let _: BTreeMap<String, Value> = parse(args)?;
    with_service(sh, |s| to_value(&s.engine.list()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScrubArgs {
    path: PathBuf,
    #[serde(default = "default_paranoia")]
    paranoia: u8,
}

fn default_paranoia() -> u8 {
    2
}

/// Reads a host file through a read-only source catalog of its directory.
fn open_source(path: &Path) -> Result<MediaFile, CtlError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).ok_or_else(|| CtlError::BadRequest("bad path".into()))?;
    let catalog = mount_sources(dir)?;
    Ok(catalog.open(name)?)
}

fn h_scrub(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: ScrubArgs = parse(args)?;
    let file = open_source(&a.path)?;
    with_service(sh, |s| to_value(&s.engine.sanivm().review(&file, a.paranoia)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferArgs {
    nym: NymId,
    path: PathBuf,
    #[serde(default = "default_paranoia")]
    paranoia: u8,
    #[serde(default)]
    plan: Option<ScrubPlan>,
}

fn h_transfer(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: TransferArgs = parse(args)?;
    let file = open_source(&a.path)?;
    let plan = a.plan.unwrap_or_else(|| ScrubPlan::paranoia(a.paranoia, file.kind));
    let first = with_service(sh, |s| Ok(s.engine.transfer(a.nym, &file, &plan, false)));
    let residual = match first? {
        Ok(r) => return to_value(&r),
        Err(EngineError::Sani(SaniError::UnresolvedRisk(residual))) => residual,
        Err(e) => return Err(e.into()),
    };
    // the engine lock is not held while waiting for the user
    sh.request_approval(a.nym, &file.name, residual)?;
    with_service(sh, |s| to_value(&s.engine.transfer(a.nym, &file, &plan, true)?))
}

fn h_probe(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let _: BTreeMap<String, Value> = parse(args)?;
    let report = with_service(sh, |s| Ok(s.engine.probe()))?;
    sh.broadcast(ControlEvent::Probe { attempted: report.attempted.len(), violations: report.violations.len() });
    Ok(json!({
        "attempted": report.attempted.len(),
        "delivered": report.delivered.len(),
        "violations": report.violations,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportArgs {
    #[serde(default)]
    kind: ReportKind,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ReportKind {
    #[default]
    Phases,
    Samples,
    Audit,
}

fn h_report(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: ReportArgs = parse(args)?;
    with_service(sh, |s| match a.kind {
        ReportKind::Phases => to_value(&phase_report(&s.engine.metrics().phase_traces())),
        ReportKind::Samples => to_value(&s.engine.metrics().snapshot()),
        ReportKind::Audit => to_value(&s.engine.sanivm().audit_log()),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HostBootArgs {
    image: PathBuf,
    #[serde(default)]
    repair: bool,
    #[serde(default)]
    transport: Option<TransportKind>,
}

fn h_host_boot(sh: &Shared, args: Value) -> Result<Value, CtlError> {
    let a: HostBootArgs = parse(args)?;
    let img = HostDiskImage::decode(&std::fs::read(&a.image)?).map_err(EngineError::from)?;
    with_service(sh, |s| {
        let mut cow = CowDisk::new(img.into_shared());
        let repaired = if a.repair { Some(s.engine.repair_host_disk(&mut cow)?) } else { None };
        let id = s.engine.boot_installed_os(cow, a.transport)?;
        let mut v = to_value(&s.engine.nym(id).expect("just booted").summary())?;
        v["repair_delta_bytes"] = json!(repaired);
        Ok(v)
    })
}

/// Handles one request frame, including the protocol-level `approve`.
pub fn handle_request(shared: &Shared, req: Request) -> Response {
    let r = match req.verb.as_str() {
        "approve" => (|| {
            #[derive(Deserialize)]
            struct A {
                request: u64,
                approve: bool,
            }
            let a: A = parse(req.args.clone())?;
            if shared.approve(a.request, a.approve) {
                Ok(json!({ "request": a.request }))
            } else {
                Err(CtlError::BadRequest(format!("no pending request {}", a.request)))
            }
        })(),
        "verbs" => Ok(json!(Verb::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())),
        verb => dispatch(shared, verb, req.args.clone()),
    };
    Response::from_result(req.id, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_covers_every_verb_once() {
        let mut seen: Vec<Verb> = DISPATCH.iter().map(|(v, _)| *v).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), Verb::ALL.len());
        for v in Verb::ALL {
            assert_eq!(v.name().parse::<Verb>().unwrap(), v);
        }
    }

    #[test]
    fn error_kinds_unwrap() {
        assert_eq!(CtlError::Engine(EngineError::ModeForbidsStore).kind(), "ModeForbidsStore");
        let e = CtlError::Engine(EngineError::Host(crate::hostnym::HostError::StaleBase));
        assert_eq!(e.kind(), "StaleBase");
        assert_eq!(CtlError::ApprovalTimeout.kind(), "ApprovalTimeout");
    }
}
