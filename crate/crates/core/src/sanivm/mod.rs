//! The sanitation VM: the one path by which host files reach a nym.
//!
//! Files are analysed, scrubbed under a user-approved plan, staged in the
//! hypervisor shared folder and then moved into the destination nym's
//! inbound directory. Inbound directories have no public write method.

mod analyze;
mod catalog;
pub mod fixtures;
mod media;
mod scrub;

pub use analyze::{analyze, analyze_with, Blacklist, BlacklistRule, RiskCategory, RiskFinding, Severity};
pub use catalog::{mount_sources, SourceCatalog, SourceEntry};
pub use media::{
    detect_kind, Bitmap, Content, Document, Image, MediaFile, MediaKind, Rect, DOCUMENT_MAGIC, IMAGE_MAGIC, PAGES_MAGIC,
};
pub use scrub::{
    add_noise, blur_region, downscale, rasterize, scrub, scrub_with_rng, ScrubPlan, Transform, DEFAULT_NOISE_AMPLITUDE,
};

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;
use zeroize::Zeroize;

use crate::digest::Digest;
use crate::ids::NymId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SaniError {
    #[error("{transform:?} does not apply to {kind:?} files")]
    KindMismatch { transform: Transform, kind: MediaKind },
    #[error("unresolved high-severity findings: {0:?}")]
    UnresolvedRisk(Vec<String>),
    #[error("unknown nym {0}")]
    UnknownNym(NymId),
    #[error("malformed file: {0}")]
    Malformed(&'static str),
    #[error("source is read-only: {0}")]
    ReadOnlySource(String),
    #[error("no such source: {0}")]
    NoSuchSource(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Capacity the shared folder reports to guests, whatever the host has.
pub const SHARED_FOLDER_CAPACITY: u64 = 1 << 30;

/// Files delivered to one nym. Read-only outside this module.
#[derive(Debug, Default, Clone)]
pub struct InboundDir {
    files: BTreeMap<String, Vec<u8>>,
}

impl InboundDir {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn read(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    fn place(&mut self, name: &str, bytes: Vec<u8>) -> String {
        let mut target = name.to_owned();
        let mut n = 1;
        while self.files.contains_key(&target) {
            target = format!("{name}~{n}");
            n += 1;
        }
        self.files.insert(target.clone(), bytes);
        target
    }

    fn erase(&mut self) {
        for v in self.files.values_mut() {
            v.zeroize();
        }
        self.files.clear();
    }

    pub(crate) fn raw_bytes(&self) -> impl Iterator<Item = &[u8]> {
        self.files.iter().flat_map(|(k, v)| [k.as_bytes(), v.as_slice()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub file: String,
    pub findings: Vec<RiskFinding>,
    pub plan: Vec<Transform>,
    pub paranoia: Option<u8>,
    /// High findings the user explicitly accepted.
    pub overrides: Vec<String>,
    pub destination: NymId,
    pub accepted: bool,
    pub stored_as: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferReceipt {
    pub nym: NymId,
    pub stored_as: String,
    pub digest: Digest,
    pub overridden: Vec<String>,
}

/// What the user is asked to approve before a transfer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Review {
    pub file: String,
    pub kind: MediaKind,
    pub findings: Vec<RiskFinding>,
    pub suggested: ScrubPlan,
}

#[derive(Debug, Default)]
pub struct SaniVm {
    blacklist: Blacklist,
    inbound: BTreeMap<NymId, InboundDir>,
    shared_folder: Vec<(String, Vec<u8>)>,
    audit: Vec<AuditRecord>,
}

impl SaniVm {
    pub fn new(blacklist: Blacklist) -> Self {
        SaniVm { blacklist, ..Default::default() }
    }

    pub fn blacklist(&self) -> &Blacklist {
        &self.blacklist
    }

    pub fn register_nym(&mut self, nym: NymId) {
        self.inbound.entry(nym).or_default();
    }

    /// Erases and forgets the nym's inbound directory.
    pub fn unregister_nym(&mut self, nym: NymId) {
        if let Some(mut d) = self.inbound.remove(&nym) {
            d.erase();
        }
    }

    pub fn inbound(&self, nym: NymId) -> Option<&InboundDir> {
        self.inbound.get(&nym)
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn write_audit_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.audit {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn shared_folder_capacity(&self) -> u64 {
        SHARED_FOLDER_CAPACITY
    }

    pub fn analyze(&self, file: &MediaFile) -> Vec<RiskFinding> {
        analyze_with(file, &self.blacklist)
    }

    pub fn review(&self, file: &MediaFile, paranoia: u8) -> Review {
        Review {
            file: file.name.clone(),
            kind: file.kind,
            findings: self.analyze(file),
            suggested: ScrubPlan::paranoia(paranoia, file.kind),
        }
    }

    /// Scrubs `file` under `plan` and delivers it to `nym`. High findings
    /// still present after scrubbing are refused unless `override_high`.
    pub fn transfer(
        &mut self,
        nym: NymId,
        file: &MediaFile,
        plan: &ScrubPlan,
        override_high: bool,
    ) -> Result<TransferReceipt, SaniError> {
        if !self.inbound.contains_key(&nym) {
            return Err(SaniError::UnknownNym(nym));
        }
        let findings = self.analyze(file);
        let scrubbed = scrub(file, plan)?;
        let residual: Vec<String> = self
            .analyze(&scrubbed)
            .into_iter()
            .filter(|f| f.severity == Severity::High)
            .map(|f| f.field)
            .collect();
        let mut record = AuditRecord {
            file: file.name.clone(),
            findings,
            plan: plan.transforms.clone(),
            paranoia: plan.paranoia,
            overrides: Vec::new(),
            destination: nym,
            accepted: false,
            stored_as: None,
        };
        if !residual.is_empty() && !override_high {
            self.audit.push(record);
            return Err(SaniError::UnresolvedRisk(residual));
        }
        record.overrides = residual.clone();

        let digest = Digest::of(&scrubbed.payload);
        self.shared_folder.push((scrubbed.name.clone(), scrubbed.payload));
        let (name, bytes) = self.shared_folder.pop().expect("just staged");
        let stored_as = self.inbound.get_mut(&nym).expect("checked above").place(&name, bytes);

        record.accepted = true;
        record.stored_as = Some(stored_as.clone());
        self.audit.push(record);
        Ok(TransferReceipt { nym, stored_as, digest, overridden: residual })
    }

    pub(crate) fn raw_bytes(&self) -> impl Iterator<Item = &[u8]> {
        self.inbound.values().flat_map(|d| d.raw_bytes())
    }
}
