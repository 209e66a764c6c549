//! Read-only view of host files mounted into the SaniVM.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use super::media::MediaFile;
use super::SaniError;
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceEntry {
    /// Path relative to the mount root, `/`-separated.
    pub path: String,
    pub size: u64,
    pub digest: Digest,
}

#[derive(Debug, Clone)]
pub struct SourceCatalog {
    root: PathBuf,
    entries: Vec<SourceEntry>,
}

/// Indexes every regular file under `host_view`.
pub fn mount_sources(host_view: &Path) -> Result<SourceCatalog, SaniError> {
    let mut entries = Vec::new();
    for e in WalkDir::new(host_view).sort_by_file_name() {
        let e = e.map_err(|e| SaniError::Io(e.to_string()))?;
        if !e.file_type().is_file() {
            continue;
        }
        let bytes = fs::read(e.path()).map_err(|e| SaniError::Io(e.to_string()))?;
        let rel = e.path().strip_prefix(host_view).expect("walk stays under root");
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        entries.push(SourceEntry { path, size: bytes.len() as u64, digest: Digest::of(&bytes) });
    }
    Ok(SourceCatalog { root: host_view.to_path_buf(), entries })
}

impl SourceCatalog {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[SourceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry(&self, path: &str) -> Result<&SourceEntry, SaniError> {
        self.entries
            .iter()
            .find(|e| e.path == path)
            .ok_or_else(|| SaniError::NoSuchSource(path.to_owned()))
    }

    /// Reads and parses a catalogued file.
    pub fn open(&self, path: &str) -> Result<MediaFile, SaniError> {
        let e = self.entry(path)?;
        let bytes = fs::read(self.root.join(&e.path)).map_err(|e| SaniError::Io(e.to_string()))?;
        let name = path.rsplit('/').next().unwrap_or(path);
        MediaFile::parse(name, bytes)
    }

    /// Sources are mounted read-only; every write is refused.
    pub fn write(&self, path: &str, _bytes: &[u8]) -> Result<(), SaniError> {
        Err(SaniError::ReadOnlySource(path.to_owned()))
    }

    /// Paths whose current on-disk digest differs from the catalogued one.
    pub fn changed(&self) -> Result<Vec<String>, SaniError> {
        let mut out = Vec::new();
        for e in &self.entries {
            let bytes = fs::read(self.root.join(&e.path)).map_err(|e| SaniError::Io(e.to_string()))?;
            if Digest::of(&bytes) != e.digest {
                out.push(e.path.clone());
            }
        }
        Ok(out)
    }
}
