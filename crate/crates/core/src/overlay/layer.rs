use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use zeroize::Zeroize;

use super::{codec, OverlayError};
use crate::digest::Digest;

static NEXT_LAYER_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerId(u64);

impl LayerId {
    fn fresh() -> Self {
        LayerId(NEXT_LAYER_ID.fetch_add(1, Ordering::Relaxed))
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerMode {
    ReadOnly,
    Writable,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub content: Vec<u8>,
    pub metadata: BTreeMap<String, String>,
}

impl FileEntry {
    pub fn new(content: impl Into<Vec<u8>>) -> Self {
        FileEntry {
            content: content.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// One layer of an overlay stack.
///
/// A path appears in at most one of `entries` and `whiteouts`. Read-only
/// layers reject every mutation and cache their digest on first use.
#[derive(Debug)]
pub struct Layer {
    id: LayerId,
    mode: LayerMode,
    entries: BTreeMap<String, FileEntry>,
    whiteouts: BTreeSet<String>,
    digest: OnceLock<Digest>,
}

impl Clone for Layer {
    /// Clones share content but receive a fresh identity.
    fn clone(&self) -> Self {
        Layer {
            id: LayerId::fresh(),
            mode: self.mode,
            entries: self.entries.clone(),
            whiteouts: self.whiteouts.clone(),
            digest: self.digest.clone(),
        }
    }
}

impl PartialEq for Layer {
    /// Content equality; identity and mode are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.whiteouts == other.whiteouts
    }
}

impl Eq for Layer {}

impl Layer {
    pub fn new(mode: LayerMode) -> Self {
        Layer {
            id: LayerId::fresh(),
            mode,
            entries: BTreeMap::new(),
            whiteouts: BTreeSet::new(),
            digest: OnceLock::new(),
        }
    }

    pub fn writable() -> Self {
        Layer::new(LayerMode::Writable)
    }

    /// Builds a read-only layer from a fixed set of files.
    pub fn read_only<P, I>(files: I) -> Self
    where
        P: Into<String>,
        I: IntoIterator<Item = (P, FileEntry)>,
    {
        let mut layer = Layer::writable();
        for (p, e) in files {
            layer.entries.insert(p.into(), e);
        }
        layer.freeze()
    }

    pub(crate) fn from_parts(
        entries: BTreeMap<String, FileEntry>,
        whiteouts: BTreeSet<String>,
    ) -> Result<Self, OverlayError> {
        if entries.keys().any(|p| whiteouts.contains(p)) {
            return Err(OverlayError::BadEncoding("path is both entry and whiteout"));
        }
        Ok(Layer {
            id: LayerId::fresh(),
            mode: LayerMode::ReadOnly,
            entries,
            whiteouts,
            digest: OnceLock::new(),
        })
    }

    /// Converts into a read-only layer. Irreversible for this value.
    pub fn freeze(mut self) -> Self {
        self.mode = LayerMode::ReadOnly;
        self.digest = OnceLock::new();
        self
    }

    /// Returns a writable copy of this layer's contents.
    pub fn thaw(&self) -> Self {
        Layer {
            id: LayerId::fresh(),
            mode: LayerMode::Writable,
            entries: self.entries.clone(),
            whiteouts: self.whiteouts.clone(),
            digest: OnceLock::new(),
        }
    }

    pub fn id(&self) -> LayerId {
        self.id
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn is_read_only(&self) -> bool {
        self.mode == LayerMode::ReadOnly
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.whiteouts.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<String, FileEntry> {
        &self.entries
    }

    pub fn whiteouts(&self) -> &BTreeSet<String> {
        &self.whiteouts
    }

    pub fn entry(&self, path: &str) -> Option<&FileEntry> {
        self.entries.get(path)
    }

    pub fn has_whiteout(&self, path: &str) -> bool {
        self.whiteouts.contains(path)
    }

    /// Total content bytes held by the layer.
    pub fn content_bytes(&self) -> u64 {
        self.entries.values().map(|e| e.content.len() as u64).sum()
    }

    /// Digest of the deterministic serialized form.
    pub fn digest(&self) -> Digest {
        if self.is_read_only() {
            *self.digest.get_or_init(|| Digest::of(&codec::encode_layer(self)))
        } else {
            Digest::of(&codec::encode_layer(self))
        }
    }

    fn check_writable(&self) -> Result<(), OverlayError> {
        match self.mode {
            LayerMode::Writable => Ok(()),
            LayerMode::ReadOnly => Err(OverlayError::ReadOnly(self.id)),
        }
    }

    pub fn put(&mut self, path: &str, entry: FileEntry) -> Result<(), OverlayError> {
        self.check_writable()?;
        self.whiteouts.remove(path);
        self.entries.insert(path.to_owned(), entry);
        Ok(())
    }

    /// Drops an entry without leaving a whiteout. Returns whether one existed.
    pub fn delete(&mut self, path: &str) -> Result<bool, OverlayError> {
        self.check_writable()?;
        Ok(match self.entries.remove(path) {
            Some(mut e) => {
                e.content.zeroize();
                true
            }
            None => false,
        })
    }

    pub fn add_whiteout(&mut self, path: &str) -> Result<(), OverlayError> {
        self.check_writable()?;
        if let Some(mut e) = self.entries.remove(path) {
            e.content.zeroize();
        }
        self.whiteouts.insert(path.to_owned());
        Ok(())
    }

    /// Overwrites every content buffer with zeros and empties the layer.
    /// Applies to read-only layers too: erasure is release, not mutation.
    pub fn secure_erase(&mut self) {
        for (mut path, mut e) in std::mem::take(&mut self.entries) {
            e.content.zeroize();
            for (mut k, mut v) in std::mem::take(&mut e.metadata) {
                k.zeroize();
                v.zeroize();
            }
            path.zeroize();
        }
        for mut p in std::mem::take(&mut self.whiteouts) {
            p.zeroize();
        }
        self.digest = OnceLock::new();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_only_rejects_writes() {
        let mut l = Layer::read_only([("/a", FileEntry::new("x"))]);
        let before = l.digest();
        assert!(matches!(l.put("/b", FileEntry::new("y")), Err(OverlayError::ReadOnly(_))));
        assert!(l.add_whiteout("/a").is_err());
        assert!(l.delete("/a").is_err());
        assert_eq!(l.digest(), before);
    }

    #[test]
    fn entry_and_whiteout_are_exclusive() {
        let mut l = Layer::writable();
        l.put("/a", FileEntry::new("x")).unwrap();
        l.add_whiteout("/a").unwrap();
        assert!(l.entry("/a").is_none());
        assert!(l.has_whiteout("/a"));
        l.put("/a", FileEntry::new("y")).unwrap();
        assert!(!l.has_whiteout("/a"));
    }

    #[test]
    fn clone_gets_new_identity_same_digest() {
        let l = Layer::read_only([("/a", FileEntry::new("x"))]);
        let c = l.clone();
        assert_ne!(l.id(), c.id());
        assert_eq!(l.digest(), c.digest());
    }

    #[test]
    fn secure_erase_empties() {
        let mut l = Layer::writable();
        l.put("/secret", FileEntry::new(vec![7u8; 64])).unwrap();
        l.add_whiteout("/gone").unwrap();
        l.secure_erase();
        assert!(l.is_empty());
    }
}
