use std::sync::Arc;

use super::{FileEntry, Layer, OverlayError};
use crate::digest::Digest;

/// Base, configuration and writable layers, bottom to top.
///
/// Only the writable layer is ever mutated. The base and configuration
/// layers are shared through `Arc` so every stack built from the same
/// distribution image points at the same bytes.
#[derive(Debug)]
pub struct OverlayStack {
    base: Arc<Layer>,
    config: Arc<Layer>,
    writable: Layer,
}

impl OverlayStack {
    pub fn stack_layers(
        base: Arc<Layer>,
        config: Arc<Layer>,
        writable: Layer,
    ) -> Result<Self, OverlayError> {
        if !writable.is_empty() {
            return Err(OverlayError::InvalidStack("writable layer must start empty"));
        }
        Self::assemble(base, config, writable)
    }

    /// Rebuilds a stack around a previously extracted writable layer.
    pub fn restore(base: Arc<Layer>, config: Arc<Layer>, saved: &Layer) -> Result<Self, OverlayError> {
        Self::assemble(base, config, saved.thaw())
    }

    fn assemble(base: Arc<Layer>, config: Arc<Layer>, writable: Layer) -> Result<Self, OverlayError> {
        if !base.is_read_only() {
            return Err(OverlayError::InvalidStack("base layer must be read-only"));
        }
        if !config.is_read_only() {
            return Err(OverlayError::InvalidStack("config layer must be read-only"));
        }
        if Arc::ptr_eq(&base, &config) || base.id() == config.id() {
            return Err(OverlayError::InvalidStack("config must be a distinct read-only layer"));
        }
        if writable.is_read_only() {
            return Err(OverlayError::InvalidStack("top layer must be writable"));
        }
        Ok(OverlayStack { base, config, writable })
    }

    pub fn base(&self) -> &Arc<Layer> {
        &self.base
    }

    pub fn config(&self) -> &Arc<Layer> {
        &self.config
    }

    pub fn writable(&self) -> &Layer {
        &self.writable
    }

    pub fn base_digest(&self) -> Digest {
        self.base.digest()
    }

    pub fn layer_count(&self) -> usize {
        3
    }

    fn layers_top_down(&self) -> [&Layer; 3] {
        [&self.writable, &self.config, &self.base]
    }

    pub fn read(&self, path: &str) -> Result<&FileEntry, OverlayError> {
        for layer in self.layers_top_down() {
            if layer.has_whiteout(path) {
                break;
            }
            if let Some(e) = layer.entry(path) {
                return Ok(e);
            }
        }
        Err(OverlayError::NotFound(path.to_owned()))
    }

    pub fn exists(&self, path: &str) -> bool {
        self.read(path).is_ok()
    }

    /// Whether a layer below the writable one would expose `path`.
    fn visible_below(&self, path: &str) -> bool {
        for layer in [&*self.config, &*self.base] {
            if layer.has_whiteout(path) {
                return false;
            }
            if layer.entry(path).is_some() {
                return true;
            }
        }
        false
    }

    pub fn write(&mut self, path: &str, content: impl Into<Vec<u8>>) -> Result<(), OverlayError> {
        self.write_entry(path, FileEntry::new(content))
    }

    pub fn write_entry(&mut self, path: &str, entry: FileEntry) -> Result<(), OverlayError> {
        self.writable.put(path, entry)
    }

    pub fn remove(&mut self, path: &str) -> Result<(), OverlayError> {
        if !self.exists(path) {
            return Err(OverlayError::NotFound(path.to_owned()));
        }
        self.writable.delete(path)?;
        if self.visible_below(path) {
            self.writable.add_whiteout(path)?;
        }
        Ok(())
    }

    /// Read-only copy of the writable layer, entries and whiteouts.
    pub fn extract_writable(&self) -> Layer {
        self.writable.clone().freeze()
    }

    /// Paths readable through the stack, in sorted order.
    pub fn visible_paths(&self) -> Vec<String> {
        let mut all: std::collections::BTreeSet<&String> = self.base.entries().keys().collect();
        all.extend(self.config.entries().keys());
        all.extend(self.writable.entries().keys());
        all.into_iter().filter(|p| self.exists(p)).cloned().collect()
    }

    pub(crate) fn erase_writable(&mut self) {
        self.writable.secure_erase();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn base() -> Arc<Layer> {
        Arc::new(Layer::read_only([
            ("/etc/rc.local", FileEntry::new("exit 0")),
            ("/bin/sh", FileEntry::new("ELF")),
            ("/etc/hosts", FileEntry::new("127.0.0.1 localhost")),
        ]))
    }

    fn config() -> Arc<Layer> {
        Arc::new(Layer::read_only([("/etc/rc.local", FileEntry::new("start-anonvm"))]))
    }

    fn fresh() -> OverlayStack {
        OverlayStack::stack_layers(base(), config(), Layer::writable()).unwrap()
    }

    #[test]
    fn construction_and_preconditions() {
        let s = fresh();
        assert_eq!(s.layer_count(), 3);
        assert!(!s.writable().is_read_only());

        let b = base();
        let err = OverlayStack::stack_layers(b.clone(), b, Layer::writable()).unwrap_err();
        assert_eq!(err, OverlayError::InvalidStack("config must be a distinct read-only layer"));

        let mut dirty = Layer::writable();
        dirty.put("/x", FileEntry::new("x")).unwrap();
        assert!(OverlayStack::stack_layers(base(), config(), dirty).is_err());
        assert!(OverlayStack::stack_layers(base(), config(), Layer::read_only(Vec::<(String, FileEntry)>::new())).is_err());
    }

    #[test]
    fn config_masks_rc_local() {
        let s = fresh();
        assert_eq!(s.read("/etc/rc.local").unwrap().content, b"start-anonvm");
        assert_eq!(s.read("/bin/sh").unwrap().content, b"ELF");
    }

    #[test]
    fn cow_write_leaves_base_alone() {
        let mut s = fresh();
        let before = s.base_digest();
        s.write("/bin/sh", "patched").unwrap();
        assert_eq!(s.read("/bin/sh").unwrap().content, b"patched");
        assert_eq!(s.base_digest(), before);
        assert_eq!(s.base().entry("/bin/sh").unwrap().content, b"ELF");
        s.write("/new", "n").unwrap();
        assert!(s.base().entry("/new").is_none() && s.config().entry("/new").is_none());
    }

    #[test]
    fn remove_semantics() {
        let mut s = fresh();
        s.remove("/etc/hosts").unwrap();
        assert!(matches!(s.read("/etc/hosts"), Err(OverlayError::NotFound(_))));
        assert!(s.writable().has_whiteout("/etc/hosts"));
        assert!(s.base().entry("/etc/hosts").is_some());

        s.write("/tmp/only-here", "x").unwrap();
        s.remove("/tmp/only-here").unwrap();
        assert!(!s.writable().has_whiteout("/tmp/only-here"));
        assert!(s.writable().entry("/tmp/only-here").is_none());

        assert!(matches!(s.remove("/nope"), Err(OverlayError::NotFound(_))));
        assert!(matches!(s.remove("/etc/hosts"), Err(OverlayError::NotFound(_))));

        s.write("/etc/hosts", "again").unwrap();
        assert_eq!(s.read("/etc/hosts").unwrap().content, b"again");
        assert!(!s.writable().has_whiteout("/etc/hosts"));
    }

    #[test]
    fn extract_writable_cases() {
        let mut s = fresh();
        assert!(s.extract_writable().is_empty());
        s.write("/home/user/a", "A").unwrap();
        let l = s.extract_writable();
        assert!(l.is_read_only());
        assert_eq!(l.entries().len(), 1);
        assert_eq!(l.entry("/home/user/a").unwrap().content, b"A");
        // stack unchanged
        assert_eq!(s.read("/home/user/a").unwrap().content, b"A");
    }

    #[test]
    fn restore_reproduces_reads() {
        let mut s = fresh();
        s.write("/a", "1").unwrap();
        s.remove("/bin/sh").unwrap();
        let saved = s.extract_writable();
        let r = OverlayStack::restore(s.base().clone(), s.config().clone(), &saved).unwrap();
        let seen: BTreeMap<_, _> = r.visible_paths().into_iter().map(|p| (p.clone(), r.read(&p).unwrap().clone())).collect();
        let orig: BTreeMap<_, _> = s.visible_paths().into_iter().map(|p| (p.clone(), s.read(&p).unwrap().clone())).collect();
        assert_eq!(seen, orig);
    }
}
