//! The distribution base image, its role configuration layers and block
//! verification against a pinned Merkle root.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digest::Digest;
use crate::overlay::{encode_layer, FileEntry, Layer, MerkleIndex, OverlayError};

/// Deterministic synthetic distribution of roughly `kib` KiB.
pub fn synthetic_base_layer(kib: u32) -> Layer {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e796d6978);
    let mut files: Vec<(String, FileEntry)> = vec![
        ("/etc/rc.local".into(), FileEntry::new("#!/bin/sh\nexit 0\n").with_meta("mode", "755")),
        ("/etc/hostname".into(), FileEntry::new("nymix\n")),
        ("/etc/hosts".into(), FileEntry::new("127.0.0.1 localhost\n")),
        ("/etc/resolv.conf".into(), FileEntry::new("nameserver 10.0.0.1\n")),
    ];
    let mut left = kib as usize * 1024;
    let mut i = 0;
    while left > 0 {
        let n = left.min(48 * 1024);
        let mut body = vec![0u8; n];
        rng.fill_bytes(&mut body);
        files.push((format!("/usr/lib/lib{i:03}.so"), FileEntry::new(body).with_meta("mode", "644")));
        left -= n;
        i += 1;
    }
    Layer::read_only(files)
}

pub fn anon_config_layer() -> Layer {
    Layer::read_only([
        ("/etc/nymix/role", FileEntry::new("anonvm\n")),
        ("/etc/rc.local", FileEntry::new("#!/bin/sh\nstart-browser --proxy socks5://10.0.0.1:9050\n")),
        ("/etc/browser/policy.json", FileEntry::new(r#"{"proxy":"socks5://10.0.0.1:9050","dns":"proxy"}"#)),
    ])
}

pub fn comm_config_layer() -> Layer {
    Layer::read_only([
        ("/etc/nymix/role", FileEntry::new("commvm\n")),
        ("/etc/rc.local", FileEntry::new("#!/bin/sh\nstart-anonymizer\nstart-nat\n")),
        ("/etc/anonymizer/config", FileEntry::new("SocksPort 10.0.0.1:9050\nDNSPort 10.0.0.1:53\n")),
    ])
}

/// The read-only base layer with its serialized image and Merkle index.
#[derive(Debug)]
pub struct BaseImage {
    layer: Arc<Layer>,
    image: Vec<u8>,
    index: MerkleIndex,
}

impl BaseImage {
    /// Builds the image. With `pinned_root`, the image must hash to it.
    pub fn new(layer: Layer, pinned_root: Option<Digest>) -> Result<Self, Digest> {
        let layer = layer.freeze();
        let image = encode_layer(&layer);
        let index = MerkleIndex::build(&image);
        if let Some(pin) = pinned_root {
            if pin != index.root() {
                return Err(index.root());
            }
        }
        Ok(BaseImage { layer: Arc::new(layer), image, index })
    }

    pub fn layer(&self) -> &Arc<Layer> {
        &self.layer
    }

    pub fn root(&self) -> Digest {
        self.index.root()
    }

    pub fn image(&self) -> &[u8] {
        &self.image
    }

    pub fn chunk_count(&self) -> usize {
        self.index.chunk_count()
    }

    fn chunk(&self, i: usize) -> &[u8] {
        let cs = self.index.chunk_size();
        let start = (i * cs).min(self.image.len());
        &self.image[start..(start + cs).min(self.image.len())]
    }

    /// Reads block `i`, verified against the index.
    pub fn read_chunk(&self, i: usize) -> Result<&[u8], OverlayError> {
        let c = self.chunk(i);
        self.index.verify_chunk(i, c)?;
        Ok(c)
    }

    /// Verifies every block; stops at the first bad one.
    pub fn verify_all(&self) -> Result<(), OverlayError> {
        (0..self.chunk_count()).try_for_each(|i| self.read_chunk(i).map(|_| ()))
    }

    /// Fault injection: flips one bit of the stored image.
    pub fn flip_bit(&mut self, bit: usize) {
        self.image[bit / 8] ^= 1 << (bit % 8);
    }

    pub fn bit_len(&self) -> usize {
        self.image.len() * 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_root_checked() {
        let b = BaseImage::new(synthetic_base_layer(64), None).unwrap();
        let root = b.root();
        assert!(BaseImage::new(synthetic_base_layer(64), Some(root)).is_ok());
        assert!(BaseImage::new(synthetic_base_layer(65), Some(root)).is_err());
        assert!(b.chunk_count() >= 16);
        b.verify_all().unwrap();
    }

    #[test]
    fn flip_detected() {
        let mut b = BaseImage::new(synthetic_base_layer(16), None).unwrap();
        b.flip_bit(4096 * 8 + 3);
        assert_eq!(b.read_chunk(1), Err(OverlayError::TamperDetected { chunk: 1 }));
        assert!(b.read_chunk(0).is_ok());
    }
}
