//! Layered union file store.
//!
//! A nymbox VM sees its filesystem as a stack of three layers: the shared
//! read-only distribution image at the bottom, a read-only configuration
//! layer that masks role-specific files (network config, `/etc/rc.local`,
//! window manager startup), and a writable layer on top that absorbs every
//! write. Lower layers are never written; deletions of lower files are
//! recorded as whiteouts in the writable layer.
//!
//! Paths are opaque strings. There are no directory entries.

mod codec;
mod layer;
mod merkle;
mod stack;

pub use codec::{decode_layer, encode_layer, LAYER_MAGIC};
pub use layer::{FileEntry, Layer, LayerId, LayerMode};
pub use merkle::{MerkleIndex, MerkleProof, CHUNK_SIZE};
pub use stack::OverlayStack;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("path not found: {0}")]
    NotFound(String),
    #[error("layer {0} is read-only")]
    ReadOnly(LayerId),
    #[error("invalid stack: {0}")]
    InvalidStack(&'static str),
    #[error("malformed layer encoding: {0}")]
    BadEncoding(&'static str),
    #[error("chunk {chunk} failed Merkle verification")]
    TamperDetected { chunk: usize },
    #[error("chunk {chunk} out of range (index has {count} chunks)")]
    OutOfRange { chunk: usize, count: usize },
}
