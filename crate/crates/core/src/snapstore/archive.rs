//! Snapshot archive format.
//!
//! ```text
//! magic        12  "NYMKIT-SNAP\0"
//! version       2  u16 BE
//! kdf id        1  1 = argon2id
//! kdf m_kib     4  u32 BE
//! kdf t         4  u32 BE
//! kdf p         4  u32 BE
//! compression   1  1 = deflate
//! salt         16
//! nonce        24
//! body length   8  u64 BE, ciphertext bytes excluding the tag
//! body          n  XChaCha20-Poly1305 ciphertext
//! tag          16
//! ```
//!
//! Everything before the body is bound as associated data. The plaintext
//! is deflate(manifest ∥ anon layer ∥ comm layer), each part prefixed by
//! a u64 BE length.

use std::io::{Read, Write};

use argon2::{Algorithm, Argon2, Params, Version};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{Key, XChaCha20Poly1305, XNonce};
use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use zeroize::Zeroizing;

use super::ArchiveError;
use crate::digest::Digest;
use crate::ids::{NymMode, SimTime};
use crate::overlay::{decode_layer, encode_layer, Layer};
use crate::transports::TransportKind;

pub const SNAP_MAGIC: &[u8; 12] = b"NYMKIT-SNAP\0";
pub const SNAP_VERSION: u16 = 1;
pub const SALT_LEN: usize = 16;
pub const NONCE_LEN: usize = 24;
pub const TAG_LEN: usize = 16;
/// Bytes before the body: magic, version, params block, salt, nonce, length.
pub const HEADER_LEN: usize = 12 + 2 + 14 + SALT_LEN + NONCE_LEN + 8;

const KDF_ARGON2ID: u8 = 1;
const COMPRESSION_DEFLATE: u8 = 1;

// Upper bounds on header-declared cost so a damaged header cannot demand
// unbounded work before authentication fails.
const MAX_M_KIB: u32 = 1 << 21;
const MAX_T: u32 = 32;
const MAX_P: u32 = 16;

/// Argon2id cost parameters recorded in every archive header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KdfParams {
    pub m_kib: u32,
    pub t: u32,
    pub p: u32,
}

impl Default for KdfParams {
    fn default() -> Self {
        KdfParams { m_kib: 19 * 1024, t: 2, p: 1 }
    }
}

impl KdfParams {
    /// Cheap parameters for tests and simulations.
    pub const FAST: KdfParams = KdfParams { m_kib: 64, t: 1, p: 1 };

    fn argon2(&self) -> Result<Argon2<'static>, ArchiveError> {
        let params = Params::new(self.m_kib, self.t, self.p, Some(32)).map_err(|_| ArchiveError::BadFormat("kdf parameters"))?;
        Ok(Argon2::new(Algorithm::Argon2id, Version::V0x13, params))
    }

    fn check(&self) -> Result<(), ArchiveError> {
        if self.m_kib > MAX_M_KIB || self.t == 0 || self.t > MAX_T || self.p == 0 || self.p > MAX_P {
            return Err(ArchiveError::BadFormat("kdf parameters out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub nym_name: String,
    pub mode: NymMode,
    pub anon_digest: Digest,
    pub comm_digest: Digest,
    pub created_at: SimTime,
    /// Lower-disk digest for host nyms stored as a COW overlay.
    #[serde(default)]
    pub base_digest: Option<Digest>,
    /// Set by explicit snapshots of preconfigured nyms.
    #[serde(default)]
    pub boot_image: bool,
    #[serde(default)]
    pub transport: Option<TransportKind>,
}

impl Manifest {
    pub fn new(nym_name: impl Into<String>, mode: NymMode, created_at: SimTime) -> Self {
        Manifest {
            nym_name: nym_name.into(),
            mode,
            anon_digest: Digest::ZERO,
            comm_digest: Digest::ZERO,
            created_at,
            base_digest: None,
            boot_image: false,
            transport: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unpacked {
    pub manifest: Manifest,
    pub anon: Layer,
    pub comm: Layer,
}

/// Packs with a fresh random salt and nonce.
pub fn pack(anon: &Layer, comm: &Layer, manifest: &Manifest, password: &str, kdf: &KdfParams) -> Vec<u8> {
    let mut salt = [0u8; SALT_LEN];
    let mut nonce = [0u8; NONCE_LEN];
    rand::thread_rng().fill_bytes(&mut salt);
    rand::thread_rng().fill_bytes(&mut nonce);
    pack_with(anon, comm, manifest, password, kdf, salt, nonce)
}

/// Packs with caller-chosen salt and nonce. Deterministic; never reuse a
/// (password, salt, nonce) triple for different contents.
pub fn pack_with(
    anon: &Layer,
    comm: &Layer,
    manifest: &Manifest,
    password: &str,
    kdf: &KdfParams,
    salt: [u8; SALT_LEN],
    nonce: [u8; NONCE_LEN],
) -> Vec<u8> {
    let mut manifest = manifest.clone();
    manifest.anon_digest = anon.digest();
    manifest.comm_digest = comm.digest();
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let anon_bytes = Zeroizing::new(encode_layer(anon));
    let comm_bytes = Zeroizing::new(encode_layer(comm));

    let mut plain = Zeroizing::new(Vec::with_capacity(24 + manifest_json.len() + anon_bytes.len() + comm_bytes.len()));
    for part in [&manifest_json[..], &anon_bytes[..], &comm_bytes[..]] {
        plain.extend_from_slice(&(part.len() as u64).to_be_bytes());
        plain.extend_from_slice(part);
    }
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&plain).expect("in-memory deflate");
    let compressed = Zeroizing::new(enc.finish().expect("in-memory deflate"));

    let key = derive_key(password, &salt, kdf).expect("kdf parameters valid");
    let cipher = XChaCha20Poly1305::new(&Key::from(*key));

    let body_len = compressed.len() as u64;
    let mut out = Vec::with_capacity(HEADER_LEN + compressed.len() + TAG_LEN);
    out.extend_from_slice(SNAP_MAGIC);
    out.extend_from_slice(&SNAP_VERSION.to_be_bytes());
    out.push(KDF_ARGON2ID);
    out.extend_from_slice(&kdf.m_kib.to_be_bytes());
    out.extend_from_slice(&kdf.t.to_be_bytes());
    out.extend_from_slice(&kdf.p.to_be_bytes());
    out.push(COMPRESSION_DEFLATE);
    out.extend_from_slice(&salt);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&body_len.to_be_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    let sealed = cipher
        .encrypt(&XNonce::from(nonce), Payload { msg: &compressed, aad: &out })
        .expect("xchacha encrypt");
    out.extend_from_slice(&sealed);
    out
}

fn derive_key(password: &str, salt: &[u8], kdf: &KdfParams) -> Result<Zeroizing<[u8; 32]>, ArchiveError> {
    let mut key = Zeroizing::new([0u8; 32]);
    kdf.argon2()?
        .hash_password_into(password.as_bytes(), salt, &mut *key)
        .map_err(|_| ArchiveError::BadFormat("kdf parameters"))?;
    Ok(key)
}

/// Parsed header fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub version: u16,
    pub kdf: KdfParams,
    pub salt: [u8; SALT_LEN],
    pub nonce: [u8; NONCE_LEN],
    pub body_len: u64,
}

pub fn read_header(bytes: &[u8]) -> Result<ArchiveHeader, ArchiveError> {
    if bytes.len() < HEADER_LEN {
        return Err(ArchiveError::BadFormat("truncated header"));
    }
    if &bytes[..12] != SNAP_MAGIC {
        return Err(ArchiveError::BadFormat("bad magic"));
    }
    let be32 = |at: usize| u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = u16::from_be_bytes([bytes[12], bytes[13]]);
    if version != SNAP_VERSION {
        return Err(ArchiveError::BadFormat("unsupported version"));
    }
    if bytes[14] != KDF_ARGON2ID {
        return Err(ArchiveError::BadFormat("unknown kdf"));
    }
    let kdf = KdfParams { m_kib: be32(15), t: be32(19), p: be32(23) };
    kdf.check()?;
    if bytes[27] != COMPRESSION_DEFLATE {
        return Err(ArchiveError::BadFormat("unknown compression"));
    }
    let salt = bytes[28..44].try_into().unwrap();
    let nonce = bytes[44..68].try_into().unwrap();
    let body_len = u64::from_be_bytes(bytes[68..76].try_into().unwrap());
    let expected = (HEADER_LEN as u64).checked_add(body_len).and_then(|n| n.checked_add(TAG_LEN as u64));
    match expected {
        Some(n) if n == bytes.len() as u64 => {}
        Some(n) if n > bytes.len() as u64 => return Err(ArchiveError::BadFormat("truncated body")),
        _ => return Err(ArchiveError::BadFormat("length mismatch")),
    }
    Ok(ArchiveHeader { version, kdf, salt, nonce, body_len })
}

/// Decrypts and verifies an archive. Wrong passwords and tampering both
/// surface as [`ArchiveError::AuthFailure`].
pub fn unpack(bytes: &[u8], password: &str) -> Result<Unpacked, ArchiveError> {
    let header = read_header(bytes)?;
    let key = derive_key(password, &header.salt, &header.kdf)?;
    let cipher = XChaCha20Poly1305::new(&Key::from(*key));
    let compressed = Zeroizing::new(
        cipher
            .decrypt(&XNonce::from(header.nonce), Payload { msg: &bytes[HEADER_LEN..], aad: &bytes[..HEADER_LEN] })
            .map_err(|_| ArchiveError::AuthFailure)?,
    );

    let mut plain = Zeroizing::new(Vec::new());
    DeflateDecoder::new(&compressed[..])
        .read_to_end(&mut plain)
        .map_err(|_| ArchiveError::BadFormat("body does not decompress"))?;

    let mut rest = &plain[..];
    let mut part = || -> Result<&[u8], ArchiveError> {
        if rest.len() < 8 {
            return Err(ArchiveError::BadFormat("truncated plaintext"));
        }
        let n = u64::from_be_bytes(rest[..8].try_into().unwrap());
        let n = usize::try_from(n).map_err(|_| ArchiveError::BadFormat("part length"))?;
        if rest.len() - 8 < n {
            return Err(ArchiveError::BadFormat("truncated plaintext"));
        }
        let (p, tail) = rest[8..].split_at(n);
        rest = tail;
        Ok(p)
    };
    let manifest: Manifest =
        serde_json::from_slice(part()?).map_err(|_| ArchiveError::BadFormat("manifest"))?;
    let anon = decode_layer(part()?).map_err(|_| ArchiveError::BadFormat("anon layer"))?;
    let comm = decode_layer(part()?).map_err(|_| ArchiveError::BadFormat("comm layer"))?;
    if !rest.is_empty() {
        return Err(ArchiveError::BadFormat("trailing plaintext"));
    }
    if anon.digest() != manifest.anon_digest || comm.digest() != manifest.comm_digest {
        return Err(ArchiveError::AuthFailure);
    }
    Ok(Unpacked { manifest, anon, comm })
}
