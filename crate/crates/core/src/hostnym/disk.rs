//! Host disk images and the block-level copy-on-write overlay.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use zeroize::Zeroize;

use super::HostError;
use crate::digest::Digest;

pub const DISK_MAGIC: &[u8; 12] = b"NYMKIT-DISK\0";
const CONFIG_MAGIC: &[u8; 11] = b"NYMKIT-CFG\0";
const DESCRIPTOR_LEN: usize = 12 + 1 + 1 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OsLabel {
    Linux,
    WindowsVista,
    Windows7,
    Windows8,
}

impl OsLabel {
    pub fn is_windows(self) -> bool {
        self != OsLabel::Linux
    }

    fn code(self) -> u8 {
        match self {
            OsLabel::Linux => 0,
            OsLabel::WindowsVista => 1,
            OsLabel::Windows7 => 2,
            OsLabel::Windows8 => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => OsLabel::Linux,
            1 => OsLabel::WindowsVista,
            2 => OsLabel::Windows7,
            3 => OsLabel::Windows8,
            _ => return None,
        })
    }
}

impl fmt::Display for OsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OsLabel::Linux => "linux",
            OsLabel::WindowsVista => "windowsvista",
            OsLabel::Windows7 => "windows7",
            OsLabel::Windows8 => "windows8",
        })
    }
}

impl FromStr for OsLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "linux" => Ok(OsLabel::Linux),
            "windowsvista" | "vista" => Ok(OsLabel::WindowsVista),
            "windows7" | "win7" => Ok(OsLabel::Windows7),
            "windows8" | "win8" => Ok(OsLabel::Windows8),
            other => Err(format!("unknown os label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverProfile {
    BareMetal,
    Virtual,
}

impl DriverProfile {
    fn code(self) -> u8 {
        match self {
            DriverProfile::BareMetal => 0,
            DriverProfile::Virtual => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(DriverProfile::BareMetal),
            1 => Some(DriverProfile::Virtual),
            _ => None,
        }
    }
}

/// Block 0 holds the OS configuration the boot check reads.
pub fn config_block(os: OsLabel, profile: DriverProfile, block_size: usize) -> Vec<u8> {
    let mut b = vec![0u8; block_size];
    b[..CONFIG_MAGIC.len()].copy_from_slice(CONFIG_MAGIC);
    b[CONFIG_MAGIC.len()] = os.code();
    b[CONFIG_MAGIC.len() + 1] = profile.code();
    b
}

pub fn parse_config_block(b: &[u8]) -> Option<(OsLabel, DriverProfile)> {
    let rest = b.strip_prefix(CONFIG_MAGIC.as_slice())?;
    Some((OsLabel::from_code(*rest.first()?)?, DriverProfile::from_code(*rest.get(1)?)?))
}

#[derive(Clone, PartialEq, Eq)]
pub struct HostDiskImage {
    os: OsLabel,
    profile: DriverProfile,
    block_size: usize,
    blocks: Vec<Vec<u8>>,
}

impl fmt::Debug for HostDiskImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HostDiskImage")
            .field("os", &self.os)
            .field("profile", &self.profile)
            .field("block_size", &self.block_size)
            .field("blocks", &self.blocks.len())
            .finish()
    }
}

pub type HostDisk = Arc<RwLock<HostDiskImage>>;

impl HostDiskImage {
    /// A disk of `count` blocks with deterministic filler after the
    /// config block.
    pub fn synthetic(os: OsLabel, profile: DriverProfile, block_size: usize, count: usize) -> Self {
        assert!(block_size >= 64 && count >= 1, "disk too small");
        let mut blocks = Vec::with_capacity(count);
        blocks.push(config_block(os, profile, block_size));
        for i in 1..count {
            let seed = Digest::of_parts([b"nymkit host block".as_slice(), &(i as u64).to_be_bytes()]);
            blocks.push(seed.as_bytes().iter().copied().cycle().take(block_size).collect());
        }
        HostDiskImage { os, profile, block_size, blocks }
    }

    pub fn into_shared(self) -> HostDisk {
        Arc::new(RwLock::new(self))
    }

    pub fn os(&self) -> OsLabel {
        self.os
    }

    /// Profile declared in the descriptor, i.e. what the hardware install
    /// was built for.
    pub fn profile(&self) -> DriverProfile {
        self.profile
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> Option<&[u8]> {
        self.blocks.get(i).map(Vec::as_slice)
    }

    /// Writes straight to the physical image; only write-back and tests
    /// should do this.
    pub fn write_block(&mut self, i: usize, data: &[u8]) -> Result<(), HostError> {
        let bs = self.block_size;
        let b = self.blocks.get_mut(i).ok_or(HostError::BadBlock(i))?;
        if data.len() != bs {
            return Err(HostError::BadBlock(i));
        }
        b.copy_from_slice(data);
        Ok(())
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }

    /// Raw block file: descriptor header then the blocks.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DESCRIPTOR_LEN + self.blocks.len() * self.block_size);
        out.extend_from_slice(DISK_MAGIC);
        out.push(self.os.code());
        out.push(self.profile.code());
        out.extend_from_slice(&(self.block_size as u32).to_be_bytes());
        out.extend_from_slice(&(self.blocks.len() as u64).to_be_bytes());
        for b in &self.blocks {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, HostError> {
        let bad = HostError::BadImage;
        let rest = bytes.strip_prefix(DISK_MAGIC.as_slice()).ok_or(bad.clone())?;
        if rest.len() < DESCRIPTOR_LEN - DISK_MAGIC.len() {
            return Err(bad);
        }
        let os = OsLabel::from_code(rest[0]).ok_or(bad.clone())?;
        let profile = DriverProfile::from_code(rest[1]).ok_or(bad.clone())?;
        let block_size = u32::from_be_bytes(rest[2..6].try_into().unwrap()) as usize;
        let count = u64::from_be_bytes(rest[6..14].try_into().unwrap());
        let body = &rest[14..];
        if block_size < 64 || count == 0 || (body.len() as u64) != count.saturating_mul(block_size as u64) {
            return Err(bad);
        }
        let blocks: Vec<Vec<u8>> = body.chunks(block_size).map(<[u8]>::to_vec).collect();
        Ok(HostDiskImage { os, profile, block_size, blocks })
    }
}

/// Copy-on-write view of a host disk. Reads resolve upper-then-lower;
/// writes only touch the upper map.
pub struct CowDisk {
    lower: HostDisk,
    upper: BTreeMap<usize, Vec<u8>>,
    lower_digest: Digest,
}

impl fmt::Debug for CowDisk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CowDisk").field("upper_blocks", &self.upper.len()).field("lower_digest", &self.lower_digest).finish()
    }
}

impl CowDisk {
    pub fn new(lower: HostDisk) -> Self {
        let lower_digest = lower.read().unwrap_or_else(|e| e.into_inner()).digest();
        CowDisk { lower, upper: BTreeMap::new(), lower_digest }
    }

    pub fn lower(&self) -> &HostDisk {
        &self.lower
    }

    /// Digest of the lower image when this overlay was opened or last
    /// merged.
    pub fn lower_digest(&self) -> Digest {
        self.lower_digest
    }

    pub fn block_size(&self) -> usize {
        self.lower.read().unwrap_or_else(|e| e.into_inner()).block_size()
    }

    pub fn block_count(&self) -> usize {
        self.lower.read().unwrap_or_else(|e| e.into_inner()).block_count()
    }

    pub fn read(&self, i: usize) -> Result<Vec<u8>, HostError> {
        if let Some(b) = self.upper.get(&i) {
            return Ok(b.clone());
        }
        let lower = self.lower.read().unwrap_or_else(|e| e.into_inner());
        lower.block(i).map(<[u8]>::to_vec).ok_or(HostError::BadBlock(i))
    }

    pub fn write(&mut self, i: usize, data: &[u8]) -> Result<(), HostError> {
        if i >= self.block_count() || data.len() != self.block_size() {
            return Err(HostError::BadBlock(i));
        }
        self.upper.insert(i, data.to_vec());
        Ok(())
    }

    pub fn upper(&self) -> &BTreeMap<usize, Vec<u8>> {
        &self.upper
    }

    pub fn upper_bytes(&self) -> u64 {
        self.upper.values().map(|b| b.len() as u64).sum()
    }

    /// OS label and driver profile as seen through the overlay.
    pub fn effective_config(&self) -> Result<(OsLabel, DriverProfile), HostError> {
        parse_config_block(&self.read(0)?).ok_or(HostError::BadImage)
    }

    /// Zeroes and drops every upper block.
    pub fn erase_upper(&mut self) {
        for b in self.upper.values_mut() {
            b.zeroize();
        }
        self.upper.clear();
    }

    /// Copies the upper blocks into the lower image and empties the upper.
    pub(crate) fn merge_into_lower(&mut self) -> Result<Digest, HostError> {
        let mut lower = self.lower.write().unwrap_or_else(|e| e.into_inner());
        for (i, b) in &self.upper {
            lower.write_block(*i, b)?;
        }
        self.lower_digest = lower.digest();
        drop(lower);
        self.erase_upper();
        Ok(self.lower_digest)
    }

    pub(crate) fn set_upper(&mut self, upper: BTreeMap<usize, Vec<u8>>) -> Result<(), HostError> {
        let (n, bs) = (self.block_count(), self.block_size());
        if let Some((i, _)) = upper.iter().find(|(i, b)| **i >= n || b.len() != bs) {
            return Err(HostError::BadBlock(*i));
        }
        self.upper = upper;
        Ok(())
    }
}
