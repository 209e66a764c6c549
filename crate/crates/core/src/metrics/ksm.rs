//! Samepage-merging accounting.

use serde::{Deserialize, Serialize};

use crate::digest::Digest;

pub const PAGE_SIZE: u64 = 4096;

/// Page contents of one VM, by digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PagePool {
    pub owner: String,
    pub pages: Vec<Digest>,
}

impl PagePool {
    /// Splits `bytes` into 4096-byte pages (the last zero-padded).
    pub fn from_bytes(owner: impl Into<String>, bytes: &[u8]) -> Self {
        let pages = bytes
            .chunks(PAGE_SIZE as usize)
            .map(|c| {
                if c.len() == PAGE_SIZE as usize {
                    Digest::of(c)
                } else {
                    let mut p = c.to_vec();
                    p.resize(PAGE_SIZE as usize, 0);
                    Digest::of(&p)
                }
            })
            .collect();
        PagePool { owner: owner.into(), pages }
    }

    pub fn size_bytes(&self) -> u64 {
        self.pages.len() as u64 * PAGE_SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KsmReport {
    pub used_bytes_no_merge: u64,
    pub used_bytes_merged: u64,
    pub shared_page_count: u64,
}

impl KsmReport {
    pub fn saving_fraction(&self) -> f64 {
        if self.used_bytes_no_merge == 0 {
            return 0.0;
        }
        1.0 - self.used_bytes_merged as f64 / self.used_bytes_no_merge as f64
    }
}

/// shared = Σ over groups of equal digests of (group size − 1).
pub fn ksm_account(pools: &[PagePool]) -> KsmReport {
    let mut all: Vec<&Digest> = pools.iter().flat_map(|p| p.pages.iter()).collect();
    let total = all.len() as u64;
    all.sort_unstable();
    let distinct = if all.is_empty() { 0 } else { 1 + all.windows(2).filter(|w| w[0] != w[1]).count() as u64 };
    let shared = total - distinct;
    KsmReport {
        used_bytes_no_merge: total * PAGE_SIZE,
        used_bytes_merged: (total - shared) * PAGE_SIZE,
        shared_page_count: shared,
    }
}

/// Page-duplication model: every VM maps the same `shared_base_mib` of
/// base-image pages; the rest of its pool (RAM plus writable disk, both
/// host-RAM backed) is unique to that VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicationModel {
    pub shared_base_mib: u64,
}

impl Default for DuplicationModel {
    fn default() -> Self {
        DuplicationModel { shared_base_mib: 24 }
    }
}

fn synthetic_page(tag: &str, owner: &str, index: u64) -> Digest {
    // Stands for the digest of a page whose content is expanded from
    // (tag, owner, index); distinct inputs give distinct content.
    Digest::of_parts([tag.as_bytes(), owner.as_bytes(), &index.to_be_bytes()[..]])
}

impl DuplicationModel {
    pub fn shared_pages(&self) -> u64 {
        self.shared_base_mib * 1024 * 1024 / PAGE_SIZE
    }

    /// Pool for one VM of `pool_mib` total.
    pub fn pool(&self, owner: &str, pool_mib: u64) -> PagePool {
        let total = pool_mib * 1024 * 1024 / PAGE_SIZE;
        let shared = self.shared_pages().min(total);
        let mut pages = Vec::with_capacity(total as usize);
        pages.extend((0..shared).map(|i| synthetic_page("base", "", i)));
        pages.extend((shared..total).map(|i| synthetic_page("unique", owner, i)));
        PagePool { owner: owner.into(), pages }
    }

    /// Pools for `nyms` nymboxes, each an AnonVM and a CommVM.
    pub fn nymbox_pools(&self, nyms: u32, anon_pool_mib: u64, comm_pool_mib: u64) -> Vec<PagePool> {
        (0..nyms)
            .flat_map(|n| [self.pool(&format!("anonvm:nym-{n}"), anon_pool_mib), self.pool(&format!("commvm:nym-{n}"), comm_pool_mib)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pools_halve() {
        let a = PagePool::from_bytes("a", &vec![7u8; 8 * 4096]);
        let mut bytes = Vec::new();
        for i in 0..8u8 {
            bytes.extend(std::iter::repeat(i).take(4096));
        }
        let p = PagePool::from_bytes("p", &bytes);
        let q = PagePool { owner: "q".into(), ..p.clone() };
        let r = ksm_account(&[p, q]);
        assert_eq!(r.shared_page_count, 8);
        assert_eq!(r.used_bytes_merged * 2, r.used_bytes_no_merge);
        // One pool of eight identical pages merges to one.
        assert_eq!(ksm_account(&[a]).shared_page_count, 7);
    }

    #[test]
    fn unique_pages_do_not_merge() {
        let bytes: Vec<u8> = (0..4 * 4096u32).map(|i| (i / 4096) as u8).collect();
        let r = ksm_account(&[PagePool::from_bytes("x", &bytes)]);
        assert_eq!(r.shared_page_count, 0);
        assert_eq!(r.used_bytes_merged, r.used_bytes_no_merge);
        assert_eq!(ksm_account(&[]).used_bytes_no_merge, 0);
    }
}
