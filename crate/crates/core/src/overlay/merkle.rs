//! Binary Merkle tree over fixed-size chunks of a serialized layer.
//!
//! Leaves hash `0x00 ∥ chunk`, interior nodes hash `0x01 ∥ left ∥ right`.
//! A level with an odd node count duplicates its last node. The final
//! chunk may be short.

use sha2::{Digest as _, Sha256};

use super::OverlayError;
use crate::digest::Digest;

pub const CHUNK_SIZE: usize = 4096;

fn leaf_hash(chunk: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(chunk);
    Digest::from_bytes(h.finalize().into())
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([0x01]);
    h.update(left.as_bytes());
    h.update(right.as_bytes());
    Digest::from_bytes(h.finalize().into())
}

/// Sibling hashes from leaf to root. `true` means the sibling is on the left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub siblings: Vec<(bool, Digest)>,
}

#[derive(Debug, Clone)]
pub struct MerkleIndex {
    root: Digest,
    chunk_size: usize,
    /// levels[0] are leaves, the last level holds the root.
    levels: Vec<Vec<Digest>>,
}

impl MerkleIndex {
    pub fn build(image: &[u8]) -> Self {
        let leaves: Vec<Digest> = if image.is_empty() {
            vec![leaf_hash(&[])]
        } else {
            image.chunks(CHUNK_SIZE).map(leaf_hash).collect()
        };
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let cur = levels.last().unwrap();
            let next = cur
                .chunks(2)
                .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(next);
        }
        let root = levels.last().unwrap()[0];
        MerkleIndex { root, chunk_size: CHUNK_SIZE, levels }
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn chunk_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn proof(&self, chunk_no: usize) -> Result<MerkleProof, OverlayError> {
        self.check_range(chunk_no)?;
        let mut idx = chunk_no;
        let mut siblings = Vec::with_capacity(self.levels.len());
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = idx ^ 1;
            let d = *level.get(sib).unwrap_or(&level[idx]);
            siblings.push((sib < idx, d));
            idx /= 2;
        }
        Ok(MerkleProof { siblings })
    }

    fn check_range(&self, chunk_no: usize) -> Result<(), OverlayError> {
        if chunk_no >= self.chunk_count() {
            return Err(OverlayError::OutOfRange { chunk: chunk_no, count: self.chunk_count() });
        }
        Ok(())
    }

    /// Authenticates `chunk_bytes` as chunk `chunk_no` against the pinned root.
    pub fn verify_chunk(&self, chunk_no: usize, chunk_bytes: &[u8]) -> Result<(), OverlayError> {
        let proof = self.proof(chunk_no)?;
        if verify_with_proof(&self.root, chunk_bytes, &proof) {
            Ok(())
        } else {
            Err(OverlayError::TamperDetected { chunk: chunk_no })
        }
    }
}

pub fn verify_with_proof(root: &Digest, chunk_bytes: &[u8], proof: &MerkleProof) -> bool {
    let mut cur = leaf_hash(chunk_bytes);
    for (left, sib) in &proof.siblings {
        cur = if *left { node_hash(sib, &cur) } else { node_hash(&cur, sib) };
    }
    &cur == root
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent recursive root computation.
    fn naive_root(image: &[u8]) -> Digest {
        fn up(nodes: Vec<Digest>) -> Digest {
            if nodes.len() == 1 {
                return nodes[0];
            }
            let mut next = Vec::new();
            let mut i = 0;
            while i < nodes.len() {
                let l = nodes[i];
                let r = if i + 1 < nodes.len() { nodes[i + 1] } else { l };
                next.push(node_hash(&l, &r));
                i += 2;
            }
            up(next)
        }
        up(image.chunks(CHUNK_SIZE).map(leaf_hash).collect())
    }

    #[test]
    fn root_matches_naive_for_odd_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for chunks in [1usize, 2, 3, 5, 7, 8, 13] {
            let img: Vec<u8> = (0..chunks * CHUNK_SIZE - 100).map(|_| rng.gen()).collect();
            assert_eq!(MerkleIndex::build(&img).root(), naive_root(&img), "{chunks}");
        }
    }

    #[test]
    fn untampered_chunks_verify() {
        let img: Vec<u8> = (0..5 * CHUNK_SIZE + 17).map(|i| (i % 251) as u8).collect();
        let idx = MerkleIndex::build(&img);
        for (i, c) in img.chunks(CHUNK_SIZE).enumerate() {
            idx.verify_chunk(i, c).unwrap();
        }
    }

    #[test]
    fn flipped_bits_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img: Vec<u8> = (0..9 * CHUNK_SIZE).map(|_| rng.gen()).collect();
        let idx = MerkleIndex::build(&img);
        for _ in 0..200 {
            let chunk = rng.gen_range(0..idx.chunk_count());
            let mut c = img.chunks(CHUNK_SIZE).nth(chunk).unwrap().to_vec();
            let bit = rng.gen_range(0..c.len() * 8);
            c[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(idx.verify_chunk(chunk, &c), Err(OverlayError::TamperDetected { chunk }));
        }
    }

    #[test]
    fn out_of_range() {
        let idx = MerkleIndex::build(&[1, 2, 3]);
        assert_eq!(idx.chunk_count(), 1);
        assert!(matches!(idx.verify_chunk(1, &[1, 2, 3]), Err(OverlayError::OutOfRange { .. })));
    }

    #[test]
    fn swapped_chunk_rejected() {
        let img: Vec<u8> = (0..2 * CHUNK_SIZE).map(|i| (i / CHUNK_SIZE) as u8).collect();
        let idx = MerkleIndex::build(&img);
        assert!(idx.verify_chunk(0, &img[CHUNK_SIZE..]).is_err());
    }
}
