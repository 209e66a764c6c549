//! DC-net broadcast simulator.
//!
//! Members share pairwise pads; every round each member transmits the XOR
//! of its pads, and the slot owner additionally XORs in its message. The
//! XOR of all transmissions reveals the message without revealing the
//! owner. Slots rotate round-robin: round `k` belongs to member
//! `k mod members`. No blame or accountability protocol.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcnetParams {
    pub slot_bytes: usize,
}

impl Default for DcnetParams {
    fn default() -> Self {
        DcnetParams { slot_bytes: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcnetGroup {
    members: usize,
    /// Index of this nym's member in the group.
    me: usize,
    secret: [u8; 32],
    params: DcnetParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTranscript {
    pub round: u64,
    /// One frame per member, in member order.
    pub frames: Vec<Vec<u8>>,
    pub output: Vec<u8>,
}

impl DcnetGroup {
    pub fn new(members: usize, me: usize, secret: [u8; 32], params: DcnetParams) -> Self {
        assert!(members >= 2 && me < members, "a DC-net needs at least two members");
        DcnetGroup { members, me, secret, params }
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn params(&self) -> &DcnetParams {
        &self.params
    }

    pub fn slot_owner(&self, round: u64) -> usize {
        (round % self.members as u64) as usize
    }

    fn pad(&self, a: usize, b: usize, round: u64) -> Vec<u8> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mut h = Sha256::new();
        h.update(b"nymkit dcnet pad v1");
        h.update(self.secret);
        h.update((lo as u64).to_be_bytes());
        h.update((hi as u64).to_be_bytes());
        h.update(round.to_be_bytes());
        let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
        let mut out = vec![0u8; self.params.slot_bytes];
        rng.fill_bytes(&mut out);
        out
    }

    /// Runs one round. `message` (at most one slot) is sent by the round's
    /// slot owner; it is zero-padded to the slot size.
    pub fn run_round(&self, round: u64, message: &[u8]) -> RoundTranscript {
        assert!(message.len() <= self.params.slot_bytes, "message exceeds slot");
        let owner = self.slot_owner(round);
        let mut frames = Vec::with_capacity(self.members);
        for i in 0..self.members {
            let mut f = vec![0u8; self.params.slot_bytes];
            for j in (0..self.members).filter(|j| *j != i) {
                for (x, p) in f.iter_mut().zip(self.pad(i, j, round)) {
                    *x ^= p;
                }
            }
            if i == owner {
                for (x, m) in f.iter_mut().zip(message) {
                    *x ^= m;
                }
            }
            frames.push(f);
        }
        let mut output = vec![0u8; self.params.slot_bytes];
        for f in &frames {
            for (o, x) in output.iter_mut().zip(f) {
                *o ^= x;
            }
        }
        RoundTranscript { round, frames, output }
    }

    /// Rounds this member must own to carry `payload` bytes, starting from
    /// round 0.
    pub fn owned_rounds(&self, payload: u64) -> impl Iterator<Item = u64> + '_ {
        let needed = payload.div_ceil(self.params.slot_bytes as u64);
        let step = self.members as u64;
        let first = self.me as u64;
        (0..needed).map(move |k| first + k * step)
    }

    /// Frames `(round, member, bytes)` emitted while carrying `payload`.
    pub fn schedule(&self, payload: u64) -> impl Iterator<Item = (u64, usize, usize)> + '_ {
        let slot = self.params.slot_bytes;
        let members = self.members;
        self.owned_rounds(payload)
            .flat_map(move |r| (0..members).map(move |m| (r, m, slot)))
    }

    pub fn wire_bytes(&self, payload: u64) -> u64 {
        self.schedule(payload).map(|(_, _, b)| b as u64).sum()
    }
}
