use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::relay::RelayId;
use super::TransportError;

/// Seed for CommVM state such as the entry guard choice.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GuardSeed(pub [u8; 32]);

impl std::fmt::Debug for GuardSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GuardSeed({}..)", hex::encode(&self.0[..4]))
    }
}

impl GuardSeed {
    pub fn random() -> Self {
        let mut s = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut s);
        GuardSeed(s)
    }
}

fn relay_list_digest(sorted: &[&RelayId]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"nymkit relay list v1");
    for r in sorted {
        h.update((r.0.len() as u32).to_be_bytes());
        h.update(r.0.as_bytes());
    }
    h.finalize().into()
}

/// Picks the entry guard as a pure function of the seed and the set of
/// candidate relay ids (order of `relays` is irrelevant).
///
/// index = first 8 bytes (big-endian) of SHA-256(tag ∥ seed ∥ list digest)
/// mod |relays|, into the id-sorted list.
pub fn select_entry_guard(seed: &GuardSeed, relays: &[RelayId]) -> Result<RelayId, TransportError> {
    if relays.is_empty() {
        return Err(TransportError::NoRelays);
    }
    let mut sorted: Vec<&RelayId> = relays.iter().collect();
    sorted.sort();
    sorted.dedup();
    let mut h = Sha256::new();
    h.update(b"nymkit entry guard v1");
    h.update(seed.0);
    h.update(relay_list_digest(&sorted));
    let out: [u8; 32] = h.finalize().into();
    let v = u64::from_be_bytes(out[..8].try_into().unwrap());
    Ok(sorted[(v % sorted.len() as u64) as usize].clone())
}

/// Ordered sample of `n` distinct guards. The first element is
/// [`select_entry_guard`]; each later one is drawn from the remaining ids
/// with the k-th hash SHA-256(tag ∥ seed ∥ list digest ∥ k).
pub fn select_guard_set(seed: &GuardSeed, relays: &[RelayId], n: usize) -> Result<Vec<RelayId>, TransportError> {
    let first = select_entry_guard(seed, relays)?;
    let mut rest: Vec<&RelayId> = relays.iter().filter(|r| **r != first).collect();
    rest.sort();
    rest.dedup();
    let list = {
        let mut all: Vec<&RelayId> = relays.iter().collect();
        all.sort();
        all.dedup();
        relay_list_digest(&all)
    };
    let mut out = vec![first];
    for k in 1..n.max(1) {
        if rest.is_empty() {
            break;
        }
        let mut h = Sha256::new();
        h.update(b"nymkit guard set v1");
        h.update(seed.0);
        h.update(list);
        h.update((k as u64).to_be_bytes());
        let d: [u8; 32] = h.finalize().into();
        let v = u64::from_be_bytes(d[..8].try_into().unwrap());
        out.push(rest.remove((v % rest.len() as u64) as usize).clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<RelayId> {
        (0..n).map(|i| RelayId(format!("relay{i:02}"))).collect()
    }

    #[test]
    fn deterministic_and_order_free() {
        let seed = GuardSeed([7; 32]);
        let mut r = ids(10);
        let g = select_entry_guard(&seed, &r).unwrap();
        r.reverse();
        assert_eq!(select_entry_guard(&seed, &r).unwrap(), g);
        assert_eq!(select_entry_guard(&seed, &r).unwrap(), g);
    }

    #[test]
    fn single_relay_always_chosen() {
        let r = ids(1);
        for b in 0..20u8 {
            assert_eq!(select_entry_guard(&GuardSeed([b; 32]), &r).unwrap(), r[0]);
        }
    }

    #[test]
    fn guard_set_distinct_and_led_by_entry_guard() {
        let r = ids(10);
        for b in 0..50u8 {
            let seed = GuardSeed([b; 32]);
            let set = select_guard_set(&seed, &r, 3).unwrap();
            assert_eq!(set.len(), 3);
            assert_eq!(set[0], select_entry_guard(&seed, &r).unwrap());
            assert!(set[0] != set[1] && set[1] != set[2] && set[0] != set[2]);
        }
        assert_eq!(select_guard_set(&GuardSeed([1; 32]), &ids(2), 3).unwrap().len(), 2);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(select_entry_guard(&GuardSeed([0; 32]), &[]), Err(TransportError::NoRelays));
    }
}
