//! Onion-circuit simulator: path selection, cell framing and layered
//! wrapping modeled with opaque nesting markers (no cryptography).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::guard::{select_guard_set, GuardSeed};
use super::relay::{Relay, RelayId};
use super::TransportError;
use crate::ids::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnionParams {
    pub path_len: usize,
    pub cell_size: usize,
    pub cell_header: usize,
    /// Size of the persistent entry guard set.
    #[serde(default = "default_guard_set")]
    pub guard_set_size: usize,
}

fn default_guard_set() -> usize {
    3
}

impl Default for OnionParams {
    fn default() -> Self {
        OnionParams { path_len: 3, cell_size: 512, cell_header: 14, guard_set_size: 3 }
    }
}

impl OnionParams {
    pub fn cell_payload(&self) -> usize {
        self.cell_size - self.cell_header
    }

    /// Bytes on the wire for `payload` bytes, counted cell by cell.
    pub fn wire_bytes(&self, payload: u64) -> u64 {
        let usable = self.cell_payload() as u64;
        let mut remaining = payload;
        let mut wire = 0u64;
        while remaining > 0 {
            remaining -= remaining.min(usable);
            wire += self.cell_size as u64;
        }
        wire
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitState {
    pub entry_guard: RelayId,
    /// Ordered guard set; `entry_guard` is its first member.
    pub guard_set: Vec<RelayId>,
    pub path: Vec<RelayId>,
    pub established_at: SimTime,
}

impl CircuitState {
    pub fn exit(&self) -> &RelayId {
        self.path.last().expect("non-empty path")
    }
}

pub(crate) fn guard_candidates(relays: &[Relay]) -> Vec<RelayId> {
    let flagged: Vec<RelayId> = relays.iter().filter(|r| r.flags.guard).map(|r| r.id.clone()).collect();
    if flagged.is_empty() {
        relays.iter().map(|r| r.id.clone()).collect()
    } else {
        flagged
    }
}

/// Builds a circuit whose first hop is the seed-selected entry guard.
/// Middle and exit hops are drawn from a stream keyed by the seed and
/// `generation`, so a reconnect picks new ones but keeps the guard.
pub fn build_circuit(
    seed: &GuardSeed,
    relays: &[Relay],
    params: &OnionParams,
    generation: u64,
    now: SimTime,
) -> Result<CircuitState, TransportError> {
    if relays.is_empty() {
        return Err(TransportError::NoRelays);
    }
    let guard_set = select_guard_set(seed, &guard_candidates(relays), params.guard_set_size)?;
    let guard = guard_set[0].clone();
    if relays.len() < params.path_len.max(1) {
        return Err(TransportError::InsufficientRelays { need: params.path_len, have: relays.len() });
    }
    let mut h = Sha256::new();
    h.update(b"nymkit circuit path v1");
    h.update(seed.0);
    h.update(generation.to_be_bytes());
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());

    let mut path = vec![guard.clone()];
    if params.path_len > 1 {
        let mut exits: Vec<&Relay> = relays.iter().filter(|r| r.flags.exit && r.id != guard).collect();
        if exits.is_empty() {
            exits = relays.iter().filter(|r| r.id != guard).collect();
        }
        let exit = exits.choose(&mut rng).ok_or(TransportError::InsufficientRelays { need: params.path_len, have: relays.len() })?.id.clone();
        let mut middles: Vec<&RelayId> = relays.iter().map(|r| &r.id).filter(|id| **id != guard && **id != exit).collect();
        middles.sort();
        middles.shuffle(&mut rng);
        if middles.len() < params.path_len - 2 {
            return Err(TransportError::InsufficientRelays { need: params.path_len, have: relays.len() });
        }
        path.extend(middles.into_iter().take(params.path_len - 2).cloned());
        path.push(exit);
    }
    Ok(CircuitState { entry_guard: guard, guard_set, path, established_at: now })
}

const MARK_OPEN: &[u8] = b"ONION[";

/// Wraps `payload` once per hop, outermost layer for the first hop.
pub fn wrap(payload: &[u8], path: &[RelayId]) -> Vec<u8> {
    let mut cur = payload.to_vec();
    for hop in path.iter().rev() {
        let mut next = Vec::with_capacity(cur.len() + hop.0.len() + 16);
        next.extend_from_slice(MARK_OPEN);
        next.extend_from_slice(&(hop.0.len() as u16).to_be_bytes());
        next.extend_from_slice(hop.0.as_bytes());
        next.extend_from_slice(&(cur.len() as u32).to_be_bytes());
        next.extend_from_slice(&cur);
        next.push(b']');
        cur = next;
    }
    cur
}

/// Removes the layer addressed to `hop`, or `None` if the outer layer
/// belongs to a different relay or is malformed.
pub fn peel(cell: &[u8], hop: &RelayId) -> Option<Vec<u8>> {
    let rest = cell.strip_prefix(MARK_OPEN)?;
    let id_len = u16::from_be_bytes(rest.get(..2)?.try_into().ok()?) as usize;
    let id = rest.get(2..2 + id_len)?;
    if id != hop.0.as_bytes() {
        return None;
    }
    let at = 2 + id_len;
    let body_len = u32::from_be_bytes(rest.get(at..at + 4)?.try_into().ok()?) as usize;
    let body = rest.get(at + 4..at + 4 + body_len)?;
    (rest.get(at + 4 + body_len..)? == b"]").then(|| body.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relays(n: usize) -> Vec<Relay> {
        (0..n).map(|i| Relay::new(&format!("r{i}"), i % 2 == 0, i % 3 == 0)).collect()
    }

    #[test]
    fn circuit_shape() {
        let c = build_circuit(&GuardSeed([1; 32]), &relays(10), &OnionParams::default(), 0, 5).unwrap();
        assert_eq!(c.path.len(), 3);
        assert_eq!(c.path[0], c.entry_guard);
        let mut d = c.path.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 3);
        assert_eq!(c.established_at, 5);
    }

    #[test]
    fn reconnect_keeps_guard() {
        let seed = GuardSeed([2; 32]);
        let r = relays(12);
        let first = build_circuit(&seed, &r, &OnionParams::default(), 0, 0).unwrap();
        for g in 1..20 {
            assert_eq!(build_circuit(&seed, &r, &OnionParams::default(), g, 0).unwrap().entry_guard, first.entry_guard);
        }
    }

    #[test]
    fn too_few_relays() {
        let e = build_circuit(&GuardSeed([0; 32]), &relays(2), &OnionParams::default(), 0, 0).unwrap_err();
        assert_eq!(e, TransportError::InsufficientRelays { need: 3, have: 2 });
    }

    #[test]
    fn cell_count_matches_formula() {
        let p = OnionParams::default();
        assert_eq!(p.wire_bytes(1), 512);
        assert_eq!(p.wire_bytes(498), 512);
        assert_eq!(p.wire_bytes(499), 1024);
        assert_eq!(p.wire_bytes(498_000), 512_000);
    }

    #[test]
    fn layers_peel_in_order() {
        let path: Vec<RelayId> = ["g", "m", "x"].iter().map(|s| RelayId::from(*s)).collect();
        let mut cell = wrap(b"GET /", &path);
        assert!(peel(&cell, &path[1]).is_none());
        for hop in &path {
            cell = peel(&cell, hop).unwrap();
        }
        assert_eq!(cell, b"GET /");
    }
}
