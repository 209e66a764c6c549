use serde::{Deserialize, Serialize};

use crate::ids::{NymId, NymMode};
use crate::nymcore::{Engine, EngineError, StoreTarget, StoredReceipt, Workload};
use crate::snapstore::StorageBackend;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub cycle: u32,
    pub archive_bytes: u64,
    pub anon_bytes: u64,
    pub comm_bytes: u64,
    pub anon_fraction: f64,
}

impl SizePoint {
    fn from_receipt(cycle: u32, archive_bytes: u64, r: &StoredReceipt) -> Self {
        let total = (r.anon_bytes + r.comm_bytes).max(1);
        SizePoint {
            cycle,
            archive_bytes,
            anon_bytes: r.anon_bytes,
            comm_bytes: r.comm_bytes,
            anon_fraction: r.anon_bytes as f64 / total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSeries {
    pub mode: NymMode,
    pub points: Vec<SizePoint>,
    /// The nym left running after the last cycle.
    pub final_nym: NymId,
}

impl SizeSeries {
    pub fn is_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].archive_bytes >= w[0].archive_bytes)
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].archive_bytes > w[0].archive_bytes)
    }

    pub fn is_flat(&self) -> bool {
        self.points.windows(2).all(|w| w[1].archive_bytes == w[0].archive_bytes)
    }
}

fn latest_size(backend: &dyn StorageBackend, object: &str) -> Option<u64> {
    let dump = backend.dump().ok()?;
    dump.into_iter().filter(|(o, _, _)| o == object).max_by_key(|(_, v, _)| *v).map(|(_, _, b)| b.len() as u64)
}

/// Runs `cycles` save/restore cycles of `w` on a persistent or
/// preconfigured nym and records the stored archive size after each.
///
/// Persistent: workload, store, terminate, load. Preconfigured: the first
/// cycle snapshots the boot image; later ones load it, run the workload
/// and discard.
pub fn size_series(
    engine: &mut Engine,
    nym: NymId,
    cycles: u32,
    w: &Workload,
    object: &str,
    password: &str,
    backend: &mut dyn StorageBackend,
) -> Result<SizeSeries, EngineError> {
    let mode = engine.nym(nym).ok_or(EngineError::UnknownNym(nym))?.mode;
    let mut points = Vec::with_capacity(cycles as usize);
    let mut id = nym;
    let mut boot: Option<StoredReceipt> = None;
    for cycle in 0..cycles {
        let work = Workload { seed: w.seed.wrapping_add(u64::from(cycle)), ..*w };
        engine.run_workload(id, &work)?;
        match mode {
            NymMode::Preconfigured => {
                let r = match &boot {
                    Some(r) => r.clone(),
                    None => {
                        let r = engine.snapshot_nym(id, StoreTarget { object, password, backend: &mut *backend })?;
                        boot = Some(r.clone());
                        r
                    }
                };
                let stored = latest_size(&*backend, object).unwrap_or(r.archive_bytes);
                points.push(SizePoint::from_receipt(cycle, stored, &r));
            }
            _ => {
                let r = engine.store_nym(id, StoreTarget { object, password, backend: &mut *backend })?;
                points.push(SizePoint::from_receipt(cycle, r.archive_bytes, &r));
            }
        }
        engine.terminate_nym(id)?;
        id = engine.load_nym(object, password, &mut *backend, None)?;
    }
    Ok(SizeSeries { mode, points, final_nym: id })
}
