//! Synthetic browsing sessions that grow a nym's writable state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Engine, EngineError, EngineEvent, VmRole};
use crate::ids::NymId;
use crate::overlay::OverlayError;
use crate::transports::TransportError;

pub const CACHE_DIR: &str = "/home/user/.cache/browser";
pub const TRANSPORT_STATE_PATH: &str = "/var/lib/transport/state";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub pages: u32,
    /// Mean bytes cached per page.
    pub page_bytes: u64,
    pub seed: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload { pages: 8, page_bytes: 16 * 1024, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub pages: u32,
    pub payload_bytes: u64,
    pub wire_bytes: u64,
    pub cached_bytes: u64,
}

impl Engine {
    fn web_hosts(&self) -> Vec<String> {
        self.config
            .internet_hosts
            .keys()
            .filter(|h| h.as_str() != crate::transports::RESOLVER_HOST && !h.starts_with("cloud"))
            .cloned()
            .collect()
    }

    /// Visits `w.pages` pages through the nym's transport, caching each in
    /// the AnonVM. Every page also re-reads one base block; a failed block
    /// check terminates the nym.
    pub fn run_workload(&mut self, id: NymId, w: &Workload) -> Result<WorkloadStats, EngineError> {
        let hosts = self.web_hosts();
        let mut rng = ChaCha8Rng::seed_from_u64(w.seed ^ (u64::from(id.0) << 32) ^ self.clock);
        let mut stats = WorkloadStats::default();
        for page in 0..w.pages {
            let chunk = page as usize % self.base.chunk_count().max(1);
            if let Err(OverlayError::TamperDetected { chunk }) = self.base.read_chunk(chunk) {
                self.emit(EngineEvent::TamperDetected { chunk });
                self.terminate_nym(id)?;
                return Err(EngineError::BaseImageTampered { chunk });
            }
            if hosts.is_empty() {
                return Err(TransportError::Unreachable("web".into()).into());
            }
            let host = hosts[rng.gen_range(0..hosts.len())].clone();
            let size = rng.gen_range(w.page_bytes / 2..=w.page_bytes + w.page_bytes / 2).max(1);
            let mut stream = self.connect(id, &host, 443)?;
            stream.transmit(size);
            stats.payload_bytes += stream.payload_bytes();
            stats.wire_bytes += stream.wire_bytes();

            let mut content = vec![0u8; size as usize];
            rng.fill_bytes(&mut content);
            let path = format!("{CACHE_DIR}/{host}/{:08x}-{page}", rng.next_u32());
            self.write_file(id, VmRole::Anon, &path, &content)?;
            stats.cached_bytes += size;

            let line = format!("visit {host} {}\n", self.clock);
            let mut log = self.read_file(id, VmRole::Comm, TRANSPORT_STATE_PATH).unwrap_or_default();
            log.extend_from_slice(line.as_bytes());
            self.write_file(id, VmRole::Comm, TRANSPORT_STATE_PATH, &log)?;
            self.clock += self.config.latency.page_load_ms;
            stats.pages += 1;
        }
        Ok(stats)
    }
}
