//! Evaluation harness: memory accounting, bandwidth, snapshot sizes and
//! startup phases.

mod bandwidth;
mod export;
mod ksm;
mod phases;
mod ram;
mod series;

pub use bandwidth::{bandwidth_trial, simulate_flows, BandwidthTable, FlowResult, LinkModel, TEN_MBIT_BYTES_PER_MS};
pub use export::{write_csv, write_jsonl};
pub use ksm::{ksm_account, DuplicationModel, KsmReport, PagePool, PAGE_SIZE};
pub use phases::{phase_report, Phase, PhaseSpan, PhaseSummary, PhaseTrace};
pub use ram::per_nym_ram;
pub use series::{size_series, SizePoint, SizeSeries};

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::NymId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("need at least two distinct points")]
    InsufficientData,
    #[error("export failed: {0}")]
    Export(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum MetricSample {
    ArchiveSize {
        nym: NymId,
        object: String,
        version: u64,
        archive_bytes: u64,
        anon_bytes: u64,
        comm_bytes: u64,
    },
    Phases(PhaseTrace),
    RepairDelta {
        os: String,
        bytes: u64,
    },
    Ksm(KsmReport),
}

/// Append-only, thread-safe sample log.
#[derive(Debug, Default)]
pub struct MetricsLog {
    samples: Mutex<Vec<MetricSample>>,
}

impl MetricsLog {
    pub fn record(&self, s: MetricSample) {
        self.samples.lock().unwrap_or_else(|e| e.into_inner()).push(s);
    }

    pub fn snapshot(&self) -> Vec<MetricSample> {
        self.samples.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.samples.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phase_traces(&self) -> Vec<PhaseTrace> {
        self.snapshot()
            .into_iter()
            .filter_map(|s| match s {
                MetricSample::Phases(t) => Some(t),
                _ => None,
            })
            .collect()
    }
}
