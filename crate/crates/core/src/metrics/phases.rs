//! Startup-phase traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{NymId, NymMode, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    EphemeralLoader,
    VmBoot,
    TransportStartup,
    PageLoad,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub start: SimTime,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub nym: NymId,
    pub usage: NymMode,
    /// Whether the nym was restored from storage.
    pub restored: bool,
    pub spans: Vec<PhaseSpan>,
}

impl PhaseTrace {
    pub fn new(nym: NymId, usage: NymMode, restored: bool) -> Self {
        PhaseTrace { nym, usage, restored, spans: Vec::new() }
    }

    /// Appends a phase starting where the previous one ended.
    pub fn push(&mut self, phase: Phase, duration_ms: u64) {
        let start = self.spans.last().map_or(0, |s| s.start + s.duration_ms);
        self.spans.push(PhaseSpan { phase, start, duration_ms });
    }

    pub fn duration(&self, phase: Phase) -> Option<u64> {
        self.spans.iter().find(|s| s.phase == phase).map(|s| s.duration_ms)
    }

    pub fn total_ms(&self) -> u64 {
        self.spans.iter().map(|s| s.duration_ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub usage: NymMode,
    pub restored: bool,
    pub phase: Phase,
    pub runs: usize,
    pub mean_ms: f64,
}

/// Mean duration per (usage, restored, phase) over the given traces.
pub fn phase_report(traces: &[PhaseTrace]) -> Vec<PhaseSummary> {
    let mut acc: BTreeMap<(u8, bool, Phase), (NymMode, u64, usize)> = BTreeMap::new();
    for t in traces {
        let key_mode = match t.usage {
            NymMode::Ephemeral => 0,
            NymMode::Preconfigured => 1,
            NymMode::Persistent => 2,
        };
        for s in &t.spans {
            let e = acc.entry((key_mode, t.restored, s.phase)).or_insert((t.usage, 0, 0));
            e.1 += s.duration_ms;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|((_, restored, phase), (usage, sum, runs))| PhaseSummary {
            usage,
            restored,
            phase,
            runs,
            mean_ms: sum as f64 / runs as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_runs() {
        let traces: Vec<PhaseTrace> = (0..5u64)
            .map(|i| {
                let mut t = PhaseTrace::new(NymId(i as u32), NymMode::Ephemeral, false);
                t.push(Phase::VmBoot, 100 + i);
                t.push(Phase::TransportStartup, 10);
                t
            })
            .collect();
        assert_eq!(traces[0].spans[1].start, 100);
        let r = phase_report(&traces);
        let boot = r.iter().find(|s| s.phase == Phase::VmBoot).unwrap();
        assert_eq!(boot.runs, 5);
        assert_eq!(boot.mean_ms, 102.0);
        assert!(r.iter().all(|s| s.phase != Phase::EphemeralLoader));
    }
}
