use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::node::{NodeId, NodeKind, Proto};
use super::topology::{Outcome, Topology};

/// Destination port used by probe frames. Not on any egress whitelist.
pub const PROBE_PORT: u16 = 9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attempt {
    pub src: NodeId,
    pub dst: NodeId,
    pub proto: Proto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub proto: Proto,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default)]
pub struct LeakReport {
    pub attempted: Vec<Attempt>,
    pub delivered: Vec<Attempt>,
    /// Deliveries the reachability matrix does not permit.
    pub violations: Vec<Attempt>,
}

impl LeakReport {
    /// Nodes that appear as a source in the sweep.
    pub fn sources(&self) -> std::collections::BTreeSet<&NodeId> {
        self.attempted.iter().map(|a| &a.src).collect()
    }

    /// One JSON object per attempted frame: `{src, dst, proto, outcome}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for a in &self.attempted {
            let outcome = if self.delivered.binary_search(a).is_ok() { Outcome::Delivered } else { Outcome::Dropped };
            let rec = ProbeRecord { src: a.src.clone(), dst: a.dst.clone(), proto: a.proto, outcome };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// The permitted reachability matrix for probe traffic, from node
/// identities alone: a nym's AnonVM and CommVM talk to each other, and a
/// CommVM reaches Internet hosts. Nothing else is deliverable.
pub fn expected_reachable(src: &NodeId, dst: &NodeId, _proto: Proto) -> bool {
    use NodeKind::*;
    match (src.kind(), dst.kind()) {
        (AnonVm, CommVm) | (CommVm, AnonVm) => src.nym() == dst.nym(),
        (CommVm, InternetHost) => true,
        _ => false,
    }
}

/// Attempts every ordered node pair over both protocols.
pub fn probe_isolation(topology: &Topology) -> LeakReport {
    let nodes: Vec<&NodeId> = topology.nodes().collect();
    let mut report = LeakReport::default();
    for src in &nodes {
        for dst in &nodes {
            if src == dst {
                continue;
            }
            for proto in Proto::ALL {
                let attempt = Attempt { src: (*src).clone(), dst: (*dst).clone(), proto };
                let frame = topology
                    .frame(src, dst, proto, PROBE_PORT, b"probe".to_vec())
                    .expect("source exists");
                let outcome = topology.send(&frame).expect("source exists");
                if outcome == Outcome::Delivered {
                    if !expected_reachable(src, dst, proto) {
                        report.violations.push(attempt.clone());
                    }
                    report.delivered.push(attempt.clone());
                }
                report.attempted.push(attempt);
            }
        }
    }
    report.attempted.sort();
    report.delivered.sort();
    report.violations.sort();
    report
}
