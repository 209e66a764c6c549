//! Fair-share download simulation over a shared uplink.

use serde::{Deserialize, Serialize};

/// 10 Mbit/s expressed per simulated millisecond.
pub const TEN_MBIT_BYTES_PER_MS: u64 = 1250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkModel {
    pub bytes_per_ms: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { bytes_per_ms: TEN_MBIT_BYTES_PER_MS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub flow: usize,
    pub payload_bytes: u64,
    pub wire_bytes: u64,
    /// Completion time in milliseconds, fractional within the last tick.
    pub completion_ms: f64,
    pub throughput_bytes_per_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTable {
    pub flows: Vec<FlowResult>,
    /// Bytes delivered in each tick, for capacity audits.
    pub per_tick: Vec<u64>,
}

/// Runs parallel flows under processor sharing: every active flow gets
/// an equal share of the link until one completes. Returns completion
/// times and the bytes delivered in each 1 ms tick.
pub fn simulate_flows(wire_sizes: &[u64], link: &LinkModel) -> (Vec<f64>, Vec<u64>) {
    let cap = link.bytes_per_ms.max(1) as f64;
    let mut remaining: Vec<f64> = wire_sizes.iter().map(|&w| w as f64).collect();
    let mut done = vec![0.0; remaining.len()];
    let mut now = 0.0f64;
    loop {
        let active: Vec<usize> = (0..remaining.len()).filter(|&i| remaining[i] > 0.0).collect();
        if active.is_empty() {
            break;
        }
        let rate = cap / active.len() as f64;
        let step = active.iter().map(|&i| remaining[i]).fold(f64::INFINITY, f64::min) / rate;
        now += step;
        for &i in &active {
            remaining[i] -= rate * step;
            if remaining[i] <= 1e-9 * cap {
                remaining[i] = 0.0;
                done[i] = now;
            }
        }
    }
    // The link is saturated from 0 until the last completion.
    let total: u64 = wire_sizes.iter().sum();
    let ticks = now.ceil() as u64;
    let mut per_tick = Vec::with_capacity(ticks as usize);
    let mut left = total;
    for _ in 0..ticks {
        let b = left.min(link.bytes_per_ms.max(1));
        per_tick.push(b);
        left -= b;
    }
    (done, per_tick)
}

/// `n` parallel downloads of `payload` bytes, each inflated to
/// `wire_bytes(payload)` by its transport.
pub fn bandwidth_trial(payload: u64, n: usize, wire_bytes: impl Fn(u64) -> u64, link: &LinkModel) -> BandwidthTable {
    let wire = wire_bytes(payload);
    let (done, per_tick) = simulate_flows(&vec![wire; n], link);
    let flows = done
        .into_iter()
        .enumerate()
        .map(|(flow, completion_ms)| FlowResult {
            flow,
            payload_bytes: payload,
            wire_bytes: wire,
            completion_ms,
            throughput_bytes_per_ms: payload as f64 / completion_ms,
        })
        .collect();
    BandwidthTable { flows, per_tick }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_flow_exact() {
        let t = bandwidth_trial(125_000, 1, |p| p, &LinkModel::default());
        assert_eq!(t.flows[0].completion_ms, 100.0);
        let t = bandwidth_trial(1_000, 1, |p| p, &LinkModel::default());
        assert_eq!(t.flows[0].completion_ms, 0.8);
    }

    #[test]
    fn capacity_conserved_and_fair() {
        let link = LinkModel { bytes_per_ms: 1000 };
        let (done, ticks) = simulate_flows(&[500, 5_000, 5_000], &link);
        assert!(ticks.iter().all(|&b| b <= 1000));
        assert_eq!(ticks.iter().sum::<u64>(), 10_500);
        assert!(done[0] < done[1]);
        assert_eq!(done[1], done[2]);
        assert_eq!(done[2], 10.5);
    }
}
