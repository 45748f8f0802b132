//! Run statistics and memory sampling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alloc::PoolStats;

/// Wall time per phase category, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryTimes {
    pub agent_ops: f64,
    pub environment: f64,
    pub sorting: f64,
    pub commit: f64,
    pub standalone: f64,
    pub setup: f64,
    pub teardown: f64,
}

impl CategoryTimes {
    pub fn total(&self) -> f64 {
        self.agent_ops + self.environment + self.sorting + self.commit + self.standalone + self.setup + self.teardown
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Pairwise force evaluations performed by the mechanics.
    pub force_evals: u64,
    /// Agents whose force computation was skipped as static.
    pub static_skips: u64,
    pub agents_added: u64,
    pub agents_removed: u64,
    pub own_blocks: u64,
    pub same_domain_steals: u64,
    pub cross_domain_steals: u64,
    pub sorts: u64,
    /// Agents that changed memory domain while sorting.
    pub sort_migrations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub iterations: u64,
    pub final_agents: usize,
    pub threads: usize,
    pub domains: usize,
    pub wall_ms_total: f64,
    pub times: CategoryTimes,
    /// Wall time of each standalone operation.
    pub per_operation_ms: BTreeMap<String, f64>,
    pub per_iteration_ms: Vec<f64>,
    pub per_iteration_force_evals: Vec<u64>,
    pub per_iteration_agents: Vec<usize>,
    pub counters: Counters,
    /// Resident set size when the simulation was created.
    pub baseline_rss_bytes: u64,
    /// Largest resident set size sampled at iteration boundaries.
    pub peak_rss_bytes: u64,
    pub pool: Option<PoolStats>,
}

impl SimulationReport {
    /// Peak resident memory above the baseline.
    pub fn peak_rss_delta_bytes(&self) -> u64 {
        self.peak_rss_bytes.saturating_sub(self.baseline_rss_bytes)
    }
}

/// Current resident set size of this process, if the OS reports it.
pub fn current_rss_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * crate::alloc::system_page_size() as u64)
}

/// Peak resident set size of this process over its lifetime.
pub fn lifetime_peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rss_is_reported_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(current_rss_bytes().unwrap() > 0);
            assert!(lifetime_peak_rss_bytes().unwrap() >= current_rss_bytes().unwrap() / 2);
        }
    }
}
