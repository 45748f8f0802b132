//! Simulation parameters.

use serde::{Deserialize, Serialize};

use crate::alloc::{AllocatorKind, PoolConfig};
use crate::env::EnvironmentKind;
use crate::exec::DEFAULT_BLOCK_SIZE;
use crate::geometry::Vec3;
use crate::mechanics::ForceParams;

/// How the uniform grid picks its box edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxLengthPolicy {
    /// Largest agent diameter, recomputed at every rebuild.
    Auto,
    /// The given length, raised to the largest diameter when smaller.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub box_length: BoxLengthPolicy,
    /// Sort and balance agents every this many iterations; 0 disables.
    pub sorting_frequency: u64,
    pub detect_static_agents: bool,
    pub environment: EnvironmentKind,
    /// Worker threads; `None` uses the environment override or all CPUs.
    pub threads: Option<usize>,
    /// Memory domains; `None` uses the environment override or the OS.
    pub domains: Option<usize>,
    pub allocator: AllocatorKind,
    pub mem_mgr_growth_rate: f64,
    pub mem_mgr_aligned_pages_shift: u32,
    pub mem_mgr_migration_threshold_bytes: usize,
    /// Keep the old agent copies alive until sorting finishes.
    pub use_extra_memory_during_sort: bool,
    pub simulation_time_step: f64,
    pub block_size: usize,
    pub seed: u64,
    pub force: ForceParams,
    /// Run the built-in mechanical-forces operation.
    pub mechanics: bool,
    /// Region the grid always covers, in addition to the agents' bounds.
    pub space_bounds: Option<(Vec3, Vec3)>,
    /// Keep a log of block claims from the agent loop.
    pub record_claims: bool,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            box_length: BoxLengthPolicy::Auto,
            sorting_frequency: 0,
            detect_static_agents: false,
            environment: EnvironmentKind::UniformGrid,
            threads: None,
            domains: None,
            allocator: AllocatorKind::Pool,
            mem_mgr_growth_rate: 2.0,
            mem_mgr_aligned_pages_shift: 5,
            mem_mgr_migration_threshold_bytes: 1 << 20,
            use_extra_memory_during_sort: false,
            simulation_time_step: 0.01,
            block_size: DEFAULT_BLOCK_SIZE,
            seed: 4357,
            force: ForceParams::default(),
            mechanics: true,
            space_bounds: None,
            record_claims: false,
        }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<(), String> {
        if let BoxLengthPolicy::Fixed(v) = self.box_length {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("box_length must be positive, got {v}"));
            }
        }
        if self.threads == Some(0) {
            return Err("threads must be at least 1".into());
        }
        if self.domains == Some(0) {
            return Err("domains must be at least 1".into());
        }
        if !(self.mem_mgr_growth_rate > 1.0 && self.mem_mgr_growth_rate.is_finite()) {
            return Err(format!(
                "mem_mgr_growth_rate must be > 1, got {}",
                self.mem_mgr_growth_rate
            ));
        }
        if self.mem_mgr_aligned_pages_shift > 20 {
            return Err("mem_mgr_aligned_pages_shift must be at most 20".into());
        }
        if !(self.simulation_time_step > 0.0 && self.simulation_time_step.is_finite()) {
            return Err("simulation_time_step must be positive".into());
        }
        if self.block_size == 0 {
            return Err("block_size must be at least 1".into());
        }
        if let Some((lo, hi)) = self.space_bounds {
            if !(lo.is_finite() && hi.is_finite()) || (0..3).any(|a| lo[a] > hi[a]) {
                return Err("space_bounds must be finite with min <= max".into());
            }
        }
        self.force.validate()
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            growth_rate: self.mem_mgr_growth_rate,
            aligned_pages_shift: self.mem_mgr_aligned_pages_shift,
            migration_threshold_bytes: self.mem_mgr_migration_threshold_bytes,
            ..PoolConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimulationParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            SimulationParams {
                box_length: BoxLengthPolicy::Fixed(0.0),
                ..Default::default()
            },
            SimulationParams {
                threads: Some(0),
                ..Default::default()
            },
            SimulationParams {
                mem_mgr_growth_rate: 1.0,
                ..Default::default()
            },
            SimulationParams {
                block_size: 0,
                ..Default::default()
            },
            SimulationParams {
                force: ForceParams {
                    repulsion_coefficient: -1.0,
                    ..Default::default()
                },
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }
}
