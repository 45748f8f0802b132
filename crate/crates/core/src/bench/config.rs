//! `key = value` benchmark configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BenchCell;
use crate::alloc::AllocatorKind;
use crate::env::EnvironmentKind;
use crate::models::ModelKind;
use crate::params::{BoxLengthPolicy, SimulationParams};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

/// Which settings were given explicitly, so presets do not override them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Explicit {
    pub model: bool,
    pub agents: bool,
    pub env: bool,
    pub allocator: bool,
    pub sorting_frequency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub model: ModelKind,
    pub agents: Vec<usize>,
    pub iterations: u64,
    /// Empty means the engine default.
    pub threads: Vec<usize>,
    pub environments: Vec<EnvironmentKind>,
    pub allocators: Vec<AllocatorKind>,
    pub sorting_frequencies: Vec<u64>,
    pub static_detection: Vec<bool>,
    pub repetitions: usize,
    pub out: Option<PathBuf>,
    /// Everything else, including seed and domain count.
    pub base: SimulationParams,
    #[serde(skip)]
    pub explicit: Explicit,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let base = SimulationParams::default();
        BenchConfig {
            model: ModelKind::Clustering,
            agents: vec![1000],
            iterations: 10,
            threads: Vec::new(),
            environments: vec![base.environment],
            allocators: vec![base.allocator],
            sorting_frequencies: vec![base.sorting_frequency],
            static_detection: vec![base.detect_static_agents],
            repetitions: 1,
            out: None,
            base,
            explicit: Explicit::default(),
        }
    }
}

pub fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

/// Comma-separated, non-empty list.
pub fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let v = s
        .split(',')
        .map(|x| item(x.trim()))
        .collect::<Result<Vec<T>, String>>()?;
    if v.is_empty() {
        return Err("empty list".into());
    }
    Ok(v)
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| format!("invalid number '{s}': {e}"))
}

fn parsed<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.trim().parse()
}

impl BenchConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "model" => {
                self.model = parsed(v)?;
                self.explicit.model = true;
            }
            "agents" => {
                self.agents = parse_list(v, num)?;
                self.explicit.agents = true;
            }
            "iterations" => self.iterations = num(v)?,
            "threads" => self.threads = parse_list(v, num)?,
            "domains" => self.base.domains = Some(num(v)?),
            "env" | "environment" => {
                self.environments = parse_list(v, parsed)?;
                self.explicit.env = true;
            }
            "allocator" => {
                self.allocators = parse_list(v, parsed)?;
                self.explicit.allocator = true;
            }
            "sorting_frequency" => {
                self.sorting_frequencies = parse_list(v, num)?;
                self.explicit.sorting_frequency = true;
            }
            "static_detection" | "detect_static_agents" => self.static_detection = parse_list(v, parse_bool)?,
            "seed" => self.base.seed = num(v)?,
            "reps" | "repetitions" => self.repetitions = num(v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "box_length" => {
                self.base.box_length = if v == "auto" {
                    BoxLengthPolicy::Auto
                } else {
                    BoxLengthPolicy::Fixed(num(v)?)
                }
            }
            "block_size" => self.base.block_size = num(v)?,
            "mem_mgr_growth_rate" => self.base.mem_mgr_growth_rate = num(v)?,
            "mem_mgr_aligned_pages_shift" => self.base.mem_mgr_aligned_pages_shift = num(v)?,
            "mem_mgr_migration_threshold_bytes" => self.base.mem_mgr_migration_threshold_bytes = num(v)?,
            "use_extra_memory_during_sort" => self.base.use_extra_memory_during_sort = parse_bool(v)?,
            "simulation_time_step" => self.base.simulation_time_step = num(v)?,
            "repulsion_coefficient" => self.base.force.repulsion_coefficient = num(v)?,
            "force_threshold" => self.base.force.force_threshold = num(v)?,
            "max_displacement" => self.base.force.max_displacement = num(v)?,
            "time_step" => self.base.force.time_step = num(v)?,
            "mechanics" => self.base.mechanics = parse_bool(v)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Applies a whole `key = value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line: i + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
            self.set(k, v).map_err(err)?;
        }
        self.validate().map_err(|message| ConfigError { line: 0, message })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.repetitions == 0 {
            return Err("repetitions must be at least 1".into());
        }
        if self.agents.is_empty() || self.environments.is_empty() || self.allocators.is_empty() {
            return Err("sweep axes must not be empty".into());
        }
        if self.threads.contains(&0) {
            return Err("threads must be at least 1".into());
        }
        for cell in self.cells() {
            cell.params.validate()?;
        }
        Ok(())
    }

    /// Cross product of the sweep axes.
    pub fn cells(&self) -> Vec<BenchCell> {
        let threads: Vec<Option<usize>> = if self.threads.is_empty() {
            vec![None]
        } else {
            self.threads.iter().copied().map(Some).collect()
        };
        let mut cells = Vec::new();
        for &agents in &self.agents {
            for &t in &threads {
                for &env in &self.environments {
                    for &alloc in &self.allocators {
                        for &sf in &self.sorting_frequencies {
                            for &sd in &self.static_detection {
                                let params = SimulationParams {
                                    threads: t,
                                    environment: env,
                                    allocator: alloc,
                                    sorting_frequency: sf,
                                    detect_static_agents: sd,
                                    ..self.base.clone()
                                };
                                cells.push(BenchCell {
                                    model: self.model,
                                    agents,
                                    iterations: self.iterations,
                                    params,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}
