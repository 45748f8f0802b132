//! Benchmark configuration, execution and CSV/JSON output.

mod config;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::alloc::AllocatorKind;
use crate::env::EnvironmentKind;
use crate::models::{self, ModelKind};
use crate::params::SimulationParams;
use crate::report::SimulationReport;
use crate::simulation::{SimError, Simulation};

pub use config::{parse_bool, parse_list, BenchConfig, ConfigError};

/// One benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub model: ModelKind,
    pub agents: usize,
    pub iterations: u64,
    pub params: SimulationParams,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub agents: usize,
    pub iterations: u64,
    pub threads: usize,
    pub domain_count: usize,
    pub env: String,
    pub allocator: String,
    pub sorting_freq: u64,
    pub static_detect: bool,
    pub wall_ms_total: f64,
    pub agent_ops_ms: f64,
    pub environment_ms: f64,
    pub sorting_ms: f64,
    pub commit_ms: f64,
    pub standalone_ms: f64,
    pub setup_ms: f64,
    pub teardown_ms: f64,
    pub peak_rss_bytes: u64,
    pub force_evals: u64,
    pub repetition: usize,
    pub final_agents: usize,
}

impl BenchRow {
    pub fn new(cell: &BenchCell, report: &SimulationReport, repetition: usize) -> Self {
        let t = &report.times;
        BenchRow {
            model: cell.model.name().into(),
            agents: cell.agents,
            iterations: cell.iterations,
            threads: report.threads,
            domain_count: report.domains,
            env: cell.params.environment.name().into(),
            allocator: cell.params.allocator.name().into(),
            sorting_freq: cell.params.sorting_frequency,
            static_detect: cell.params.detect_static_agents,
            wall_ms_total: report.wall_ms_total,
            agent_ops_ms: t.agent_ops,
            environment_ms: t.environment,
            sorting_ms: t.sorting,
            commit_ms: t.commit,
            standalone_ms: t.standalone,
            setup_ms: t.setup,
            teardown_ms: t.teardown,
            peak_rss_bytes: report.peak_rss_bytes,
            force_evals: report.counters.force_evals,
            repetition,
            final_agents: report.final_agents,
        }
    }

    /// Sum of the per-category times.
    pub fn category_sum_ms(&self) -> f64 {
        self.agent_ops_ms
            + self.environment_ms
            + self.sorting_ms
            + self.commit_ms
            + self.standalone_ms
            + self.setup_ms
            + self.teardown_ms
    }
}

/// Runs one configuration from model initialization to teardown.
pub fn run_cell(cell: &BenchCell) -> Result<SimulationReport, SimError> {
    let mut params = cell.params.clone();
    models::configure(cell.model, &mut params);
    let mut sim = Simulation::new(params)?;
    models::init(cell.model, &mut sim, cell.agents)?;
    sim.simulate(cell.iterations)?;
    Ok(sim.finish())
}

/// Outcome of one cell and repetition.
pub type CellResult = (BenchCell, usize, Result<SimulationReport, SimError>);

/// Runs the cross product of the sweep axes, `repetitions` times each, and
/// hands every result to `on_result` as soon as it is available.
pub fn run_bench(config: &BenchConfig, mut on_result: impl FnMut(CellResult)) {
    for cell in config.cells() {
        for rep in 0..config.repetitions {
            let r = run_cell(&cell);
            on_result((cell.clone(), rep, r));
        }
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Preset sweep axes for the named sweeps.
pub fn preset(name: &str, config: &mut BenchConfig, explicit: &config::Explicit) {
    match name {
        "sweep-sorting" => {
            if !explicit.sorting_frequency {
                config.sorting_frequencies = vec![0, 1, 2, 5, 10, 20];
            }
            if !explicit.model {
                config.model = ModelKind::Clustering;
            }
        }
        "sweep-env" => {
            if !explicit.env {
                config.environments = vec![EnvironmentKind::UniformGrid, EnvironmentKind::KdTree];
            }
        }
        "sweep-alloc" => {
            if !explicit.allocator {
                config.allocators = vec![AllocatorKind::Pool, AllocatorKind::System];
            }
            if !explicit.model {
                config.model = ModelKind::Proliferation;
            }
        }
        "complexity" => {
            if !explicit.agents {
                config.agents = vec![1_000, 10_000, 100_000, 1_000_000];
            }
            if !explicit.model {
                config.model = ModelKind::Clustering;
            }
        }
        _ => {}
    }
}
