//! Python bindings: run the built-in models, step a simulation and call the
//! standalone building blocks (Morton codes, prefix sums, neighbor search).

use abm_core::commit::parallel_exclusive_prefix_sum;
use abm_core::env::AnyEnvironment;
use abm_core::exec::WorkerPool;
use abm_core::models::{self, ModelKind};
use abm_core::morton::{self, MortonCode};
use abm_core::{AllocatorKind, BoxLengthPolicy, EnvironmentKind, SimulationParams, Vec3};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn build_params(
    threads: Option<usize>,
    seed: u64,
    sorting_frequency: u64,
    static_detection: bool,
    environment: &str,
    allocator: &str,
) -> PyResult<SimulationParams> {
    let p = SimulationParams {
        threads,
        domains: Some(1),
        seed,
        sorting_frequency,
        detect_static_agents: static_detection,
        environment: environment.parse::<EnvironmentKind>().map_err(value_err)?,
        allocator: allocator.parse::<AllocatorKind>().map_err(value_err)?,
        ..Default::default()
    };
    p.validate().map_err(value_err)?;
    Ok(p)
}

/// A simulation initialized from one of the built-in models.
#[pyclass(unsendable)]
struct Simulation {
    inner: abm_core::Simulation,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (model, agents, threads=None, seed=4357, sorting_frequency=0, static_detection=false, environment="uniform_grid", allocator="pool"))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &str,
        agents: usize,
        threads: Option<usize>,
        seed: u64,
        sorting_frequency: u64,
        static_detection: bool,
        environment: &str,
        allocator: &str,
    ) -> PyResult<Self> {
        let kind: ModelKind = model.parse().map_err(value_err)?;
        let mut p = build_params(threads, seed, sorting_frequency, static_detection, environment, allocator)?;
        models::configure(kind, &mut p);
        let mut inner = abm_core::Simulation::new(p).map_err(value_err)?;
        models::init(kind, &mut inner, agents).map_err(runtime_err)?;
        Ok(Simulation { inner })
    }

    fn step(&mut self) -> PyResult<()> {
        self.inner.step().map_err(runtime_err)
    }

    fn simulate(&mut self, iterations: u64) -> PyResult<()> {
        self.inner.simulate(iterations).map_err(runtime_err)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration()
    }

    fn __len__(&self) -> usize {
        self.inner.rm().len()
    }

    /// `(uid, x, y, z, diameter, kind)` for every agent, sorted by uid.
    fn agents(&self) -> Vec<(u64, f64, f64, f64, f64, u32)> {
        let mut v: Vec<_> = self
            .inner
            .rm()
            .agents()
            .map(|a| {
                let p = a.position();
                (a.uid().0, p.x(), p.y(), p.z(), a.diameter(), a.kind())
            })
            .collect();
        v.sort_by_key(|a| a.0);
        v
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.report())
    }
}

/// Runs a built-in model to completion and returns its report as a dict.
#[pyfunction]
#[pyo3(signature = (model, agents, iterations, threads=None, seed=4357, sorting_frequency=0, static_detection=false, environment="uniform_grid", allocator="pool"))]
#[allow(clippy::too_many_arguments)]
fn run_model<'py>(
    py: Python<'py>,
    model: &str,
    agents: usize,
    iterations: u64,
    threads: Option<usize>,
    seed: u64,
    sorting_frequency: u64,
    static_detection: bool,
    environment: &str,
    allocator: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cell = abm_core::bench::BenchCell {
        model: model.parse().map_err(value_err)?,
        agents,
        iterations,
        params: build_params(threads, seed, sorting_frequency, static_detection, environment, allocator)?,
    };
    let report = abm_core::bench::run_cell(&cell).map_err(runtime_err)?;
    to_python(py, &report)
}

#[pyfunction]
fn morton_encode(x: u64, y: u64, z: u64) -> PyResult<u64> {
    morton::encode_3d([x, y, z]).map(|c| c.0).map_err(value_err)
}

#[pyfunction]
fn morton_decode(code: u64) -> (u64, u64, u64) {
    let [x, y, z] = morton::decode_3d(MortonCode(code));
    (x, y, z)
}

fn check_dims(dims: &[u64]) -> PyResult<()> {
    if dims.len() != 2 && dims.len() != 3 {
        return Err(value_err("dims must have 2 or 3 entries"));
    }
    Ok(())
}

/// Offsets table entries `(rank, morton_code)` for a 2D or 3D grid.
#[pyfunction]
fn offsets_table(dims: Vec<u64>) -> PyResult<Vec<(u64, u64)>> {
    check_dims(&dims)?;
    Ok(morton::build_offsets_table(&dims).entries().to_vec())
}

/// Morton codes of every box of the grid, in curve order.
#[pyfunction]
fn morton_order(dims: Vec<u64>) -> PyResult<Vec<u64>> {
    check_dims(&dims)?;
    Ok(morton::build_offsets_table(&dims).sweep_from(0).map(|c| c.0).collect())
}

/// Exclusive prefix sum and total.
#[pyfunction]
#[pyo3(signature = (values, threads=1))]
fn exclusive_prefix_sum(py: Python<'_>, values: Vec<usize>, threads: usize) -> PyResult<(Vec<usize>, usize)> {
    let pool = WorkerPool::with_threads(threads.max(1)).map_err(runtime_err)?;
    let sums = py.detach(|| parallel_exclusive_prefix_sum(&pool, &values));
    let total = sums.last().copied().unwrap_or(0) + values.last().copied().unwrap_or(0);
    Ok((sums, total))
}

/// Index pairs `(i, j)`, `i < j`, whose centers are at most `radius` apart.
#[pyfunction]
#[pyo3(signature = (points, diameters, radius, environment="uniform_grid"))]
fn neighbor_pairs(
    points: Vec<(f64, f64, f64)>,
    diameters: Vec<f64>,
    radius: f64,
    environment: &str,
) -> PyResult<Vec<(usize, usize)>> {
    if points.len() != diameters.len() {
        return Err(value_err("points and diameters differ in length"));
    }
    let kind: EnvironmentKind = environment.parse().map_err(value_err)?;
    let pts: Vec<Vec3> = points.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
    let pool = WorkerPool::with_threads(1).map_err(runtime_err)?;
    let mut env = AnyEnvironment::new(kind, BoxLengthPolicy::Fixed(radius.max(f64::MIN_POSITIVE)), None);
    env.as_dyn_mut().update_from_points(&pts, &diameters, &pool).map_err(value_err)?;
    let mut pairs = Vec::new();
    for i in 0..pts.len() {
        env.for_each_neighbor(i, radius * radius, |j, _| {
            if i < j {
                pairs.push((i, j));
            }
        })
        .map_err(value_err)?;
    }
    pairs.sort_unstable();
    Ok(pairs)
}

#[pymodule]
fn abm_engine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(run_model, m)?)?;
    m.add_function(wrap_pyfunction!(morton_encode, m)?)?;
    m.add_function(wrap_pyfunction!(morton_decode, m)?)?;
    m.add_function(wrap_pyfunction!(offsets_table, m)?)?;
    m.add_function(wrap_pyfunction!(morton_order, m)?)?;
    m.add_function(wrap_pyfunction!(exclusive_prefix_sum, m)?)?;
    m.add_function(wrap_pyfunction!(neighbor_pairs, m)?)?;
    Ok(())
}
