//! Fixed-radius neighbor search.
//!
//! Every environment works on an [`AgentSnapshot`] taken at update time, so
//! queries during the agent loop see iteration-start positions no matter
//! what other workers do to their agents.

mod brute_force;
mod grid;
mod kdtree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentUid;
use crate::exec::WorkerPool;
use crate::geometry::Vec3;
use crate::params::BoxLengthPolicy;
use crate::resource_manager::{AgentPtr, ResourceManager};
use crate::util::{chunk_range, DisjointSlice};

pub use brute_force::BruteForceEnvironment;
pub use grid::{UniformGrid, UniformGridEnvironment};
pub use kdtree::KdTreeEnvironment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    UniformGrid,
    BruteForce,
    KdTree,
}

impl EnvironmentKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvironmentKind::UniformGrid => "uniform_grid",
            EnvironmentKind::BruteForce => "brute_force",
            EnvironmentKind::KdTree => "kd_tree",
        }
    }
}

impl std::str::FromStr for EnvironmentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform_grid" | "grid" => Ok(EnvironmentKind::UniformGrid),
            "brute_force" | "bruteforce" => Ok(EnvironmentKind::BruteForce),
            "kd_tree" | "kdtree" => Ok(EnvironmentKind::KdTree),
            _ => Err(format!(
                "unknown environment '{s}' (expected uniform_grid, brute_force or kd_tree)"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("squared radius {requested} exceeds the supported maximum {max}")]
    RadiusTooLarge { requested: f64, max: f64 },
    #[error("query index {index} out of range for {len} agents")]
    QueryOutOfRange { index: usize, len: usize },
    #[error("agent {0} has a non-finite position")]
    NonFinitePosition(AgentUid),
    #[error("grid would need {0} boxes")]
    TooManyBoxes(u128),
    #[error("too many agents for the neighbor index: {0}")]
    TooManyAgents(usize),
}

/// Iteration-start copy of the data neighbor queries need, indexed by a
/// flat index: the agent's domain offset plus its index in the domain.
#[derive(Debug, Default)]
pub struct AgentSnapshot {
    pub(crate) positions: Vec<Vec3>,
    pub(crate) diameters: Vec<f64>,
    pub(crate) uids: Vec<AgentUid>,
    pub(crate) kinds: Vec<u32>,
    pub(crate) ptrs: Vec<AgentPtr>,
    pub(crate) domain_offsets: Vec<usize>,
    max_diameter: f64,
    min: Vec3,
    max: Vec3,
    epoch: u64,
}

#[derive(Clone, Copy)]
struct Summary {
    min: Vec3,
    max: Vec3,
    max_diameter: f64,
    bad: Option<AgentUid>,
}

impl Summary {
    fn empty() -> Self {
        Summary {
            min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            max_diameter: 0.0,
            bad: None,
        }
    }

    #[inline]
    fn add(&mut self, p: Vec3, d: f64, uid: AgentUid) {
        if !p.is_finite() {
            self.bad.get_or_insert(uid);
            return;
        }
        self.min = self.min.component_min(p);
        self.max = self.max.component_max(p);
        self.max_diameter = self.max_diameter.max(d);
    }

    fn merge(mut self, o: Summary) -> Summary {
        self.min = self.min.component_min(o.min);
        self.max = self.max.component_max(o.max);
        self.max_diameter = self.max_diameter.max(o.max_diameter);
        self.bad = self.bad.or(o.bad);
        self
    }
}

impl AgentSnapshot {
    /// Snapshot of loose points; uids are the point indices.
    pub fn from_points(positions: &[Vec3], diameters: &[f64]) -> Result<Self, EnvError> {
        assert_eq!(positions.len(), diameters.len());
        let mut s = Summary::empty();
        for (i, (&p, &d)) in positions.iter().zip(diameters).enumerate() {
            s.add(p, d, AgentUid(i as u64));
        }
        if let Some(uid) = s.bad {
            return Err(EnvError::NonFinitePosition(uid));
        }
        Ok(AgentSnapshot {
            positions: positions.to_vec(),
            diameters: diameters.to_vec(),
            uids: (0..positions.len() as u64).map(AgentUid).collect(),
            kinds: vec![0; positions.len()],
            ptrs: Vec::new(),
            domain_offsets: vec![0, positions.len()],
            max_diameter: s.max_diameter,
            min: s.min,
            max: s.max,
            epoch: 0,
        })
    }

    /// Refills the snapshot from the resource manager in parallel, reusing
    /// the existing allocations.
    pub fn refresh(&mut self, rm: &ResourceManager, pool: &WorkerPool) -> Result<(), EnvError> {
        let lengths = rm.domain_lengths();
        let n: usize = lengths.iter().sum();
        if n >= u32::MAX as usize {
            return Err(EnvError::TooManyAgents(n));
        }
        self.domain_offsets.clear();
        self.domain_offsets.push(0);
        for &l in &lengths {
            let last = *self.domain_offsets.last().unwrap();
            self.domain_offsets.push(last + l);
        }
        self.positions.resize(n, Vec3::ZERO);
        self.diameters.resize(n, 0.0);
        self.uids.resize(n, AgentUid::UNASSIGNED);
        self.kinds.resize(n, 0);
        self.ptrs.resize(n, AgentPtr::dangling());

        let positions = DisjointSlice::new(&mut self.positions);
        let diameters = DisjointSlice::new(&mut self.diameters);
        let uids = DisjointSlice::new(&mut self.uids);
        let kinds = DisjointSlice::new(&mut self.kinds);
        let ptrs = DisjointSlice::new(&mut self.ptrs);
        let offsets = &self.domain_offsets;
        let threads = pool.thread_count();
        let parts = pool.broadcast(|w| {
            let mut s = Summary::empty();
            for (d, list) in rm.domains.iter().enumerate() {
                let base = offsets[d];
                for i in chunk_range(list.len(), threads, w) {
                    let p = list[i];
                    // SAFETY: agents are not mutated while the pool runs
                    // this update; every flat index is written by one worker.
                    unsafe {
                        let a = p.get();
                        let g = base + i;
                        positions.write(g, a.position());
                        diameters.write(g, a.diameter());
                        uids.write(g, a.uid());
                        kinds.write(g, a.kind());
                        ptrs.write(g, p);
                        s.add(a.position(), a.diameter(), a.uid());
                    }
                }
            }
            s
        });
        let s = parts.into_iter().fold(Summary::empty(), Summary::merge);
        if let Some(uid) = s.bad {
            return Err(EnvError::NonFinitePosition(uid));
        }
        self.max_diameter = s.max_diameter;
        self.min = s.min;
        self.max = s.max;
        self.epoch = rm.epoch();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn diameters(&self) -> &[f64] {
        &self.diameters
    }

    pub fn uids(&self) -> &[AgentUid] {
        &self.uids
    }

    pub fn kinds(&self) -> &[u32] {
        &self.kinds
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.positions[i]
    }

    pub fn diameter(&self, i: usize) -> f64 {
        self.diameters[i]
    }

    pub fn uid(&self, i: usize) -> AgentUid {
        self.uids[i]
    }

    pub fn max_diameter(&self) -> f64 {
        self.max_diameter
    }

    /// Component-wise bounds of all positions; inverted when empty.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.min, self.max)
    }

    /// Flat index of agent `index` in `domain`.
    #[inline]
    pub fn flat_index(&self, domain: usize, index: usize) -> usize {
        self.domain_offsets[domain] + index
    }

    pub fn domain_offsets(&self) -> &[usize] {
        &self.domain_offsets
    }

    /// Resource-manager epoch the snapshot was taken at.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub(crate) fn has_agents(&self) -> bool {
        self.ptrs.len() == self.positions.len()
    }

    #[inline]
    pub(crate) fn check_query(&self, index: usize) -> Result<(), EnvError> {
        if index >= self.len() {
            Err(EnvError::QueryOutOfRange {
                index,
                len: self.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// Common interface of the neighbor-search implementations.
///
/// The visitor receives the neighbor's flat index and its squared distance.
pub trait Environment: Send + Sync {
    fn kind(&self) -> EnvironmentKind;

    /// Takes a fresh snapshot of `rm` and rebuilds the index.
    fn update(&mut self, rm: &ResourceManager, pool: &WorkerPool) -> Result<(), EnvError>;

    /// Replaces the snapshot with loose points and rebuilds the index.
    fn update_from_points(&mut self, positions: &[Vec3], diameters: &[f64], pool: &WorkerPool) -> Result<(), EnvError>;

    fn snapshot(&self) -> &AgentSnapshot;

    fn largest_agent_diameter(&self) -> f64 {
        self.snapshot().max_diameter()
    }

    /// Largest squared radius the agent query supports.
    fn max_squared_radius(&self) -> f64;

    /// Visits every other agent whose center lies within the radius of the
    /// center of agent `query`.
    fn for_each_neighbor_dyn(
        &self,
        query: usize,
        squared_radius: f64,
        visitor: &mut dyn FnMut(usize, f64),
    ) -> Result<(), EnvError>;

    /// Visits every agent within the radius of `point`; any radius works.
    fn for_each_in_radius_dyn(&self, point: Vec3, squared_radius: f64, visitor: &mut dyn FnMut(usize, f64));
}

/// Statically dispatched environment used by the scheduler.
#[derive(Debug)]
pub enum AnyEnvironment {
    UniformGrid(UniformGridEnvironment),
    BruteForce(BruteForceEnvironment),
    KdTree(KdTreeEnvironment),
}

impl AnyEnvironment {
    pub fn new(kind: EnvironmentKind, box_length: BoxLengthPolicy, space_bounds: Option<(Vec3, Vec3)>) -> Self {
        match kind {
            EnvironmentKind::UniformGrid => {
                AnyEnvironment::UniformGrid(UniformGridEnvironment::new(box_length, space_bounds))
            }
            EnvironmentKind::BruteForce => AnyEnvironment::BruteForce(BruteForceEnvironment::new()),
            EnvironmentKind::KdTree => AnyEnvironment::KdTree(KdTreeEnvironment::new()),
        }
    }

    pub fn as_dyn(&self) -> &dyn Environment {
        match self {
            AnyEnvironment::UniformGrid(e) => e,
            AnyEnvironment::BruteForce(e) => e,
            AnyEnvironment::KdTree(e) => e,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn Environment {
        match self {
            AnyEnvironment::UniformGrid(e) => e,
            AnyEnvironment::BruteForce(e) => e,
            AnyEnvironment::KdTree(e) => e,
        }
    }

    pub fn grid(&self) -> Option<&UniformGridEnvironment> {
        match self {
            AnyEnvironment::UniformGrid(e) => Some(e),
            _ => None,
        }
    }

    pub fn kind(&self) -> EnvironmentKind {
        self.as_dyn().kind()
    }

    pub fn update(&mut self, rm: &ResourceManager, pool: &WorkerPool) -> Result<(), EnvError> {
        self.as_dyn_mut().update(rm, pool)
    }

    pub fn snapshot(&self) -> &AgentSnapshot {
        self.as_dyn().snapshot()
    }

    pub fn max_squared_radius(&self) -> f64 {
        self.as_dyn().max_squared_radius()
    }

    #[inline]
    pub fn for_each_neighbor<F: FnMut(usize, f64)>(
        &self,
        query: usize,
        squared_radius: f64,
        visitor: F,
    ) -> Result<(), EnvError> {
        match self {
            AnyEnvironment::UniformGrid(e) => e.for_each_neighbor(query, squared_radius, visitor),
            AnyEnvironment::BruteForce(e) => e.for_each_neighbor(query, squared_radius, visitor),
            AnyEnvironment::KdTree(e) => e.for_each_neighbor(query, squared_radius, visitor),
        }
    }

    #[inline]
    pub fn for_each_in_radius<F: FnMut(usize, f64)>(&self, point: Vec3, squared_radius: f64, visitor: F) {
        match self {
            AnyEnvironment::UniformGrid(e) => e.for_each_in_radius(point, squared_radius, visitor),
            AnyEnvironment::BruteForce(e) => e.for_each_in_radius(point, squared_radius, visitor),
            AnyEnvironment::KdTree(e) => e.for_each_in_radius(point, squared_radius, visitor),
        }
    }
}

macro_rules! impl_environment {
    ($ty:ty, $kind:expr) => {
        impl $crate::env::Environment for $ty {
            fn kind(&self) -> $crate::env::EnvironmentKind {
                $kind
            }

            fn update(
                &mut self,
                rm: &$crate::resource_manager::ResourceManager,
                pool: &$crate::exec::WorkerPool,
            ) -> Result<(), $crate::env::EnvError> {
                self.snapshot.refresh(rm, pool)?;
                self.rebuild(pool)
            }

            fn update_from_points(
                &mut self,
                positions: &[$crate::geometry::Vec3],
                diameters: &[f64],
                pool: &$crate::exec::WorkerPool,
            ) -> Result<(), $crate::env::EnvError> {
                self.snapshot = $crate::env::AgentSnapshot::from_points(positions, diameters)?;
                self.rebuild(pool)
            }

            fn snapshot(&self) -> &$crate::env::AgentSnapshot {
                &self.snapshot
            }

            fn max_squared_radius(&self) -> f64 {
                self.max_squared_radius()
            }

            fn for_each_neighbor_dyn(
                &self,
                query: usize,
                squared_radius: f64,
                visitor: &mut dyn FnMut(usize, f64),
            ) -> Result<(), $crate::env::EnvError> {
                self.for_each_neighbor(query, squared_radius, visitor)
            }

            fn for_each_in_radius_dyn(
                &self,
                point: $crate::geometry::Vec3,
                squared_radius: f64,
                visitor: &mut dyn FnMut(usize, f64),
            ) {
                self.for_each_in_radius(point, squared_radius, visitor)
            }
        }
    };
}
pub(crate) use impl_environment;
