//! The per-iteration scheduler.
//!
//! One iteration: pre operations, environment update (and sorting when
//! due), the parallel agent loop, mid operations, the commit of staged
//! changes, post operations.

mod context;
mod operation;

use std::time::Instant;

use parking_lot::Mutex;
use thiserror::Error;

use crate::agent::{Agent, AgentUid};
use crate::alloc::AllocError;
use crate::commit::{commit_additions, commit_removals, CommitError};
use crate::env::{AnyEnvironment, EnvError, UniformGridEnvironment};
use crate::exec::{detect_topology, BlockLoopReport, ExecError, WorkerPool};
use crate::mechanics::{displacement, overlap_force};
use crate::morton::{sort_and_balance, MortonError};
use crate::params::SimulationParams;
use crate::report::{current_rss_bytes, SimulationReport};
use crate::resource_manager::{AgentHandle, ResourceManager, RmError};
use crate::util::chunk_range;

pub use context::{AgentContext, Neighbor, StandaloneContext};
pub use operation::{AgentOperation, OpError, StandaloneOperation, StandalonePhase};

use context::{RmAccess, StagedAgent, WorkerStage};
use operation::{AgentOpKind, Scheduled};

/// Name of the built-in operation that runs the agents' behaviors.
pub const BEHAVIORS_OP: &str = "behaviors";
/// Name of the built-in mechanical-forces operation.
pub const MECHANICS_OP: &str = "mechanical_forces";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Rm(#[from] RmError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Commit(#[from] CommitError),
    #[error(transparent)]
    Sort(#[from] MortonError),
    #[error("iteration {iteration}: operation '{operation}' failed: {message}")]
    Operation {
        iteration: u64,
        operation: String,
        message: String,
    },
    #[error("{0}")]
    Registration(String),
}

pub struct Simulation {
    params: SimulationParams,
    pool: WorkerPool,
    rm: ResourceManager,
    env: AnyEnvironment,
    sort_env: Option<UniformGridEnvironment>,
    agent_ops: Vec<Scheduled<AgentOpKind>>,
    standalone: Vec<(StandalonePhase, Scheduled<Box<dyn StandaloneOperation>>)>,
    stages: Vec<Mutex<WorkerStage>>,
    iteration: u64,
    created: Instant,
    started: bool,
    report: SimulationReport,
    last_loop: Option<BlockLoopReport>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("iteration", &self.iteration)
            .field("agents", &self.rm.len())
            .field("pool", &self.pool)
            .finish()
    }
}

impl Simulation {
    pub fn new(params: SimulationParams) -> Result<Self, SimError> {
        let created = Instant::now();
        params.validate().map_err(SimError::InvalidParams)?;
        let topology = detect_topology(params.threads, params.domains);
        let pool = WorkerPool::new(topology)?;
        let threads = pool.thread_count();
        let domains = pool.topology().domain_count();
        let rm = ResourceManager::new(domains, threads, params.allocator, params.pool_config())?;
        let env = AnyEnvironment::new(params.environment, params.box_length, params.space_bounds);
        let mut agent_ops = vec![Scheduled {
            name: BEHAVIORS_OP.into(),
            frequency: 1,
            op: AgentOpKind::Behaviors,
        }];
        if params.mechanics {
            agent_ops.push(Scheduled {
                name: MECHANICS_OP.into(),
                frequency: 1,
                op: AgentOpKind::Mechanics,
            });
        }
        let baseline = current_rss_bytes().unwrap_or(0);
        Ok(Simulation {
            report: SimulationReport {
                threads,
                domains,
                baseline_rss_bytes: baseline,
                peak_rss_bytes: baseline,
                ..Default::default()
            },
            params,
            pool,
            rm,
            env,
            sort_env: None,
            agent_ops,
            standalone: Vec::new(),
            stages: (0..threads).map(|_| Mutex::new(WorkerStage::default())).collect(),
            iteration: 0,
            created,
            started: false,
            last_loop: None,
        })
    }

    pub fn params(&self) -> &SimulationParams {
        &self.params
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn rm(&self) -> &ResourceManager {
        &self.rm
    }

    /// Direct access between iterations.
    pub fn rm_mut(&mut self) -> &mut ResourceManager {
        &mut self.rm
    }

    pub fn environment(&self) -> &AnyEnvironment {
        &self.env
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn add_agent(&mut self, agent: Agent) -> Result<AgentHandle, SimError> {
        Ok(self.rm.push_back(agent)?)
    }

    fn check_registration(&self, name: &str, frequency: u64) -> Result<(), SimError> {
        if frequency == 0 {
            return Err(SimError::Registration(format!("operation '{name}': frequency must be at least 1")));
        }
        let taken = self.agent_ops.iter().any(|o| o.name == name) || self.standalone.iter().any(|(_, o)| o.name == name);
        if taken {
            return Err(SimError::Registration(format!("operation '{name}' is already registered")));
        }
        Ok(())
    }

    /// Registers an operation for every agent; agent operations run in
    /// registration order after the built-in ones.
    pub fn add_agent_operation(
        &mut self,
        name: &str,
        frequency: u64,
        op: impl AgentOperation + 'static,
    ) -> Result<(), SimError> {
        self.check_registration(name, frequency)?;
        self.agent_ops.push(Scheduled {
            name: name.into(),
            frequency,
            op: AgentOpKind::User(Box::new(op)),
        });
        Ok(())
    }

    pub fn add_standalone_operation(
        &mut self,
        phase: StandalonePhase,
        name: &str,
        frequency: u64,
        op: impl StandaloneOperation + 'static,
    ) -> Result<(), SimError> {
        self.check_registration(name, frequency)?;
        self.standalone.push((
            phase,
            Scheduled {
                name: name.into(),
                frequency,
                op: Box::new(op),
            },
        ));
        Ok(())
    }

    /// Changes how often an operation (built-in or registered) runs.
    pub fn set_frequency(&mut self, name: &str, frequency: u64) -> Result<(), SimError> {
        if frequency == 0 {
            return Err(SimError::Registration(format!("operation '{name}': frequency must be at least 1")));
        }
        if let Some(o) = self.agent_ops.iter_mut().find(|o| o.name == name) {
            o.frequency = frequency;
            return Ok(());
        }
        if let Some((_, o)) = self.standalone.iter_mut().find(|(_, o)| o.name == name) {
            o.frequency = frequency;
            return Ok(());
        }
        Err(SimError::Registration(format!("no operation named '{name}'")))
    }

    /// Operation names in execution order with their frequencies.
    pub fn operations(&self) -> Vec<(String, u64)> {
        let mut v: Vec<(String, u64)> = self.agent_ops.iter().map(|o| (o.name.clone(), o.frequency)).collect();
        v.extend(self.standalone.iter().map(|(_, o)| (o.name.clone(), o.frequency)));
        v
    }

    /// Block claims and steal counts of the most recent agent loop.
    pub fn last_loop_report(&self) -> Option<&BlockLoopReport> {
        self.last_loop.as_ref()
    }

    pub fn simulate(&mut self, iterations: u64) -> Result<(), SimError> {
        for _ in 0..iterations {
            self.step()?;
        }
        Ok(())
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<(), SimError> {
        if !self.started {
            self.started = true;
            self.report.times.setup += ms(self.created.elapsed());
        }
        let it = self.iteration;
        let t_iter = Instant::now();
        let evals_before = self.report.counters.force_evals;

        let pre_mutated = self.run_standalone(StandalonePhase::Pre, it)?;

        let t = Instant::now();
        self.env.update(&self.rm, &self.pool)?;
        self.report.times.environment += ms(t.elapsed());
        if pre_mutated {
            self.mark_all_changed();
        }

        let f = self.params.sorting_frequency;
        if f > 0 && it % f == 0 && !self.rm.is_empty() {
            let t = Instant::now();
            self.sort()?;
            self.report.times.sorting += ms(t.elapsed());
        }

        let t = Instant::now();
        self.agent_loop(it)?;
        self.report.times.agent_ops += ms(t.elapsed());

        self.run_standalone(StandalonePhase::Mid, it)?;

        let t = Instant::now();
        self.commit(it)?;
        self.report.times.commit += ms(t.elapsed());

        if self.run_standalone(StandalonePhase::Post, it)? {
            self.mark_all_changed();
        }

        self.iteration += 1;
        let r = &mut self.report;
        r.iterations = self.iteration;
        r.per_iteration_ms.push(ms(t_iter.elapsed()));
        r.per_iteration_force_evals.push(r.counters.force_evals - evals_before);
        r.per_iteration_agents.push(self.rm.len());
        if let Some(rss) = current_rss_bytes() {
            r.peak_rss_bytes = r.peak_rss_bytes.max(rss);
        }
        Ok(())
    }

    fn sort(&mut self) -> Result<(), SimError> {
        let keep = self.params.use_extra_memory_during_sort;
        let stats = match &self.env {
            AnyEnvironment::UniformGrid(g) => sort_and_balance(&mut self.rm, g, &self.pool, keep)?,
            _ => {
                let params = &self.params;
                let g = self
                    .sort_env
                    .get_or_insert_with(|| UniformGridEnvironment::new(params.box_length, params.space_bounds));
                crate::env::Environment::update(g, &self.rm, &self.pool)?;
                sort_and_balance(&mut self.rm, g, &self.pool, keep)?
            }
        };
        self.report.counters.sorts += 1;
        self.report.counters.sort_migrations += stats.migrated as u64;
        // The index must describe the new layout before the agent loop.
        self.env.update(&self.rm, &self.pool)?;
        Ok(())
    }

    fn run_standalone(&mut self, phase: StandalonePhase, it: u64) -> Result<bool, SimError> {
        let mut mutated = false;
        for (p, op) in &mut self.standalone {
            if *p != phase || !op.is_due(it) {
                continue;
            }
            let t = Instant::now();
            let rm = match phase {
                StandalonePhase::Mid => RmAccess::Shared(&self.rm),
                _ => RmAccess::Exclusive(&mut self.rm),
            };
            let mut ctx = StandaloneContext {
                iteration: it,
                rm,
                env: &self.env,
                pool: &self.pool,
                params: &self.params,
                mutated: false,
            };
            let result = op.op.run(&mut ctx);
            mutated |= ctx.mutated;
            let elapsed = ms(t.elapsed());
            self.report.times.standalone += elapsed;
            *self.report.per_operation_ms.entry(op.name.clone()).or_default() += elapsed;
            result.map_err(|e| SimError::Operation {
                iteration: it,
                operation: op.name.clone(),
                message: e.0,
            })?;
        }
        Ok(mutated)
    }

    fn agent_loop(&mut self, it: u64) -> Result<(), SimError> {
        let due: Vec<usize> = (0..self.agent_ops.len()).filter(|&k| self.agent_ops[k].is_due(it)).collect();
        if due.is_empty() || self.rm.is_empty() {
            self.last_loop = None;
            return Ok(());
        }
        let env = &self.env;
        let params = &self.params;
        let stages = &self.stages;
        let rm = &self.rm;
        let ops = &self.agent_ops;
        let offsets = env.snapshot().domain_offsets();
        let epoch = rm.epoch();
        let report = self
            .pool
            .for_each_block(&rm.domain_lengths(), params.block_size, params.record_claims, |task| {
                let mut stage = stages[task.worker].lock();
                if stage.error.is_some() {
                    return;
                }
                let base = offsets[task.domain];
                for i in task.range {
                    // SAFETY: the block claim gives this worker the only
                    // reference to the agents in its range.
                    let agent = unsafe { &mut *rm.ptr(task.domain, i).as_ptr() };
                    agent.staticness.begin_iteration();
                    let mut ctx = AgentContext {
                        env,
                        params,
                        index: base + i,
                        handle: AgentHandle::new(task.domain, i, epoch),
                        uid: agent.uid(),
                        iteration: it,
                        worker: task.worker,
                        stage: &mut stage,
                        rng: None,
                        add_seq: 0,
                        edit_seq: 0,
                        removed: false,
                    };
                    for &k in &due {
                        let result = match &ops[k].op {
                            AgentOpKind::Behaviors => agent.run_behaviors(&mut ctx),
                            AgentOpKind::Mechanics => {
                                mechanics_step(agent, &mut ctx);
                                Ok(())
                            }
                            AgentOpKind::User(op) => op.run(agent, &mut ctx).map_err(|e| (ops[k].name.clone(), e)),
                        };
                        if let Err(e) = result {
                            ctx.stage.error = Some(e);
                            return;
                        }
                    }
                }
            });
        let r = &mut self.report.counters;
        r.own_blocks += report.stats.own_blocks;
        r.same_domain_steals += report.stats.same_domain_steals;
        r.cross_domain_steals += report.stats.cross_domain_steals;
        self.last_loop = Some(report);
        for s in &self.stages {
            if let Some((operation, e)) = s.lock().error.take() {
                return Err(SimError::Operation {
                    iteration: it,
                    operation,
                    message: e.0,
                });
            }
        }
        Ok(())
    }

    fn commit(&mut self, _it: u64) -> Result<(), SimError> {
        let threads = self.pool.thread_count();
        let mut added: Vec<Vec<StagedAgent>> = Vec::with_capacity(threads);
        let mut removed: Vec<Vec<AgentHandle>> = Vec::with_capacity(threads);
        let mut edits = Vec::new();
        for s in &self.stages {
            let mut s = s.lock();
            self.report.counters.force_evals += s.counters.force_evals;
            self.report.counters.static_skips += s.counters.static_skips;
            s.counters = Default::default();
            added.push(std::mem::take(&mut s.added));
            removed.push(std::mem::take(&mut s.removed));
            edits.append(&mut s.edits);
        }

        if !edits.is_empty() {
            edits.sort_by_key(|e| (e.target, e.source, e.seq));
            for e in edits {
                let agent = self.rm.get_by_uid_mut(e.target)?;
                (e.edit)(agent);
            }
        }

        if self.params.detect_static_agents && self.params.mechanics {
            self.broadcast_changes(&added, &removed);
        }

        let n_removed: usize = removed.iter().map(Vec::len).sum();
        if n_removed > 0 {
            commit_removals(&mut self.rm, &self.pool, &removed, false)?;
            self.report.counters.agents_removed += n_removed as u64;
        }

        let n_added: usize = added.iter().map(Vec::len).sum();
        if n_added > 0 {
            // Uids follow (parent uid, call order), independent of which
            // worker staged the agent.
            let mut keys: Vec<(AgentUid, u32, usize, usize)> = added
                .iter()
                .enumerate()
                .flat_map(|(w, l)| l.iter().enumerate().map(move |(j, s)| (s.parent, s.seq, w, j)))
                .collect();
            keys.sort_unstable();
            let base = self.rm.reserve_uids(n_added);
            for (rank, &(_, _, w, j)) in keys.iter().enumerate() {
                added[w][j].agent.set_uid(AgentUid(base + rank as u64));
            }
            let lists: Vec<Vec<Agent>> = added
                .into_iter()
                .map(|l| l.into_iter().map(|s| s.agent).collect())
                .collect();
            let topo = self.pool.topology();
            let list_domains: Vec<usize> = (0..threads).map(|w| topo.domain_of_worker(w)).collect();
            commit_additions(&mut self.rm, &self.pool, lists, &list_domains)?;
            self.report.counters.agents_added += n_added as u64;
        }
        Ok(())
    }

    /// Marks the agents whose forces may change because of this
    /// iteration's motion, growth, additions and removals.
    fn broadcast_changes(&self, added: &[Vec<StagedAgent>], removed: &[Vec<AgentHandle>]) {
        let env = &self.env;
        let snap = env.snapshot();
        let max_d = snap.max_diameter();
        let max_r2 = (max_d * max_d).min(env.max_squared_radius());
        let rm = &self.rm;
        let threads = self.pool.thread_count();
        let mark = |g: usize, _d2: f64| {
            // SAFETY: only the atomic flag is touched.
            unsafe { snap.ptrs[g].get() }.staticness.mark_neighbor_changed();
        };
        self.pool.broadcast(|w| {
            for (d, list) in rm.domains.iter().enumerate() {
                for i in chunk_range(list.len(), threads, w) {
                    // SAFETY: the pool is between barriers; agents are only
                    // read apart from atomic flags.
                    let a = unsafe { list[i].get() };
                    let st = &a.staticness;
                    if !(st.moved || st.growth) {
                        continue;
                    }
                    st.mark_neighbor_changed();
                    let g = snap.flat_index(d, i);
                    // Old position: anything that touched the agent.
                    let _ = env.for_each_neighbor(g, max_r2, mark);
                    // New position and size.
                    let r = 0.5 * (a.diameter() + max_d);
                    env.for_each_in_radius(a.position(), r * r, mark);
                }
            }
            if let Some(list) = added.get(w) {
                for s in list {
                    let r = 0.5 * (s.agent.diameter() + max_d);
                    env.for_each_in_radius(s.agent.position(), r * r, mark);
                }
            }
            if let Some(list) = removed.get(w) {
                for h in list {
                    if h.domain() < rm.domain_count() && h.index() < rm.domain_len(h.domain()) {
                        let _ = env.for_each_neighbor(snap.flat_index(h.domain(), h.index()), max_r2, mark);
                    }
                }
            }
        });
    }

    fn mark_all_changed(&self) {
        if !self.params.detect_static_agents {
            return;
        }
        let rm = &self.rm;
        let threads = self.pool.thread_count();
        self.pool.broadcast(|w| {
            for list in &rm.domains {
                for i in chunk_range(list.len(), threads, w) {
                    // SAFETY: atomic flag only.
                    unsafe { list[i].get() }.staticness.mark_neighbor_changed();
                }
            }
        });
    }

    /// Report so far, without teardown.
    pub fn report(&self) -> SimulationReport {
        let mut r = self.report.clone();
        r.final_agents = self.rm.len();
        r.pool = self.rm.pool_stats();
        r.wall_ms_total = r.times.setup + r.per_iteration_ms.iter().sum::<f64>();
        if !self.started {
            r.times.setup = ms(self.created.elapsed());
            r.wall_ms_total = r.times.setup;
        }
        r
    }

    /// Releases all agents and returns the final report, including teardown
    /// time.
    pub fn finish(mut self) -> SimulationReport {
        let mut r = self.report();
        let t = Instant::now();
        self.rm.clear();
        drop(self);
        r.times.teardown = ms(t.elapsed());
        r.wall_ms_total += r.times.teardown;
        r
    }
}

/// Sum of pairwise repulsion from neighbors overlapping at the start of the
/// iteration, applied as a clamped displacement.
fn mechanics_step(agent: &mut Agent, ctx: &mut AgentContext<'_>) {
    let params = ctx.params;
    if agent.staticness.decide(params.detect_static_agents) {
        ctx.stage.counters.static_skips += 1;
        return;
    }
    let s = ctx.env.snapshot();
    let g = ctx.snapshot_index();
    let (pos, diameter, uid) = (s.positions[g], s.diameters[g], s.uids[g]);
    let r = 0.5 * (diameter + s.max_diameter());
    let k = params.force.repulsion_coefficient;
    let mut force = crate::geometry::Vec3::ZERO;
    let mut nonzero = 0u32;
    let mut evals = 0u64;
    let visit = |i: usize, _d2: f64| {
        evals += 1;
        let f = overlap_force(pos, diameter, uid, s.positions[i], s.diameters[i], s.uids[i], k);
        if f != crate::geometry::Vec3::ZERO {
            nonzero += 1;
            force += f;
        }
    };
    ctx.env
        .for_each_neighbor(g, (r * r).min(ctx.env.max_squared_radius()), visit)
        .expect("query index and radius are in range");
    ctx.stage.counters.force_evals += evals;
    agent.staticness.nonzero_neighbor_forces = nonzero;
    agent.last_force = force;
    let threshold = agent.force_threshold().unwrap_or(params.force.force_threshold);
    let d = displacement(force, threshold, &params.force);
    if d != crate::geometry::Vec3::ZERO {
        agent.translate(d);
    }
}

#[inline]
fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Builds a simulation, lets `model_init` populate it, runs `iterations`
/// iterations and returns the report.
pub fn run_simulation(
    model_init: impl FnOnce(&mut Simulation) -> Result<(), SimError>,
    iterations: u64,
    params: SimulationParams,
) -> Result<SimulationReport, SimError> {
    let mut sim = Simulation::new(params)?;
    model_init(&mut sim)?;
    sim.simulate(iterations)?;
    Ok(sim.finish())
}
