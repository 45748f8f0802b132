use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::OpError;
use crate::agent::{Agent, AgentUid};
use crate::env::AnyEnvironment;
use crate::exec::WorkerPool;
use crate::geometry::Vec3;
use crate::params::SimulationParams;
use crate::resource_manager::{AgentHandle, ResourceManager};

/// A neighbor as seen at the start of the iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub uid: AgentUid,
    pub position: Vec3,
    pub diameter: f64,
    pub kind: u32,
    pub distance_squared: f64,
}

pub(crate) struct StagedAgent {
    pub(crate) agent: Agent,
    pub(crate) parent: AgentUid,
    pub(crate) seq: u32,
}

pub(crate) type EditFn = Box<dyn FnOnce(&mut Agent) + Send>;

pub(crate) struct NeighborEdit {
    pub(crate) target: AgentUid,
    pub(crate) source: AgentUid,
    pub(crate) seq: u32,
    pub(crate) edit: EditFn,
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct WorkerCounters {
    pub(crate) force_evals: u64,
    pub(crate) static_skips: u64,
}

/// Everything one worker stages during the agent loop.
#[derive(Default)]
pub(crate) struct WorkerStage {
    pub(crate) added: Vec<StagedAgent>,
    pub(crate) removed: Vec<AgentHandle>,
    pub(crate) edits: Vec<NeighborEdit>,
    pub(crate) counters: WorkerCounters,
    pub(crate) error: Option<(String, OpError)>,
}

/// Per-agent view of the simulation handed to behaviors and agent
/// operations.
pub struct AgentContext<'a> {
    pub(crate) env: &'a AnyEnvironment,
    pub(crate) params: &'a SimulationParams,
    pub(crate) index: usize,
    pub(crate) handle: AgentHandle,
    pub(crate) uid: AgentUid,
    pub(crate) iteration: u64,
    pub(crate) worker: usize,
    pub(crate) stage: &'a mut WorkerStage,
    pub(crate) rng: Option<ChaCha8Rng>,
    pub(crate) add_seq: u32,
    pub(crate) edit_seq: u32,
    pub(crate) removed: bool,
}

impl<'a> AgentContext<'a> {
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn handle(&self) -> AgentHandle {
        self.handle
    }

    pub fn uid(&self) -> AgentUid {
        self.uid
    }

    pub fn params(&self) -> &SimulationParams {
        self.params
    }

    /// Largest squared radius [`for_each_neighbor`](Self::for_each_neighbor)
    /// accepts.
    pub fn max_squared_radius(&self) -> f64 {
        self.env.max_squared_radius()
    }

    /// Largest diameter among all agents at the start of the iteration.
    pub fn largest_diameter(&self) -> f64 {
        self.env.snapshot().max_diameter()
    }

    /// Visits the other agents whose centers were within the radius at the
    /// start of the iteration.
    pub fn for_each_neighbor(&self, squared_radius: f64, mut f: impl FnMut(&Neighbor)) -> Result<(), OpError> {
        let s = self.env.snapshot();
        self.env
            .for_each_neighbor(self.index, squared_radius, |i, d2| {
                f(&Neighbor {
                    uid: s.uids[i],
                    position: s.positions[i],
                    diameter: s.diameters[i],
                    kind: s.kinds[i],
                    distance_squared: d2,
                })
            })
            .map_err(|e| OpError(e.to_string()))
    }

    /// Generator private to this agent and iteration; the stream depends
    /// only on the seed, the agent uid and the iteration.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        let (seed, uid, it) = (self.params.seed, self.uid.0, self.iteration);
        self.rng.get_or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(uid);
            r.set_word_pos((it as u128) << 24);
            r
        })
    }

    /// Stages a new agent; it joins the simulation at the end of the
    /// iteration with a uid that depends only on this agent and the call
    /// order.
    pub fn add_agent(&mut self, agent: Agent) {
        self.stage.added.push(StagedAgent {
            agent,
            parent: self.uid,
            seq: self.add_seq,
        });
        self.add_seq += 1;
    }

    /// Stages removal of the current agent.
    pub fn remove_self(&mut self) -> Result<(), OpError> {
        if self.removed {
            return Err(OpError(format!("agent {} removed twice", self.uid)));
        }
        self.removed = true;
        self.stage.removed.push(self.handle);
        Ok(())
    }

    /// Stages removal of another agent; duplicates fail the commit.
    pub fn remove_agent(&mut self, handle: AgentHandle) {
        if handle == self.handle {
            self.removed = true;
        }
        self.stage.removed.push(handle);
    }

    /// Stages a change to another agent. Edits are applied one at a time
    /// after the agent loop, ordered by target uid, source uid and call
    /// order.
    pub fn modify_neighbor(&mut self, target: AgentUid, edit: impl FnOnce(&mut Agent) + Send + 'static) {
        self.stage.edits.push(NeighborEdit {
            target,
            source: self.uid,
            seq: self.edit_seq,
            edit: Box::new(edit),
        });
        self.edit_seq += 1;
    }

    pub(crate) fn snapshot_index(&self) -> usize {
        self.index
    }
}

pub(crate) enum RmAccess<'a> {
    Shared(&'a ResourceManager),
    Exclusive(&'a mut ResourceManager),
}

/// View handed to standalone operations.
pub struct StandaloneContext<'a> {
    pub(crate) iteration: u64,
    pub(crate) rm: RmAccess<'a>,
    pub(crate) env: &'a AnyEnvironment,
    pub(crate) pool: &'a WorkerPool,
    pub(crate) params: &'a SimulationParams,
    pub(crate) mutated: bool,
}

impl StandaloneContext<'_> {
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn rm(&self) -> &ResourceManager {
        match &self.rm {
            RmAccess::Shared(r) => r,
            RmAccess::Exclusive(r) => r,
        }
    }

    /// Fails for mid operations, which run while the agent loop's results
    /// are still uncommitted.
    pub fn rm_mut(&mut self) -> Result<&mut ResourceManager, OpError> {
        match &mut self.rm {
            RmAccess::Shared(_) => Err(OpError("resource manager is read-only in mid operations".into())),
            RmAccess::Exclusive(r) => {
                self.mutated = true;
                Ok(r)
            }
        }
    }

    /// The environment; built at the start of the current iteration for mid
    /// and post operations, of the previous one for pre operations.
    pub fn environment(&self) -> &AnyEnvironment {
        self.env
    }

    pub fn pool(&self) -> &WorkerPool {
        self.pool
    }

    pub fn params(&self) -> &SimulationParams {
        self.params
    }
}
