//! Shared-memory parallel agent-based simulation engine.
//!
//! Agents live in per-domain sequences owned by a [`ResourceManager`]. Each
//! iteration rebuilds a neighbor-search [`env`]ironment, runs every agent
//! operation over all agents on a fixed worker pool with two-level work
//! stealing ([`exec`]), then commits staged additions and removals in
//! parallel ([`commit`]). Agents can be reordered along a Morton curve
//! ([`morton`]), allocated from per-domain pools ([`alloc`]) and skipped by
//! the mechanics when provably static ([`mechanics`]).

pub mod agent;
pub mod alloc;
pub mod bench;
pub mod commit;
pub mod env;
pub mod exec;
pub mod geometry;
pub mod mechanics;
pub mod models;
pub mod morton;
pub mod params;
pub mod report;
pub mod resource_manager;
pub mod simulation;
mod util;

pub use agent::{Agent, AgentUid, Behavior, BehaviorSlot};
pub use alloc::AllocatorKind;
pub use env::{Environment, EnvironmentKind};
pub use geometry::Vec3;
pub use mechanics::{ChangeScope, ForceParams};
pub use params::{BoxLengthPolicy, SimulationParams};
pub use report::SimulationReport;
pub use resource_manager::{AgentHandle, ResourceManager};
pub use simulation::{
    run_simulation, AgentContext, AgentOperation, Neighbor, OpError, SimError, Simulation, StandaloneContext,
    StandaloneOperation, StandalonePhase,
};
