//! Agents and the behaviors attached to them.

use std::fmt;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::geometry::Vec3;
use crate::mechanics::{ChangeScope, StaticnessState};
use crate::simulation::{AgentContext, OpError};

/// Unique agent identifier, never reused within a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentUid(pub u64);

impl AgentUid {
    /// Placeholder until the resource manager assigns a real uid.
    pub const UNASSIGNED: AgentUid = AgentUid(u64::MAX);

    pub fn is_assigned(self) -> bool {
        self != Self::UNASSIGNED
    }
}

impl fmt::Display for AgentUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-agent action executed every iteration.
///
/// Behaviors mutate only their own agent; new agents, removals and neighbor
/// edits are staged through the [`AgentContext`].
pub trait Behavior: Send + Sync {
    fn name(&self) -> &str;

    fn run(&self, agent: &mut Agent, ctx: &mut AgentContext<'_>) -> Result<(), OpError>;
}

#[derive(Clone)]
pub struct BehaviorSlot {
    pub behavior: Arc<dyn Behavior>,
    /// Whether a daughter created by [`Agent::daughter`] inherits it.
    pub copy_to_daughter: bool,
}

impl fmt::Debug for BehaviorSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BehaviorSlot")
            .field("behavior", &self.behavior.name())
            .field("copy_to_daughter", &self.copy_to_daughter)
            .finish()
    }
}

pub type Behaviors = SmallVec<[BehaviorSlot; 2]>;

pub struct Agent {
    uid: AgentUid,
    position: Vec3,
    diameter: f64,
    kind: u32,
    force_threshold: Option<f64>,
    behaviors: Behaviors,
    /// The behaviors being run; `behaviors` then collects additions.
    running: Behaviors,
    behaviors_running: bool,
    pending_behavior_removals: SmallVec<[String; 1]>,
    pub(crate) staticness: StaticnessState,
    pub(crate) last_force: Vec3,
    pub(crate) removal_mark: AtomicBool,
}

impl Agent {
    /// Panics if `diameter` is not positive or `position` is not finite.
    pub fn new(position: Vec3, diameter: f64) -> Self {
        assert!(diameter > 0.0, "agent diameter must be positive, got {diameter}");
        assert!(position.is_finite(), "agent position must be finite");
        Agent {
            uid: AgentUid::UNASSIGNED,
            position,
            diameter,
            kind: 0,
            force_threshold: None,
            behaviors: SmallVec::new(),
            running: SmallVec::new(),
            behaviors_running: false,
            pending_behavior_removals: SmallVec::new(),
            staticness: StaticnessState::default(),
            last_force: Vec3::ZERO,
            removal_mark: AtomicBool::new(false),
        }
    }

    pub fn with_kind(mut self, kind: u32) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_behavior(mut self, behavior: Arc<dyn Behavior>) -> Self {
        self.add_behavior(behavior, true);
        self
    }

    pub fn uid(&self) -> AgentUid {
        self.uid
    }

    pub(crate) fn set_uid(&mut self, uid: AgentUid) {
        self.uid = uid;
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    /// Moves the agent; a real position change marks it as moved.
    pub fn set_position(&mut self, position: Vec3) {
        debug_assert!(position.is_finite());
        if position != self.position {
            self.position = position;
            self.staticness.moved = true;
        }
    }

    pub fn translate(&mut self, delta: Vec3) {
        self.set_position(self.position + delta);
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Growth can raise pairwise forces for the agent and its neighbors, so
    /// it flags both; shrinking flags nothing.
    pub fn set_diameter(&mut self, diameter: f64) {
        assert!(diameter > 0.0, "agent diameter must be positive");
        if diameter > self.diameter {
            self.staticness.growth = true;
        }
        self.diameter = diameter;
    }

    pub fn kind(&self) -> u32 {
        self.kind
    }

    pub fn set_kind(&mut self, kind: u32) {
        self.kind = kind;
    }

    /// Per-agent override of the global force threshold.
    pub fn force_threshold(&self) -> Option<f64> {
        self.force_threshold
    }

    pub fn set_force_threshold(&mut self, threshold: Option<f64>) {
        if threshold != self.force_threshold {
            self.force_threshold = threshold;
            self.mark_changed(ChangeScope::SelfOnly);
        }
    }

    /// Records a change to a user attribute that may affect mechanics.
    pub fn mark_changed(&mut self, scope: ChangeScope) {
        match scope {
            ChangeScope::SelfOnly => self.staticness.self_changed = true,
            ChangeScope::SelfAndNeighbors => self.staticness.growth = true,
        }
    }

    pub fn staticness(&self) -> &StaticnessState {
        &self.staticness
    }

    pub fn last_force(&self) -> Vec3 {
        self.last_force
    }

    pub fn behaviors(&self) -> &[BehaviorSlot] {
        if self.behaviors_running {
            &self.running
        } else {
            &self.behaviors
        }
    }

    fn current_behaviors(&self) -> impl Iterator<Item = &BehaviorSlot> {
        self.running.iter().chain(self.behaviors.iter())
    }

    pub fn add_behavior(&mut self, behavior: Arc<dyn Behavior>, copy_to_daughter: bool) {
        self.behaviors.push(BehaviorSlot {
            behavior,
            copy_to_daughter,
        });
    }

    /// Removes every behavior called `name`. Removal requested while the
    /// behaviors are running takes effect once they finish.
    pub fn remove_behavior(&mut self, name: &str) {
        if self.behaviors_running {
            self.pending_behavior_removals.push(name.to_owned());
        } else {
            self.behaviors.retain(|b| b.behavior.name() != name);
        }
    }

    /// A new agent of the same kind carrying the behaviors marked for
    /// inheritance.
    pub fn daughter(&self, position: Vec3, diameter: f64) -> Agent {
        let mut d = Agent::new(position, diameter).with_kind(self.kind);
        d.force_threshold = self.force_threshold;
        d.behaviors = self
            .current_behaviors()
            .filter(|b| b.copy_to_daughter)
            .cloned()
            .collect();
        d
    }

    pub(crate) fn run_behaviors(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), (String, OpError)> {
        if self.behaviors.is_empty() {
            return Ok(());
        }
        self.running = std::mem::take(&mut self.behaviors);
        self.behaviors_running = true;
        let mut result = Ok(());
        for i in 0..self.running.len() {
            let b = self.running[i].behavior.clone();
            if let Err(e) = b.run(self, ctx) {
                result = Err((b.name().to_owned(), e));
                break;
            }
        }
        self.behaviors_running = false;
        let added = std::mem::replace(&mut self.behaviors, std::mem::take(&mut self.running));
        self.behaviors.extend(added);
        if !self.pending_behavior_removals.is_empty() {
            let names = std::mem::take(&mut self.pending_behavior_removals);
            self.behaviors
                .retain(|b| !names.iter().any(|n| n == b.behavior.name()));
        }
        result
    }

}

impl Clone for Agent {
    /// Copies state and behaviors; the uid is reset so the copy can be
    /// registered as a distinct agent.
    fn clone(&self) -> Self {
        Agent {
            uid: AgentUid::UNASSIGNED,
            position: self.position,
            diameter: self.diameter,
            kind: self.kind,
            force_threshold: self.force_threshold,
            behaviors: self.current_behaviors().cloned().collect(),
            running: SmallVec::new(),
            behaviors_running: false,
            pending_behavior_removals: SmallVec::new(),
            staticness: StaticnessState::default(),
            last_force: self.last_force,
            removal_mark: AtomicBool::new(false),
        }
    }
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("uid", &self.uid)
            .field("position", &self.position)
            .field("diameter", &self.diameter)
            .field("kind", &self.kind)
            .field("behaviors", &self.behaviors)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Noop;
    impl Behavior for Noop {
        fn name(&self) -> &str {
            "noop"
        }
        fn run(&self, _: &mut Agent, _: &mut AgentContext<'_>) -> Result<(), OpError> {
            Ok(())
        }
    }

    #[test]
    #[should_panic(expected = "diameter must be positive")]
    fn rejects_zero_diameter() {
        Agent::new(Vec3::ZERO, 0.0);
    }

    #[test]
    fn growth_flags_only_increase() {
        let mut a = Agent::new(Vec3::ZERO, 10.0);
        a.set_diameter(9.0);
        assert!(!a.staticness().growth);
        a.set_diameter(11.0);
        assert!(a.staticness().growth);
    }

    #[test]
    fn moving_sets_moved_flag() {
        let mut a = Agent::new(Vec3::ZERO, 10.0);
        a.translate(Vec3::ZERO);
        assert!(!a.staticness().moved);
        a.translate(Vec3::new(1.0, 0.0, 0.0));
        assert!(a.staticness().moved);
    }

    #[test]
    fn daughter_inherits_only_copyable_behaviors() {
        let mut a = Agent::new(Vec3::ZERO, 10.0).with_kind(3);
        a.add_behavior(Arc::new(Noop), true);
        a.add_behavior(Arc::new(Noop), false);
        let d = a.daughter(Vec3::new(1.0, 0.0, 0.0), 5.0);
        assert_eq!(d.kind(), 3);
        assert_eq!(d.behaviors().len(), 1);
        assert!(!d.uid().is_assigned());
    }

    #[test]
    fn remove_behavior_by_name() {
        let mut a = Agent::new(Vec3::ZERO, 1.0).with_behavior(Arc::new(Noop));
        a.remove_behavior("noop");
        assert!(a.behaviors().is_empty());
    }
}
