//! Pairwise repulsion and static-agent detection.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentUid};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceParams {
    /// Force per unit of overlap.
    pub repulsion_coefficient: f64,
    /// Upper bound on the length of one displacement step.
    pub max_displacement: f64,
    /// Resultants at or below this magnitude do not move the agent.
    pub force_threshold: f64,
    /// Mechanics time step; displacement is force times time step.
    pub time_step: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        ForceParams {
            repulsion_coefficient: 2.0,
            max_displacement: 3.0,
            force_threshold: 0.0,
            time_step: 0.01,
        }
    }
}

impl ForceParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("repulsion_coefficient", self.repulsion_coefficient),
            ("max_displacement", self.max_displacement),
            ("time_step", self.time_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.force_threshold >= 0.0 && self.force_threshold.is_finite()) {
            return Err(format!(
                "force_threshold must be non-negative, got {}",
                self.force_threshold
            ));
        }
        Ok(())
    }
}

/// How far a change to a user attribute reaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeScope {
    /// Only the agent's own force computation is affected.
    SelfOnly,
    /// The agent and everything it may touch must be recomputed.
    SelfAndNeighbors,
}

/// Bookkeeping that lets the mechanics skip agents whose resultant force
/// cannot have changed.
#[derive(Debug)]
pub struct StaticnessState {
    pub(crate) is_static: bool,
    pub(crate) was_static: bool,
    pub(crate) moved: bool,
    pub(crate) growth: bool,
    pub(crate) self_changed: bool,
    /// Set by other agents (moved or grown neighbors, new agents nearby).
    pub(crate) neighbor_changed: AtomicBool,
    pub(crate) nonzero_neighbor_forces: u32,
}

impl Default for StaticnessState {
    fn default() -> Self {
        StaticnessState {
            is_static: false,
            was_static: false,
            moved: false,
            growth: false,
            self_changed: false,
            // A fresh agent has never had its forces computed.
            neighbor_changed: AtomicBool::new(true),
            nonzero_neighbor_forces: 0,
        }
    }
}

impl StaticnessState {
    /// Whether the force computation was skipped this iteration.
    pub fn is_static(&self) -> bool {
        self.is_static
    }

    pub fn was_static(&self) -> bool {
        self.was_static
    }

    pub fn moved(&self) -> bool {
        self.moved
    }

    pub fn growth(&self) -> bool {
        self.growth
    }

    pub fn new_neighbor_or_change(&self) -> bool {
        self.neighbor_changed.load(Ordering::Relaxed)
    }

    /// Neighbors that exerted a non-zero force at the last computation.
    pub fn nonzero_neighbor_forces(&self) -> u32 {
        self.nonzero_neighbor_forces
    }

    pub(crate) fn begin_iteration(&mut self) {
        self.was_static = self.is_static;
        self.moved = false;
        self.growth = false;
    }

    #[inline]
    pub(crate) fn mark_neighbor_changed(&self) {
        if !self.neighbor_changed.load(Ordering::Relaxed) {
            self.neighbor_changed.store(true, Ordering::Relaxed);
        }
    }

    /// Decides whether this iteration's force computation may be skipped,
    /// consuming the change flags. Own motion or growth in the previous
    /// iteration arrives here as a neighbor change marked on the agent
    /// itself.
    pub(crate) fn decide(&mut self, detection: bool) -> bool {
        let neighbor_changed = self.neighbor_changed.swap(false, Ordering::Relaxed);
        let self_changed = std::mem::take(&mut self.self_changed);
        self.is_static = detection
            && !neighbor_changed
            && !self_changed
            && self.nonzero_neighbor_forces <= 1;
        self.is_static
    }
}

/// Deterministic unit vector for a pair of coincident centers. The agent
/// with the smaller uid gets `dir`, the other one `-dir`.
pub fn coincident_direction(a: AgentUid, b: AgentUid) -> Vec3 {
    let (lo, hi, sign) = if a <= b { (a.0, b.0, 1.0) } else { (b.0, a.0, -1.0) };
    let mut s = lo.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ hi.rotate_left(29);
    let mut next = || {
        s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    };
    let z = 2.0 * next() - 1.0;
    let phi = std::f64::consts::TAU * next();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z) * sign
}

/// Force exerted on `a` by `b`: `k * overlap` along the line from `b` to `a`
/// when the spheres overlap, zero otherwise.
#[inline]
pub fn overlap_force(
    pos_a: Vec3,
    diameter_a: f64,
    uid_a: AgentUid,
    pos_b: Vec3,
    diameter_b: f64,
    uid_b: AgentUid,
    repulsion_coefficient: f64,
) -> Vec3 {
    let diff = pos_a - pos_b;
    let dist2 = diff.norm_squared();
    let contact = 0.5 * (diameter_a + diameter_b);
    if dist2 >= contact * contact {
        return Vec3::ZERO;
    }
    let dist = dist2.sqrt();
    let overlap = contact - dist;
    let dir = if dist > 0.0 {
        diff / dist
    } else {
        coincident_direction(uid_a, uid_b)
    };
    dir * (repulsion_coefficient * overlap)
}

pub fn pairwise_force(a: &Agent, b: &Agent, params: &ForceParams) -> Vec3 {
    overlap_force(
        a.position(),
        a.diameter(),
        a.uid(),
        b.position(),
        b.diameter(),
        b.uid(),
        params.repulsion_coefficient,
    )
}

/// Displacement produced by resultant `force`, or zero if it does not
/// exceed `threshold`.
#[inline]
pub fn displacement(force: Vec3, threshold: f64, params: &ForceParams) -> Vec3 {
    let magnitude = force.norm();
    if magnitude <= threshold || magnitude == 0.0 {
        return Vec3::ZERO;
    }
    let d = force * params.time_step;
    let len = d.norm();
    if len > params.max_displacement {
        d * (params.max_displacement / len)
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(p: [f64; 3], d: f64, uid: u64) -> Agent {
        let mut a = Agent::new(Vec3::from(p), d);
        a.set_uid(AgentUid(uid));
        a
    }

    #[test]
    fn touching_spheres_exert_nothing() {
        let p = ForceParams::default();
        let a = agent([0.0, 0.0, 0.0], 10.0, 0);
        let b = agent([10.0, 0.0, 0.0], 10.0, 1);
        assert_eq!(pairwise_force(&a, &b, &p), Vec3::ZERO);
    }

    #[test]
    fn overlap_pushes_apart() {
        let p = ForceParams {
            repulsion_coefficient: 2.0,
            ..Default::default()
        };
        let a = agent([0.0, 0.0, 0.0], 10.0, 0);
        let b = agent([8.0, 0.0, 0.0], 10.0, 1);
        let f = pairwise_force(&a, &b, &p);
        assert!((f.x() + 4.0).abs() < 1e-12);
        assert_eq!(f + pairwise_force(&b, &a, &p), Vec3::ZERO);
    }

    #[test]
    fn coincident_centers_get_opposite_unit_directions() {
        let d1 = coincident_direction(AgentUid(3), AgentUid(9));
        let d2 = coincident_direction(AgentUid(9), AgentUid(3));
        assert!((d1.norm() - 1.0).abs() < 1e-12);
        assert_eq!(d1 + d2, Vec3::ZERO);
    }

    #[test]
    fn displacement_is_clamped_and_thresholded() {
        let p = ForceParams {
            time_step: 1.0,
            max_displacement: 2.0,
            ..Default::default()
        };
        assert_eq!(displacement(Vec3::new(0.5, 0.0, 0.0), 1.0, &p), Vec3::ZERO);
        let d = displacement(Vec3::new(10.0, 0.0, 0.0), 0.0, &p);
        assert!((d.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decide_requires_clean_flags() {
        let mut s = StaticnessState::default();
        assert!(!s.decide(true));
        assert!(s.decide(true));
        s.mark_neighbor_changed();
        assert!(!s.decide(true));
        s.nonzero_neighbor_forces = 2;
        assert!(!s.decide(true));
        s.nonzero_neighbor_forces = 1;
        assert!(!s.decide(false));
    }
}
