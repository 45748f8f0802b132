//! Benchmark models.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, Behavior};
use crate::geometry::Vec3;
use crate::params::{BoxLengthPolicy, SimulationParams};
use crate::simulation::{AgentContext, OpError, SimError, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Proliferation,
    Clustering,
    StaticFront,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Proliferation => "proliferation",
            ModelKind::Clustering => "clustering",
            ModelKind::StaticFront => "static_front",
        }
    }

    pub const ALL: [ModelKind; 3] = [ModelKind::Proliferation, ModelKind::Clustering, ModelKind::StaticFront];
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown model '{s}' (expected proliferation, clustering or static_front)"))
    }
}

/// Adjusts engine parameters a model depends on.
pub fn configure(kind: ModelKind, params: &mut SimulationParams) {
    match kind {
        ModelKind::Proliferation => {}
        ModelKind::Clustering => {
            let r = ClusteringParams::default().attraction_radius;
            params.box_length = match params.box_length {
                BoxLengthPolicy::Fixed(v) => BoxLengthPolicy::Fixed(v.max(r)),
                BoxLengthPolicy::Auto => BoxLengthPolicy::Fixed(r),
            };
        }
        ModelKind::StaticFront => {
            if params.force.force_threshold == 0.0 {
                params.force.force_threshold = StaticFrontParams::default().force_threshold;
            }
        }
    }
}

/// Populates `sim` with roughly `agents` agents of the given model.
pub fn init(kind: ModelKind, sim: &mut Simulation, agents: usize) -> Result<(), SimError> {
    let seed = sim.params().seed;
    match kind {
        ModelKind::Proliferation => init_proliferation(sim, agents, &ProliferationParams::default()),
        ModelKind::Clustering => init_clustering(sim, agents, &ClusteringParams::default(), seed),
        ModelKind::StaticFront => init_static_front(sim, agents, &StaticFrontParams::default()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProliferationParams {
    pub spacing: f64,
    pub initial_diameter: f64,
    pub growth_per_step: f64,
    pub division_diameter: f64,
}

impl Default for ProliferationParams {
    fn default() -> Self {
        ProliferationParams {
            spacing: 20.0,
            initial_diameter: 10.0,
            growth_per_step: 1.0,
            division_diameter: 13.0,
        }
    }
}

/// Grows the diameter every iteration and splits the cell in two once it
/// reaches the division diameter. Both halves keep the mother's volume
/// share; the daughter sits half a diameter away in a random direction.
#[derive(Debug, Clone)]
pub struct GrowDivide {
    pub growth_per_step: f64,
    pub division_diameter: f64,
}

impl Behavior for GrowDivide {
    fn name(&self) -> &str {
        "grow_divide"
    }

    fn run(&self, agent: &mut Agent, ctx: &mut AgentContext<'_>) -> Result<(), OpError> {
        agent.set_diameter(agent.diameter() + self.growth_per_step);
        if agent.diameter() >= self.division_diameter {
            let d = agent.diameter() / 2f64.cbrt();
            let dir = random_direction(ctx.rng());
            let daughter = agent.daughter(agent.position() + dir * (0.5 * d), d);
            agent.set_diameter(d);
            ctx.add_agent(daughter);
        }
        Ok(())
    }
}

/// Uniform unit vector.
pub fn random_direction<R: Rng>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Side of the smallest cube lattice holding `n` points.
pub fn lattice_side(n: usize) -> usize {
    let mut s = (n as f64).cbrt().round() as usize;
    while s * s * s < n {
        s += 1;
    }
    while s > 0 && (s - 1).pow(3) >= n {
        s -= 1;
    }
    s
}

/// `lattice_side(n)^3` cells on a cubic lattice.
pub fn init_proliferation(sim: &mut Simulation, n: usize, p: &ProliferationParams) -> Result<(), SimError> {
    let behavior: Arc<dyn Behavior> = Arc::new(GrowDivide {
        growth_per_step: p.growth_per_step,
        division_diameter: p.division_diameter,
    });
    let s = lattice_side(n);
    for z in 0..s {
        for y in 0..s {
            for x in 0..s {
                let pos = Vec3::new(x as f64, y as f64, z as f64) * p.spacing;
                sim.add_agent(Agent::new(pos, p.initial_diameter).with_behavior(behavior.clone()))?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    pub diameter: f64,
    pub attraction_radius: f64,
    pub step: f64,
    /// Cube side per cube root of the agent count.
    pub spacing: f64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        ClusteringParams {
            diameter: 10.0,
            attraction_radius: 15.0,
            step: 0.1,
            spacing: 15.0,
        }
    }
}

/// Moves the agent a fixed step toward the centroid of neighbors of its
/// own kind.
#[derive(Debug, Clone)]
pub struct Attract {
    pub radius: f64,
    pub step: f64,
}

impl Behavior for Attract {
    fn name(&self) -> &str {
        "attract"
    }

    fn run(&self, agent: &mut Agent, ctx: &mut AgentContext<'_>) -> Result<(), OpError> {
        let kind = agent.kind();
        let mut sum = Vec3::ZERO;
        let mut count = 0u32;
        ctx.for_each_neighbor(self.radius * self.radius, |n| {
            if n.kind == kind {
                sum += n.position;
                count += 1;
            }
        })?;
        if count == 0 {
            return Ok(());
        }
        let to = sum / count as f64 - agent.position();
        let dist = to.norm();
        if dist > 0.0 {
            agent.translate(to * (self.step.min(dist) / dist));
        }
        Ok(())
    }
}

/// `n` agents of two kinds, uniformly random in a cube.
pub fn init_clustering(sim: &mut Simulation, n: usize, p: &ClusteringParams, seed: u64) -> Result<(), SimError> {
    let side = p.spacing * (n as f64).cbrt();
    let behavior: Arc<dyn Behavior> = Arc::new(Attract {
        radius: p.attraction_radius,
        step: p.step,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let pos = Vec3::new(
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
        );
        sim.add_agent(
            Agent::new(pos, p.diameter)
                .with_kind((i % 2) as u32)
                .with_behavior(behavior.clone()),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticFrontParams {
    pub diameter: f64,
    /// Layers of the slab along z.
    pub layers: usize,
    pub column_height: usize,
    pub growth_per_step: f64,
    pub max_diameter: f64,
    pub force_threshold: f64,
}

impl Default for StaticFrontParams {
    fn default() -> Self {
        StaticFrontParams {
            diameter: 10.0,
            layers: 4,
            column_height: 3,
            growth_per_step: 0.05,
            max_diameter: 14.0,
            force_threshold: 0.05,
        }
    }
}

/// Grows until a maximum diameter; never divides.
#[derive(Debug, Clone)]
pub struct Grow {
    pub growth_per_step: f64,
    pub max_diameter: f64,
}

impl Behavior for Grow {
    fn name(&self) -> &str {
        "grow"
    }

    fn run(&self, agent: &mut Agent, _ctx: &mut AgentContext<'_>) -> Result<(), OpError> {
        if agent.diameter() < self.max_diameter {
            agent.set_diameter((agent.diameter() + self.growth_per_step).min(self.max_diameter));
        }
        Ok(())
    }
}

/// Slab of touching cells (zero net force) with a column of growing cells
/// standing on the middle of its top face. The slab has about `n` cells.
pub fn init_static_front(sim: &mut Simulation, n: usize, p: &StaticFrontParams) -> Result<(), SimError> {
    let layers = p.layers.max(1);
    let side = ((n / layers) as f64).sqrt().ceil().max(1.0) as usize;
    let d = p.diameter;
    for z in 0..layers {
        for y in 0..side {
            for x in 0..side {
                sim.add_agent(Agent::new(Vec3::new(x as f64, y as f64, z as f64) * d, d))?;
            }
        }
    }
    let grow: Arc<dyn Behavior> = Arc::new(Grow {
        growth_per_step: p.growth_per_step,
        max_diameter: p.max_diameter,
    });
    let c = (side / 2) as f64 * d;
    for k in 0..p.column_height {
        let pos = Vec3::new(c, c, (layers + k) as f64 * d);
        sim.add_agent(Agent::new(pos, d).with_kind(1).with_behavior(grow.clone()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_sides() {
        assert_eq!(lattice_side(8), 2);
        assert_eq!(lattice_side(9), 3);
        assert_eq!(lattice_side(1), 1);
        assert_eq!(lattice_side(1000), 10);
        assert_eq!(lattice_side(0), 0);
    }

    #[test]
    fn model_names_roundtrip() {
        for m in ModelKind::ALL {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert!("foo".parse::<ModelKind>().is_err());
    }

    #[test]
    fn random_directions_are_unit() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!((random_direction(&mut r).norm() - 1.0).abs() < 1e-12);
        }
    }
}
