use std::collections::HashMap;
use std::sync::Arc;

use abm_core::models::{self, init_proliferation, Attract, ModelKind, ProliferationParams};
use abm_core::{Agent, AgentUid, BoxLengthPolicy, Simulation, SimulationParams, Vec3};

fn params(threads: usize) -> SimulationParams {
    SimulationParams {
        threads: Some(threads),
        domains: Some(1),
        ..Default::default()
    }
}

fn model_sim(kind: ModelKind, n: usize, mut p: SimulationParams) -> Simulation {
    models::configure(kind, &mut p);
    let mut sim = Simulation::new(p).unwrap();
    models::init(kind, &mut sim, n).unwrap();
    sim
}

#[test]
fn proliferation_lattice_sizes() {
    for (n, expect) in [(1, 1), (8, 8), (9, 27), (27, 27), (1000, 1000)] {
        let sim = model_sim(ModelKind::Proliferation, n, params(1));
        assert_eq!(sim.rm().len(), expect, "n = {n}");
    }
    let sim = model_sim(ModelKind::Proliferation, 8, params(1));
    let mut xs: Vec<[f64; 3]> = sim.rm().agents().map(|a| a.position().0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(xs[0], [0.0, 0.0, 0.0]);
    assert_eq!(xs[7], [20.0, 20.0, 20.0]);
}

/// Diameter 10 grows by 1 per step and divides at 13: divisions happen in
/// iterations 2 and 5, so six iterations leave four cells.
#[test]
fn single_cell_divides_twice_in_six_iterations() {
    let mut sim = Simulation::new(params(1)).unwrap();
    init_proliferation(&mut sim, 1, &ProliferationParams::default()).unwrap();
    let mut counts = Vec::new();
    for _ in 0..6 {
        sim.step().unwrap();
        counts.push(sim.rm().len());
    }
    assert_eq!(counts, [1, 1, 2, 2, 2, 4]);
}

#[test]
fn immediate_division_doubles_every_iteration() {
    let mut sim = Simulation::new(params(2)).unwrap();
    let p = ProliferationParams {
        division_diameter: 0.0,
        ..Default::default()
    };
    init_proliferation(&mut sim, 1, &p).unwrap();
    sim.simulate(3).unwrap();
    assert_eq!(sim.rm().len(), 8);
}

#[test]
fn proliferation_count_is_nondecreasing() {
    let mut sim = model_sim(ModelKind::Proliferation, 64, params(2));
    let mut last = sim.rm().len();
    for _ in 0..12 {
        sim.step().unwrap();
        assert!(sim.rm().len() >= last);
        last = sim.rm().len();
    }
    assert!(last > 64);
}

fn attract_pair(kinds: (u32, u32), gap: f64) -> Simulation {
    let mut p = params(1);
    p.box_length = BoxLengthPolicy::Fixed(15.0);
    let mut sim = Simulation::new(p).unwrap();
    let b: Arc<dyn abm_core::Behavior> = Arc::new(Attract { radius: 15.0, step: 0.1 });
    sim.add_agent(Agent::new(Vec3::ZERO, 10.0).with_kind(kinds.0).with_behavior(b.clone()))
        .unwrap();
    sim.add_agent(Agent::new(Vec3::new(gap, 0.0, 0.0), 10.0).with_kind(kinds.1).with_behavior(b))
        .unwrap();
    sim
}

fn gap(sim: &Simulation) -> f64 {
    let p: HashMap<AgentUid, Vec3> = sim.rm().agents().map(|a| (a.uid(), a.position())).collect();
    (p[&AgentUid(1)] - p[&AgentUid(0)]).norm()
}

/// Each partner steps 0.1 toward the other, so the gap shrinks by 0.2 per
/// iteration while the iteration-start gap shows no overlap. Once in
/// contact each partner also moves back by k * overlap * dt, so the gap
/// follows g' = g - 0.2 + 0.04 (10 - g) and settles where the overlap is
/// 0.1 / (k * dt) = 5.
#[test]
fn same_kind_pair_closes_until_contact_forces_balance() {
    let mut sim = attract_pair((0, 0), 14.0);
    let mut expect = 14.0;
    for k in 1..=400 {
        let prev = gap(&sim);
        sim.step().unwrap();
        expect = expect - 0.2 + 0.04 * f64::max(0.0, 10.0 - expect);
        assert!((gap(&sim) - expect).abs() < 1e-9, "k = {k}");
        assert!(gap(&sim) < prev);
    }
    assert!((gap(&sim) - 5.0).abs() < 1e-4);
}

#[test]
fn different_kinds_only_collide() {
    let mut sim = attract_pair((0, 1), 14.0);
    sim.simulate(5).unwrap();
    assert_eq!(gap(&sim), 14.0);

    let mut sim = attract_pair((0, 1), 9.0);
    sim.step().unwrap();
    assert!((gap(&sim) - (9.0 + 2.0 * 2.0 * 1.0 * 0.01)).abs() < 1e-12);
}

#[test]
fn clustering_keeps_agent_count() {
    let mut sim = model_sim(ModelKind::Clustering, 500, params(2));
    sim.simulate(10).unwrap();
    assert_eq!(sim.rm().len(), 500);
    assert_eq!(sim.report().counters.agents_added, 0);
}

#[test]
fn clustering_is_thread_count_independent() {
    let run = |threads: usize| {
        let mut p = params(threads);
        p.block_size = 16;
        let mut sim = model_sim(ModelKind::Clustering, 2000, p);
        sim.simulate(10).unwrap();
        sim.rm()
            .agents()
            .map(|a| (a.uid(), a.position()))
            .collect::<HashMap<_, _>>()
    };
    let a = run(1);
    let b = run(8);
    assert_eq!(a.len(), b.len());
    for (uid, p) in &a {
        assert!((*p - b[uid]).norm() <= 1e-9, "{uid}");
    }
}

#[test]
fn clustering_pulls_kinds_together() {
    let mut p = params(1);
    p.box_length = BoxLengthPolicy::Fixed(15.0);
    let mut sim = model_sim(ModelKind::Clustering, 1000, p);
    let same_kind_neighbors = |sim: &Simulation| {
        let agents: Vec<(Vec3, u32)> = sim.rm().agents().map(|a| (a.position(), a.kind())).collect();
        let mut same = 0usize;
        for (i, a) in agents.iter().enumerate() {
            for b in &agents[i + 1..] {
                if a.1 == b.1 && a.0.distance_squared(b.0) < 225.0 {
                    same += 1;
                }
            }
        }
        same
    };
    let before = same_kind_neighbors(&sim);
    sim.simulate(20).unwrap();
    assert!(same_kind_neighbors(&sim) > before);
}

#[test]
fn static_front_without_growth_goes_static() {
    let mut p = params(1);
    p.detect_static_agents = true;
    models::configure(ModelKind::StaticFront, &mut p);
    let mut sim = Simulation::new(p).unwrap();
    let fp = models::StaticFrontParams {
        growth_per_step: 0.0,
        ..Default::default()
    };
    models::init_static_front(&mut sim, 400, &fp).unwrap();
    sim.simulate(3).unwrap();
    assert!(sim.rm().agents().all(|a| a.staticness().is_static()));
}

#[test]
fn static_front_activity_stays_near_the_column() {
    let mut p = params(1);
    p.detect_static_agents = true;
    let mut sim = model_sim(ModelKind::StaticFront, 2000, p);
    sim.simulate(30).unwrap();
    let column: Vec<Vec3> = sim.rm().agents().filter(|a| a.kind() == 1).map(|a| a.position()).collect();
    let mut active = 0;
    for a in sim.rm().agents() {
        if !a.staticness().is_static() {
            active += 1;
            let near = column.iter().map(|c| c.distance_squared(a.position())).fold(f64::MAX, f64::min);
            assert!(near.sqrt() < 60.0, "active agent far from the front");
        }
    }
    assert!(active > 0);
    assert!(active < sim.rm().len() / 4);
}

fn static_front_run(detect: bool, n: usize, iterations: u64) -> (Vec<Vec<(u64, [f64; 3], f64)>>, u64) {
    let mut p = params(1);
    p.detect_static_agents = detect;
    let mut sim = model_sim(ModelKind::StaticFront, n, p);
    let mut traj = Vec::new();
    for _ in 0..iterations {
        sim.step().unwrap();
        let mut v: Vec<_> = sim.rm().agents().map(|a| (a.uid().0, a.position().0, a.diameter())).collect();
        v.sort_by_key(|x| x.0);
        traj.push(v);
    }
    (traj, sim.report().counters.force_evals)
}

#[test]
fn static_detection_is_safe_and_saves_work() {
    let (on, evals_on) = static_front_run(true, 1500, 40);
    let (off, evals_off) = static_front_run(false, 1500, 40);
    for (a, b) in on.iter().zip(&off) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.0, y.0);
            for k in 0..3 {
                assert!((x.1[k] - y.1[k]).abs() <= 1e-12);
            }
            assert_eq!(x.2, y.2);
        }
    }
    assert!((evals_on as f64) < 0.3 * evals_off as f64, "{evals_on} vs {evals_off}");
}
