use std::collections::HashMap;

use abm_core::env::AnyEnvironment;
use abm_core::exec::{Topology, WorkerPool};
use abm_core::morton::{build_offsets_table, decode_2d, decode_3d, encode_2d, encode_3d, plan_sort, sort_and_balance, MortonCode};
use abm_core::{Agent, AgentHandle, AllocatorKind, BoxLengthPolicy, EnvironmentKind, ResourceManager, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_interleave(coords: &[u64]) -> u64 {
    let d = coords.len() as u64;
    let mut code = 0;
    for bit in 0..(64 / d) {
        for (axis, c) in coords.iter().enumerate() {
            code |= ((c >> bit) & 1) << (d * bit + axis as u64);
        }
    }
    code
}

/// In-grid codes in increasing order, by enumerating every box.
fn brute_force_codes(dims: &[u64]) -> Vec<u64> {
    let mut codes = Vec::new();
    let [nx, ny, nz] = [dims[0], dims[1], *dims.get(2).unwrap_or(&1)];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = if dims.len() == 2 { naive_interleave(&[x, y]) } else { naive_interleave(&[x, y, z]) };
                codes.push(c);
            }
        }
    }
    codes.sort_unstable();
    codes
}

#[test]
fn offsets_table_exhaustive_up_to_nine() {
    for a in 1..=9 {
        for b in 1..=9 {
            let dims = [a, b];
            let t = build_offsets_table(&dims);
            let expect = brute_force_codes(&dims);
            let got: Vec<u64> = (0..t.box_count()).map(|r| t.rank_to_morton(r).unwrap().0).collect();
            assert_eq!(got, expect, "{dims:?}");
            assert_eq!(t.sweep_from(0).map(|c| c.0).collect::<Vec<_>>(), expect);
            for c in 1..=9 {
                let dims = [a, b, c];
                let t = build_offsets_table(&dims);
                let expect = brute_force_codes(&dims);
                let got: Vec<u64> = (0..t.box_count()).map(|r| t.rank_to_morton(r).unwrap().0).collect();
                assert_eq!(got, expect, "{dims:?}");
                let mid = t.box_count() / 2;
                assert_eq!(t.sweep_from(mid).map(|c| c.0).collect::<Vec<_>>(), expect[mid as usize..]);
            }
        }
    }
}

#[test]
fn three_by_three_gaps() {
    let t = build_offsets_table(&[3, 3]);
    let codes: Vec<u64> = t.sweep_from(0).map(|c| c.0).collect();
    assert_eq!(codes, [0, 1, 2, 3, 4, 6, 8, 9, 12]);
    let jumps: Vec<(u64, u64)> = codes.windows(2).filter(|w| w[1] > w[0] + 1).map(|w| (w[0], w[1])).collect();
    assert_eq!(jumps, [(4, 6), (6, 8), (9, 12)]);
    assert_eq!(t.entries(), &[(0, 0), (5, 1), (6, 2), (8, 4)]);
    assert!(t.rank_to_morton(9).is_err());
}

proptest! {
    #[test]
    fn codes_roundtrip(x in 0u64..1 << 21, y in 0u64..1 << 21, z in 0u64..1 << 21) {
        let c = encode_3d([x, y, z]).unwrap();
        prop_assert_eq!(c, MortonCode(naive_interleave(&[x, y, z])));
        prop_assert_eq!(decode_3d(c), [x, y, z]);
        let c2 = encode_2d([x, y]).unwrap();
        prop_assert_eq!(decode_2d(c2), [x, y]);
    }
}

#[test]
fn coordinates_beyond_bit_budget_are_rejected() {
    assert!(encode_3d([1 << 21, 0, 0]).is_err());
    assert!(encode_2d([0, 1 << 31]).is_err());
}

fn scattered_manager(n: usize, domains: usize, threads: usize, seed: u64) -> ResourceManager {
    let mut rm = ResourceManager::new(domains, threads, AllocatorKind::Pool, Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let p = Vec3::new(rng.random_range(0.0..200.0), rng.random_range(0.0..150.0), rng.random_range(0.0..90.0));
        rm.push_back(Agent::new(p, rng.random_range(2.0..8.0))).unwrap();
    }
    rm
}

fn check_sort(layout: Vec<usize>, n: usize, keep_old: bool, seed: u64) {
    let domains = layout.len();
    let topo = Topology::with_layout(layout.clone());
    let pool = WorkerPool::new(topo.clone()).unwrap();
    let mut rm = scattered_manager(n, domains, topo.thread_count(), seed);
    let before: HashMap<u64, (Vec3, f64)> = rm.agents().map(|a| (a.uid().0, (a.position(), a.diameter()))).collect();
    let mut env = AnyEnvironment::new(EnvironmentKind::UniformGrid, BoxLengthPolicy::Auto, None);
    env.update(&rm, &pool).unwrap();
    let grid_env = env.grid().unwrap();
    let plan = plan_sort(grid_env, &topo, &pool).unwrap();
    let max_box = plan.counts.iter().copied().max().unwrap_or(0);
    let stats = sort_and_balance(&mut rm, grid_env, &pool, keep_old).unwrap();
    assert_eq!(stats.agents, n);

    // Same agents, same state.
    let after: HashMap<u64, (Vec3, f64)> = rm.agents().map(|a| (a.uid().0, (a.position(), a.diameter()))).collect();
    assert_eq!(before, after);
    assert_eq!(rm.len(), n);
    for u in rm.uids() {
        assert_eq!(rm.get(rm.handle_of(u).unwrap()).unwrap().uid(), u);
    }
    let ps = rm.pool_stats().unwrap();
    assert!(ps.conserved());
    assert_eq!(ps.live_count() as usize, n);

    // Morton order of boxes, continuing across domains.
    let grid = grid_env.grid();
    let e = rm.epoch();
    let mut last = 0u64;
    for d in 0..domains {
        for i in 0..rm.domain_len(d) {
            let c = grid.box_coordinates(rm.get(AgentHandle::new(d, i, e)).unwrap().position());
            let code = encode_3d(c.map(|v| v as u64)).unwrap().0;
            assert!(code >= last, "domain {d} index {i}");
            last = code;
        }
    }

    // Shares proportional to threads, within one box's population.
    let total: usize = layout.iter().sum();
    let mut cum = 0;
    let mut start = 0;
    for d in 0..domains {
        cum += layout[d];
        let target = n * cum / total;
        let end = start + rm.domain_len(d);
        assert!(end + max_box >= target && end <= target + max_box, "domain {d}: end {end} target {target}");
        start = end;
    }
}

#[test]
fn sort_and_balance_two_domains() {
    check_sort(vec![2, 1], 5000, false, 1);
    check_sort(vec![1, 1], 3000, true, 2);
    check_sort(vec![3, 1, 2], 4000, false, 3);
    check_sort(vec![1], 100, false, 4);
}

#[test]
fn sort_rejects_stale_environment() {
    let topo = Topology::single_domain(1);
    let pool = WorkerPool::new(topo).unwrap();
    let mut rm = scattered_manager(50, 1, 1, 9);
    let mut env = AnyEnvironment::new(EnvironmentKind::UniformGrid, BoxLengthPolicy::Auto, None);
    env.update(&rm, &pool).unwrap();
    rm.push_back(Agent::new(Vec3::ZERO, 1.0)).unwrap();
    assert!(sort_and_balance(&mut rm, env.grid().unwrap(), &pool, false).is_err());
}

#[test]
fn sorting_inside_a_simulation_keeps_results() {
    use abm_core::models::{self, ModelKind};
    let run = |sf: u64| {
        let mut p = abm_core::SimulationParams {
            threads: Some(1),
            domains: Some(1),
            sorting_frequency: sf,
            ..Default::default()
        };
        models::configure(ModelKind::Clustering, &mut p);
        let mut sim = abm_core::Simulation::new(p).unwrap();
        models::init(ModelKind::Clustering, &mut sim, 3000).unwrap();
        sim.simulate(6).unwrap();
        let sorts = sim.report().counters.sorts;
        let pos: HashMap<u64, Vec3> = sim.rm().agents().map(|a| (a.uid().0, a.position())).collect();
        (pos, sorts)
    };
    let (a, s0) = run(0);
    let (b, s2) = run(2);
    assert_eq!(s0, 0);
    assert_eq!(s2, 3);
    for (u, p) in &a {
        assert!((*p - b[u]).norm() < 1e-9);
    }
}
