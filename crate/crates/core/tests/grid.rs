use abm_core::env::{AnyEnvironment, EnvError, UniformGridEnvironment};
use abm_core::exec::WorkerPool;
use abm_core::{Agent, BoxLengthPolicy, Environment, EnvironmentKind, ResourceManager, Vec3};
use proptest::prelude::*;

/// Every unordered pair within the radius, by exhaustive scan.
fn oracle(points: &[Vec3], r2: f64) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            (0..points.len())
                .filter(|&j| j != i && points[i].distance_squared(points[j]) <= r2)
                .collect()
        })
        .collect()
}

fn neighbor_sets(env: &dyn Environment, n: usize, r2: f64) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut v = Vec::new();
            env.for_each_neighbor_dyn(i, r2, &mut |j, _| v.push(j)).unwrap();
            v.sort_unstable();
            v
        })
        .collect()
}

fn points_strategy() -> impl Strategy<Value = (Vec<Vec3>, Vec<f64>)> {
    (1usize..400, 1.0f64..300.0).prop_flat_map(|(n, extent)| {
        (
            prop::collection::vec(
                (0.0..extent, 0.0..extent, 0.0..extent).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
                n,
            ),
            prop::collection::vec(0.5f64..12.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_and_kdtree_match_exhaustive_scan((points, diameters) in points_strategy(), frac in 0.0f64..=1.0, threads in 1usize..4) {
        let pool = WorkerPool::with_threads(threads).unwrap();
        for kind in [EnvironmentKind::UniformGrid, EnvironmentKind::KdTree, EnvironmentKind::BruteForce] {
            let mut env = AnyEnvironment::new(kind, BoxLengthPolicy::Auto, None);
            env.as_dyn_mut().update_from_points(&points, &diameters, &pool).unwrap();
            let r2 = env.max_squared_radius().min(1e6) * frac;
            prop_assert_eq!(neighbor_sets(env.as_dyn(), points.len(), r2), oracle(&points, r2));
        }
    }

    #[test]
    fn point_queries_match_exhaustive_scan((points, diameters) in points_strategy(), q in (-20.0f64..320.0, -20.0f64..320.0, -20.0f64..320.0), r in 0.0f64..80.0) {
        let pool = WorkerPool::with_threads(2).unwrap();
        let q = Vec3::new(q.0, q.1, q.2);
        let mut expect: Vec<usize> = (0..points.len()).filter(|&j| points[j].distance_squared(q) <= r * r).collect();
        expect.sort_unstable();
        for kind in [EnvironmentKind::UniformGrid, EnvironmentKind::KdTree] {
            let mut env = AnyEnvironment::new(kind, BoxLengthPolicy::Auto, None);
            env.as_dyn_mut().update_from_points(&points, &diameters, &pool).unwrap();
            let mut got = Vec::new();
            env.for_each_in_radius(q, r * r, |j, _| got.push(j));
            got.sort_unstable();
            prop_assert_eq!(&got, &expect);
        }
    }
}

#[test]
fn fixed_box_length_never_shrinks_below_largest_agent() {
    let pool = WorkerPool::with_threads(1).unwrap();
    let mut env = UniformGridEnvironment::new(BoxLengthPolicy::Fixed(3.0), None);
    env.update_from_points(&[Vec3::ZERO, Vec3::new(30.0, 0.0, 0.0)], &[8.0, 2.0], &pool)
        .unwrap();
    assert_eq!(env.box_length(), 8.0);
    assert_eq!(env.grid().dims(), [4, 1, 1]);
    let mut env = UniformGridEnvironment::new(BoxLengthPolicy::Fixed(15.0), None);
    env.update_from_points(&[Vec3::ZERO, Vec3::new(30.0, 0.0, 0.0)], &[8.0, 2.0], &pool)
        .unwrap();
    assert_eq!(env.box_length(), 15.0);
    assert_eq!(env.grid().dims(), [3, 1, 1]);
}

#[test]
fn space_bounds_pad_the_grid_without_changing_answers() {
    let pool = WorkerPool::with_threads(2).unwrap();
    let points: Vec<Vec3> = (0..200).map(|i| Vec3::new((i % 10) as f64 * 4.0, (i / 10) as f64 * 3.0, 1.0)).collect();
    let diameters = vec![5.0; points.len()];
    let mut tight = UniformGridEnvironment::new(BoxLengthPolicy::Auto, None);
    tight.update_from_points(&points, &diameters, &pool).unwrap();
    let bounds = (Vec3::new(-100.0, -100.0, -100.0), Vec3::new(200.0, 200.0, 200.0));
    let mut padded = UniformGridEnvironment::new(BoxLengthPolicy::Auto, Some(bounds));
    padded.update_from_points(&points, &diameters, &pool).unwrap();
    assert!(padded.grid().box_count() > 100 * tight.grid().box_count());
    assert_eq!(neighbor_sets(&tight, 200, 25.0), neighbor_sets(&padded, 200, 25.0));
}

#[test]
fn radius_above_box_length_is_rejected() {
    let pool = WorkerPool::with_threads(1).unwrap();
    let mut env = UniformGridEnvironment::new(BoxLengthPolicy::Auto, None);
    env.update_from_points(&[Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], &[2.0, 2.0], &pool)
        .unwrap();
    assert!(matches!(
        env.for_each_neighbor(0, 4.5, |_, _| {}),
        Err(EnvError::RadiusTooLarge { .. })
    ));
    assert!(matches!(
        env.for_each_neighbor(2, 1.0, |_, _| {}),
        Err(EnvError::QueryOutOfRange { index: 2, len: 2 })
    ));
}

#[test]
fn update_from_resource_manager_uses_flat_indices() {
    let pool = WorkerPool::with_threads(2).unwrap();
    let mut rm = ResourceManager::new(2, 2, abm_core::AllocatorKind::Pool, Default::default()).unwrap();
    for i in 0..50 {
        rm.push_back(Agent::new(Vec3::new(i as f64, 0.0, 0.0), 1.5)).unwrap();
    }
    let mut env = AnyEnvironment::new(EnvironmentKind::UniformGrid, BoxLengthPolicy::Auto, None);
    env.update(&rm, &pool).unwrap();
    let snap = env.snapshot();
    assert_eq!(snap.len(), 50);
    rm.for_each(|h, a| {
        let g = snap.flat_index(h.domain(), h.index());
        assert_eq!(snap.uid(g), a.uid());
        assert_eq!(snap.position(g), a.position());
    });
    // Neighbors at distance 1 on a line.
    let g = snap.flat_index(0, 3);
    let mut n = Vec::new();
    env.for_each_neighbor(g, 1.0, |j, _| n.push(snap.uid(j).0)).unwrap();
    n.sort();
    let me = snap.uid(g).0;
    assert_eq!(n, vec![me - 1, me + 1]);
}

#[test]
fn empty_environment() {
    let pool = WorkerPool::with_threads(1).unwrap();
    let mut env = UniformGridEnvironment::new(BoxLengthPolicy::Auto, None);
    env.update_from_points(&[], &[], &pool).unwrap();
    assert!(env.for_each_neighbor(0, 1.0, |_, _| {}).is_err());
    let mut hits = 0;
    env.for_each_in_radius(Vec3::ZERO, 100.0, |_, _| hits += 1);
    assert_eq!(hits, 0);
}
