//! Uniform grid with timestamped boxes and array-based linked lists.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use super::{impl_environment, AgentSnapshot, EnvError};
use crate::env::EnvironmentKind;
use crate::exec::WorkerPool;
use crate::geometry::Vec3;
use crate::params::BoxLengthPolicy;
use crate::util::chunk_range;

const EMPTY: u32 = u32::MAX;
const MAX_BOXES: u128 = 1 << 31;

#[derive(Debug)]
struct GridBox {
    head: AtomicU32,
    count: AtomicU32,
    timestamp: AtomicU64,
}

impl GridBox {
    fn new() -> Self {
        GridBox {
            head: AtomicU32::new(EMPTY),
            count: AtomicU32::new(0),
            timestamp: AtomicU64::new(0),
        }
    }
}

/// The grid index over an [`AgentSnapshot`].
///
/// The box array only ever grows. A box whose timestamp differs from the
/// grid timestamp is empty, so a rebuild touches only the boxes that receive
/// agents.
#[derive(Debug)]
pub struct UniformGrid {
    box_length: f64,
    dims: [usize; 3],
    origin: Vec3,
    boxes: Vec<GridBox>,
    successors: Vec<AtomicU32>,
    agent_box: Vec<AtomicU32>,
    timestamp: u64,
}

impl Default for UniformGrid {
    fn default() -> Self {
        UniformGrid {
            box_length: 1.0,
            dims: [1, 1, 1],
            origin: Vec3::ZERO,
            boxes: Vec::new(),
            successors: Vec::new(),
            agent_box: Vec::new(),
            timestamp: 0,
        }
    }
}

impl UniformGrid {
    /// Rebuilds the index for `snapshot`: sets the geometry, then inserts
    /// every agent into its box list in two parallel passes.
    pub fn build(
        &mut self,
        snapshot: &AgentSnapshot,
        policy: BoxLengthPolicy,
        space_bounds: Option<(Vec3, Vec3)>,
        pool: &WorkerPool,
    ) -> Result<(), EnvError> {
        let n = snapshot.len();
        let max_d = snapshot.max_diameter();
        let mut bl = match policy {
            BoxLengthPolicy::Auto => max_d,
            BoxLengthPolicy::Fixed(v) => v.max(max_d),
        };
        if !(bl > 0.0) {
            bl = 1.0;
        }
        let (mut lo, mut hi) = snapshot.bounds();
        if n == 0 {
            lo = Vec3::ZERO;
            hi = Vec3::ZERO;
        }
        if let Some((blo, bhi)) = space_bounds {
            lo = lo.component_min(blo);
            hi = hi.component_max(bhi);
        }
        let mut dims = [1usize; 3];
        let mut total: u128 = 1;
        for a in 0..3 {
            let extent = ((hi[a] - lo[a]) / bl).floor();
            if !(extent.is_finite() && extent < MAX_BOXES as f64) {
                return Err(EnvError::TooManyBoxes(u128::MAX));
            }
            dims[a] = extent as usize + 1;
            total *= dims[a] as u128;
        }
        if total > MAX_BOXES {
            return Err(EnvError::TooManyBoxes(total));
        }
        let total = total as usize;
        self.box_length = bl;
        self.dims = dims;
        self.origin = lo;
        if self.boxes.len() < total {
            self.boxes.resize_with(total, GridBox::new);
        }
        if self.successors.len() < n {
            self.successors.resize_with(n, || AtomicU32::new(EMPTY));
            self.agent_box.resize_with(n, || AtomicU32::new(0));
        }
        self.timestamp += 1;

        let ts = self.timestamp;
        let threads = pool.thread_count();
        let this = &*self;
        let positions = snapshot.positions();
        pool.broadcast(|w| {
            for g in chunk_range(n, threads, w) {
                let b = this.box_index(this.box_coordinates(positions[g]));
                this.agent_box[g].store(b as u32, Ordering::Relaxed);
                let bx = &this.boxes[b];
                if bx.timestamp.load(Ordering::Relaxed) != ts && bx.timestamp.swap(ts, Ordering::AcqRel) != ts {
                    bx.head.store(EMPTY, Ordering::Relaxed);
                    bx.count.store(0, Ordering::Relaxed);
                }
            }
        });
        pool.broadcast(|w| {
            for g in chunk_range(n, threads, w) {
                let bx = &this.boxes[this.agent_box[g].load(Ordering::Relaxed) as usize];
                let prev = bx.head.swap(g as u32, Ordering::AcqRel);
                this.successors[g].store(prev, Ordering::Relaxed);
                bx.count.fetch_add(1, Ordering::Relaxed);
            }
        });
        Ok(())
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    /// Number of boxes in the current geometry.
    pub fn box_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Boxes allocated so far, including ones outside the current geometry.
    pub fn allocated_boxes(&self) -> usize {
        self.boxes.len()
    }

    /// Box containing `position`, clamped to the grid.
    #[inline]
    pub fn box_coordinates(&self, position: Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let v = ((position[a] - self.origin[a]) / self.box_length).floor();
            c[a] = if v <= 0.0 {
                0
            } else {
                (v as usize).min(self.dims[a] - 1)
            };
        }
        c
    }

    #[inline]
    pub fn box_index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    pub fn box_coordinates_of_index(&self, b: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [b % nx, (b / nx) % ny, b / (nx * ny)]
    }

    /// Whether box `b` was filled by the latest build.
    #[inline]
    pub fn is_current(&self, b: usize) -> bool {
        self.boxes[b].timestamp.load(Ordering::Relaxed) == self.timestamp
    }

    /// Agents in box `b`; zero for stale boxes.
    #[inline]
    pub fn count(&self, b: usize) -> usize {
        if self.is_current(b) {
            self.boxes[b].count.load(Ordering::Relaxed) as usize
        } else {
            0
        }
    }

    /// Flat indices of the agents in box `b`, most recently inserted first.
    pub fn agents_in_box(&self, b: usize) -> BoxIter<'_> {
        let count = self.count(b);
        let next = if count > 0 {
            self.boxes[b].head.load(Ordering::Relaxed)
        } else {
            EMPTY
        };
        BoxIter {
            grid: self,
            next,
            remaining: count,
        }
    }

    /// Box of agent `g` in the latest build.
    #[inline]
    pub fn box_of_agent(&self, g: usize) -> usize {
        self.agent_box[g].load(Ordering::Relaxed) as usize
    }

    #[inline]
    fn visit_box<F: FnMut(usize, f64)>(&self, b: usize, center: Vec3, skip: usize, r2: f64, positions: &[Vec3], f: &mut F) {
        let bx = &self.boxes[b];
        if bx.timestamp.load(Ordering::Relaxed) != self.timestamp {
            return;
        }
        let mut g = bx.head.load(Ordering::Relaxed);
        for _ in 0..bx.count.load(Ordering::Relaxed) {
            let gi = g as usize;
            if gi != skip {
                let d2 = center.distance_squared(positions[gi]);
                if d2 <= r2 {
                    f(gi, d2);
                }
            }
            g = self.successors[gi].load(Ordering::Relaxed);
        }
    }

    /// Scans the 3x3x3 block of boxes around the query's box.
    #[inline]
    pub fn for_each_neighbor<F: FnMut(usize, f64)>(
        &self,
        positions: &[Vec3],
        query: usize,
        squared_radius: f64,
        mut f: F,
    ) -> Result<(), EnvError> {
        let max = self.box_length * self.box_length;
        if squared_radius > max {
            return Err(EnvError::RadiusTooLarge {
                requested: squared_radius,
                max,
            });
        }
        let center = positions[query];
        let [x, y, z] = self.box_coordinates_of_index(self.box_of_agent(query));
        let [nx, ny, nz] = self.dims;
        for zz in z.saturating_sub(1)..(z + 2).min(nz) {
            for yy in y.saturating_sub(1)..(y + 2).min(ny) {
                let row = nx * (yy + ny * zz);
                for xx in x.saturating_sub(1)..(x + 2).min(nx) {
                    self.visit_box(row + xx, center, query, squared_radius, positions, &mut f);
                }
            }
        }
        Ok(())
    }

    /// Visits all agents within the radius of an arbitrary point.
    pub fn for_each_in_radius<F: FnMut(usize, f64)>(&self, positions: &[Vec3], point: Vec3, squared_radius: f64, mut f: F) {
        if positions.is_empty() || !(squared_radius >= 0.0) {
            return;
        }
        let r = squared_radius.sqrt();
        let lo = self.box_coordinates(point - Vec3::new(r, r, r));
        let hi = self.box_coordinates(point + Vec3::new(r, r, r));
        for zz in lo[2]..=hi[2] {
            for yy in lo[1]..=hi[1] {
                for xx in lo[0]..=hi[0] {
                    let b = self.box_index([xx, yy, zz]);
                    self.visit_box(b, point, usize::MAX, squared_radius, positions, &mut f);
                }
            }
        }
    }
}

pub struct BoxIter<'a> {
    grid: &'a UniformGrid,
    next: u32,
    remaining: usize,
}

impl Iterator for BoxIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let g = self.next as usize;
        self.next = self.grid.successors[g].load(Ordering::Relaxed);
        Some(g)
    }
}

/// Uniform-grid environment: snapshot plus grid index.
#[derive(Debug)]
pub struct UniformGridEnvironment {
    pub(crate) snapshot: AgentSnapshot,
    grid: UniformGrid,
    policy: BoxLengthPolicy,
    space_bounds: Option<(Vec3, Vec3)>,
}

impl UniformGridEnvironment {
    pub fn new(policy: BoxLengthPolicy, space_bounds: Option<(Vec3, Vec3)>) -> Self {
        UniformGridEnvironment {
            snapshot: AgentSnapshot::default(),
            grid: UniformGrid::default(),
            policy,
            space_bounds,
        }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn box_length(&self) -> f64 {
        self.grid.box_length
    }

    pub(crate) fn rebuild(&mut self, pool: &WorkerPool) -> Result<(), EnvError> {
        self.grid.build(&self.snapshot, self.policy, self.space_bounds, pool)
    }

    pub fn max_squared_radius(&self) -> f64 {
        self.grid.box_length * self.grid.box_length
    }

    #[inline]
    pub fn for_each_neighbor<F: FnMut(usize, f64)>(&self, query: usize, squared_radius: f64, f: F) -> Result<(), EnvError> {
        self.snapshot.check_query(query)?;
        self.grid.for_each_neighbor(&self.snapshot.positions, query, squared_radius, f)
    }

    #[inline]
    pub fn for_each_in_radius<F: FnMut(usize, f64)>(&self, point: Vec3, squared_radius: f64, f: F) {
        self.grid.for_each_in_radius(&self.snapshot.positions, point, squared_radius, f)
    }
}

impl_environment!(UniformGridEnvironment, EnvironmentKind::UniformGrid);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;

    fn env_with(points: &[[f64; 3]], d: f64, policy: BoxLengthPolicy) -> UniformGridEnvironment {
        let pool = WorkerPool::with_threads(3).unwrap();
        let mut e = UniformGridEnvironment::new(policy, None);
        let pos: Vec<Vec3> = points.iter().map(|&p| Vec3::from(p)).collect();
        e.update_from_points(&pos, &vec![d; pos.len()], &pool).unwrap();
        e
    }

    #[test]
    fn single_agent_single_box() {
        let e = env_with(&[[5.0, 5.0, 5.0]], 10.0, BoxLengthPolicy::Auto);
        let g = e.grid();
        assert_eq!(g.dims(), [1, 1, 1]);
        assert_eq!(g.count(0), 1);
        let mut visits = 0;
        e.for_each_neighbor(0, 100.0, |_, _| visits += 1).unwrap();
        assert_eq!(visits, 0);
    }

    #[test]
    fn distant_agents_land_in_different_boxes() {
        let e = env_with(&[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]], 20.0, BoxLengthPolicy::Auto);
        let g = e.grid();
        assert_ne!(g.box_of_agent(0), g.box_of_agent(1));
        assert_eq!(g.count(g.box_of_agent(0)), 1);
        assert_eq!(g.count(g.box_of_agent(1)), 1);
    }

    #[test]
    fn box_coordinates_floor_and_clamp() {
        let e = env_with(&[[0.0, 0.0, 0.0], [60.0, 60.0, 60.0]], 20.0, BoxLengthPolicy::Auto);
        let g = e.grid();
        assert_eq!(g.dims(), [4, 4, 4]);
        assert_eq!(g.box_coordinates(Vec3::ZERO), [0, 0, 0]);
        assert_eq!(g.box_coordinates(Vec3::new(19.999, 20.0, 39.9)), [0, 1, 1]);
        assert_eq!(g.box_coordinates(Vec3::new(80.0, 80.0, 80.0)), [3, 3, 3]);
        assert_eq!(g.box_coordinates(Vec3::new(-1.0, 0.0, 0.0)), [0, 0, 0]);
    }

    #[test]
    fn boundary_distance_is_inclusive() {
        let e = env_with(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], 10.0, BoxLengthPolicy::Auto);
        let mut seen = vec![];
        e.for_each_neighbor(0, 100.0, |g, _| seen.push(g)).unwrap();
        assert_eq!(seen, vec![1]);
        seen.clear();
        e.for_each_neighbor(1, 100.0, |g, _| seen.push(g)).unwrap();
        assert_eq!(seen, vec![0]);
    }

    #[test]
    fn rejects_radius_beyond_box() {
        let e = env_with(&[[0.0, 0.0, 0.0]], 10.0, BoxLengthPolicy::Auto);
        assert!(matches!(
            e.for_each_neighbor(0, 100.1, |_, _| {}),
            Err(EnvError::RadiusTooLarge { .. })
        ));
    }

    #[test]
    fn stale_boxes_are_ignored_after_shrinking() {
        let pool = WorkerPool::with_threads(2).unwrap();
        let mut e = UniformGridEnvironment::new(BoxLengthPolicy::Fixed(10.0), None);
        let big: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 3.0, 0.0, 0.0)).collect();
        e.update_from_points(&big, &vec![1.0; 50], &pool).unwrap();
        let small = &big[..5];
        e.update_from_points(small, &vec![1.0; 5], &pool).unwrap();
        let g = e.grid();
        let total: usize = (0..g.box_count()).map(|b| g.count(b)).sum();
        assert_eq!(total, 5);
        for q in 0..5 {
            e.for_each_neighbor(q, 100.0, |n, _| assert!(n < 5)).unwrap();
        }
        assert!(g.allocated_boxes() >= g.box_count());
    }

    #[test]
    fn lists_hold_exactly_their_agents() {
        let pts: Vec<[f64; 3]> = (0..200)
            .map(|i| [(i * 37 % 101) as f64, (i * 53 % 89) as f64, (i * 17 % 47) as f64])
            .collect();
        let e = env_with(&pts, 7.0, BoxLengthPolicy::Auto);
        let g = e.grid();
        let mut seen = vec![false; pts.len()];
        for b in 0..g.box_count() {
            let members: Vec<usize> = g.agents_in_box(b).collect();
            assert_eq!(members.len(), g.count(b));
            for m in members {
                assert!(!seen[m]);
                seen[m] = true;
                assert_eq!(g.box_index(g.box_coordinates(e.snapshot().position(m))), b);
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn point_query_handles_large_radius() {
        let pts: Vec<[f64; 3]> = (0..20).map(|i| [i as f64 * 10.0, 0.0, 0.0]).collect();
        let e = env_with(&pts, 5.0, BoxLengthPolicy::Auto);
        let mut n = 0;
        e.for_each_in_radius(Vec3::new(95.0, 0.0, 0.0), 50.0 * 50.0, |_, _| n += 1);
        assert_eq!(n, 10);
    }
}
