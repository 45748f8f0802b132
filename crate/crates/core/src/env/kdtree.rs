//! Median-split kd-tree baseline, rebuilt from scratch on every update.

use super::{impl_environment, AgentSnapshot, EnvError};
use crate::env::EnvironmentKind;
use crate::exec::WorkerPool;
use crate::geometry::Vec3;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

#[derive(Debug, Default)]
pub struct KdTreeEnvironment {
    pub(crate) snapshot: AgentSnapshot,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTreeEnvironment {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn rebuild(&mut self, _pool: &WorkerPool) -> Result<(), EnvError> {
        let n = self.snapshot.len();
        self.order.clear();
        self.order.extend(0..n as u32);
        self.nodes.clear();
        if n > 0 {
            let mut order = std::mem::take(&mut self.order);
            self.build(&mut order, 0);
            self.order = order;
        }
        Ok(())
    }

    fn build(&mut self, idx: &mut [u32], offset: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if idx.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: offset as u32,
                end: (offset + idx.len()) as u32,
            });
            return id;
        }
        let pos = &self.snapshot.positions;
        let mut lo = pos[idx[0] as usize];
        let mut hi = lo;
        for &i in idx.iter() {
            lo = lo.component_min(pos[i as usize]);
            hi = hi.component_max(pos[i as usize]);
        }
        let ext = hi - lo;
        let axis = (0..3).max_by(|&a, &b| ext[a].total_cmp(&ext[b])).unwrap();
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| pos[a as usize][axis].total_cmp(&pos[b as usize][axis]));
        let value = pos[idx[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, offset);
        let right = self.build(r, offset + mid);
        self.nodes[id as usize] = Node::Split {
            axis: axis as u8,
            value,
            left,
            right,
        };
        id
    }

    pub fn max_squared_radius(&self) -> f64 {
        f64::INFINITY
    }

    fn search<F: FnMut(usize, f64)>(&self, node: u32, c: Vec3, r2: f64, skip: usize, f: &mut F) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let i = i as usize;
                    if i != skip {
                        let d2 = c.distance_squared(self.snapshot.positions[i]);
                        if d2 <= r2 {
                            f(i, d2);
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                // Points equal to the split value may sit on either side.
                let delta = c[axis as usize] - value;
                if delta <= 0.0 || delta * delta <= r2 {
                    self.search(left, c, r2, skip, f);
                }
                if delta >= 0.0 || delta * delta <= r2 {
                    self.search(right, c, r2, skip, f);
                }
            }
        }
    }

    pub fn for_each_neighbor<F: FnMut(usize, f64)>(&self, query: usize, squared_radius: f64, mut f: F) -> Result<(), EnvError> {
        self.snapshot.check_query(query)?;
        let c = self.snapshot.positions[query];
        self.search(0, c, squared_radius, query, &mut f);
        Ok(())
    }

    pub fn for_each_in_radius<F: FnMut(usize, f64)>(&self, point: Vec3, squared_radius: f64, mut f: F) {
        if !self.nodes.is_empty() {
            self.search(0, point, squared_radius, usize::MAX, &mut f);
        }
    }
}

impl_environment!(KdTreeEnvironment, EnvironmentKind::KdTree);
