//! Exhaustive neighbor scan, used as an oracle.

use super::{impl_environment, AgentSnapshot, EnvError};
use crate::env::EnvironmentKind;
use crate::exec::WorkerPool;
use crate::geometry::Vec3;

#[derive(Debug, Default)]
pub struct BruteForceEnvironment {
    pub(crate) snapshot: AgentSnapshot,
}

impl BruteForceEnvironment {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn rebuild(&mut self, _pool: &WorkerPool) -> Result<(), EnvError> {
        Ok(())
    }

    pub fn max_squared_radius(&self) -> f64 {
        f64::INFINITY
    }

    pub fn for_each_neighbor<F: FnMut(usize, f64)>(&self, query: usize, squared_radius: f64, mut f: F) -> Result<(), EnvError> {
        self.snapshot.check_query(query)?;
        let c = self.snapshot.positions[query];
        for (i, p) in self.snapshot.positions.iter().enumerate() {
            if i != query {
                let d2 = c.distance_squared(*p);
                if d2 <= squared_radius {
                    f(i, d2);
                }
            }
        }
        Ok(())
    }

    pub fn for_each_in_radius<F: FnMut(usize, f64)>(&self, point: Vec3, squared_radius: f64, mut f: F) {
        for (i, p) in self.snapshot.positions.iter().enumerate() {
            let d2 = point.distance_squared(*p);
            if d2 <= squared_radius {
                f(i, d2);
            }
        }
    }
}

impl_environment!(BruteForceEnvironment, EnvironmentKind::BruteForce);
