//! Reordering agents along the Morton curve and splitting them across
//! memory domains in proportion to each domain's worker count.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{build_offsets_table, decode_3d, MortonError, MAX_COORD_3D};
use crate::commit::parallel_exclusive_prefix_sum;
use crate::env::{Environment, UniformGridEnvironment};
use crate::exec::{Topology, WorkerPool};
use crate::resource_manager::{pack_location, AgentPtr, ResourceManager};
use crate::util::{chunk_range, DisjointSlice};
use std::sync::atomic::Ordering;

/// Where every agent goes: the grid boxes in Morton order, their agent
/// counts and start offsets, and the slice of the sorted sequence assigned
/// to each domain and each worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortPlan {
    /// Flat grid box index for each Morton rank.
    pub box_order: Vec<usize>,
    pub counts: Vec<usize>,
    /// Exclusive prefix sum of `counts`.
    pub prefix: Vec<usize>,
    pub domain_ranges: Vec<Range<usize>>,
    pub worker_ranges: Vec<Range<usize>>,
}

impl SortPlan {
    pub fn agent_count(&self) -> usize {
        self.domain_ranges.last().map_or(0, |r| r.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortStats {
    pub agents: usize,
    pub boxes: usize,
    pub domain_sizes: Vec<usize>,
    /// Agents whose memory domain changed.
    pub migrated: usize,
}

/// Computes the sorted layout for the agents indexed by `env`.
pub fn plan_sort(env: &UniformGridEnvironment, topology: &Topology, pool: &WorkerPool) -> Result<SortPlan, MortonError> {
    let grid = env.grid();
    let dims = grid.dims();
    for (axis, &d) in dims.iter().enumerate() {
        if d as u64 > MAX_COORD_3D {
            return Err(MortonError::CoordinateOutOfRange {
                axis,
                value: d as u64 - 1,
                bits: 21,
            });
        }
    }
    let table = build_offsets_table(&dims.map(|d| d as u64));
    let boxes = table.box_count() as usize;
    debug_assert_eq!(boxes, grid.box_count());

    let mut box_order = vec![0usize; boxes];
    let mut counts = vec![0usize; boxes];
    {
        let order = DisjointSlice::new(&mut box_order);
        let cnt = DisjointSlice::new(&mut counts);
        let threads = pool.thread_count();
        pool.broadcast(|w| {
            let ranks = chunk_range(boxes, threads, w);
            let codes = table.sweep_from(ranks.start as u64);
            for (r, code) in ranks.zip(codes) {
                let c = decode_3d(code);
                let b = grid.box_index([c[0] as usize, c[1] as usize, c[2] as usize]);
                // SAFETY: each rank is written by one worker.
                unsafe {
                    order.write(r, b);
                    cnt.write(r, grid.count(b));
                }
            }
        });
    }
    let prefix = parallel_exclusive_prefix_sum(pool, &counts);
    let n = env.snapshot().len();

    let tpd = topology.threads_per_domain();
    let total_threads: usize = tpd.iter().sum();
    let mut domain_ranges = Vec::with_capacity(tpd.len());
    let mut start = 0usize;
    let mut cum = 0usize;
    for (d, &t) in tpd.iter().enumerate() {
        cum += t;
        let end = if d + 1 == tpd.len() {
            n
        } else {
            let target = (n as u128 * cum as u128 / total_threads as u128) as usize;
            // Advance to the next box edge so no box is split between
            // domains.
            let r = prefix.partition_point(|&p| p < target);
            prefix.get(r).copied().unwrap_or(n).max(start)
        };
        domain_ranges.push(start..end);
        start = end;
    }
    let mut worker_ranges = Vec::with_capacity(total_threads);
    for (d, &t) in tpd.iter().enumerate() {
        let r = &domain_ranges[d];
        for j in 0..t {
            let c = chunk_range(r.len(), t, j);
            worker_ranges.push(r.start + c.start..r.start + c.end);
        }
    }
    Ok(SortPlan {
        box_order,
        counts,
        prefix,
        domain_ranges,
        worker_ranges,
    })
}

/// Rebuilds every domain's agent sequence in Morton order of the grid
/// boxes, moving each agent record into memory of its new domain.
///
/// With `keep_old` the old records stay allocated until all workers have
/// copied, trading peak memory for not interleaving frees with copies.
pub fn sort_and_balance(
    rm: &mut ResourceManager,
    env: &UniformGridEnvironment,
    pool: &WorkerPool,
    keep_old: bool,
) -> Result<SortStats, MortonError> {
    let snapshot = env.snapshot();
    if snapshot.len() != rm.len() || snapshot.epoch() != rm.epoch() || !snapshot.has_agents() {
        return Err(MortonError::StaleGrid {
            indexed: snapshot.len(),
            grid_epoch: snapshot.epoch(),
            agents: rm.len(),
            epoch: rm.epoch(),
        });
    }
    let topology = pool.topology();
    assert_eq!(
        topology.domain_count(),
        rm.domain_count(),
        "pool and resource manager disagree on the domain count"
    );
    let plan = plan_sort(env, topology, pool)?;
    let grid = env.grid();
    let mut new_domains: Vec<Vec<AgentPtr>> = plan
        .domain_ranges
        .iter()
        .map(|r| vec![AgentPtr::dangling(); r.len()])
        .collect();
    let old_offsets = snapshot.domain_offsets();
    let migrated = {
        let slices: Vec<DisjointSlice<'_, AgentPtr>> = new_domains.iter_mut().map(|v| DisjointSlice::new(v)).collect();
        let storage = &rm.storage;
        let uid_index = &rm.uid_index;
        let plan = &plan;
        pool.broadcast(|w| {
            let range = plan.worker_ranges[w].clone();
            if range.is_empty() {
                return 0usize;
            }
            let d = topology.domain_of_worker(w);
            let base = plan.domain_ranges[d].start;
            let mut rank = plan.prefix.partition_point(|&p| p <= range.start) - 1;
            let mut members = grid.agents_in_box(plan.box_order[rank]);
            let mut left = plan.counts[rank];
            for _ in 0..range.start - plan.prefix[rank] {
                members.next();
                left -= 1;
            }
            let mut migrated = 0;
            for pos in range {
                while left == 0 {
                    rank += 1;
                    members = grid.agents_in_box(plan.box_order[rank]);
                    left = plan.counts[rank];
                }
                let g = members.next().expect("box list shorter than its count");
                left -= 1;
                let old = snapshot.ptrs[g];
                if old_offsets.partition_point(|&o| o <= g) - 1 != d {
                    migrated += 1;
                }
                // SAFETY: each agent appears in exactly one box list, so it
                // is relocated exactly once.
                let new = unsafe { storage.relocate(old, w, d, keep_old) }
                    .unwrap_or_else(|e| panic!("agent allocation failed: {e}"));
                let uid = unsafe { new.get() }.uid();
                unsafe { slices[d].write(pos - base, new) };
                uid_index[uid.0 as usize].store(pack_location(d, pos - base), Ordering::Relaxed);
            }
            migrated
        })
        .into_iter()
        .sum()
    };
    if keep_old {
        let storage = &rm.storage;
        let ptrs = &snapshot.ptrs;
        let threads = pool.thread_count();
        pool.broadcast(|w| {
            for i in chunk_range(ptrs.len(), threads, w) {
                // SAFETY: the value was moved out above; only memory remains.
                unsafe { storage.dealloc_raw(ptrs[i], w) };
            }
        });
    }
    rm.domains = new_domains;
    rm.epoch += 1;
    Ok(SortStats {
        agents: plan.agent_count(),
        boxes: plan.box_order.len(),
        domain_sizes: plan.domain_ranges.iter().map(|r| r.len()).collect(),
        migrated,
    })
}
