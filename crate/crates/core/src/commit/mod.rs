//! Parallel commit of staged agent additions and removals.

mod prefix_sum;
mod removal;

use std::ops::Range;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentUid};
use crate::exec::WorkerPool;
use crate::resource_manager::{pack_location, AgentHandle, AgentPtr, ResourceManager};
use crate::util::DisjointSlice;

pub use prefix_sum::{exclusive_prefix_sum, parallel_exclusive_prefix_sum, parallel_exclusive_prefix_sum_in_place};
pub use removal::{commit_removals, RemovalStats, RemovalTrace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommitError {
    #[error("agent {0:?} removed more than once")]
    DuplicateRemoval(AgentHandle),
    #[error("removal handle {0:?} is out of range")]
    OutOfRange(AgentHandle),
    #[error("removal handle {handle:?} is stale (current epoch {current})")]
    Stale { handle: AgentHandle, current: u64 },
    #[error("domain {domain} does not exist ({domains} domains)")]
    NoSuchDomain { domain: usize, domains: usize },
    #[error("{lists} staging lists but {domains} domain assignments")]
    ListMismatch { lists: usize, domains: usize },
}

/// Additions and removals staged by one worker during an iteration.
#[derive(Debug, Default)]
pub struct ThreadLocalDelta {
    pub added: Vec<Agent>,
    pub removed: Vec<AgentHandle>,
}

impl ThreadLocalDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdditionStats {
    pub added: usize,
    /// Index range each staging list was written to, with its domain.
    pub ranges: Vec<(usize, Range<usize>)>,
}

/// Appends the agents of every staging list to the domain given for that
/// list. Each domain grows once; the lists are then written in parallel into
/// disjoint ranges obtained by a prefix sum over the list sizes. Agents
/// without a uid get fresh ones in list order.
pub fn commit_additions(
    rm: &mut ResourceManager,
    pool: &WorkerPool,
    lists: Vec<Vec<Agent>>,
    list_domains: &[usize],
) -> Result<AdditionStats, CommitError> {
    if lists.len() != list_domains.len() {
        return Err(CommitError::ListMismatch {
            lists: lists.len(),
            domains: list_domains.len(),
        });
    }
    let domains = rm.domain_count();
    if let Some(&domain) = list_domains.iter().find(|&&d| d >= domains) {
        return Err(CommitError::NoSuchDomain { domain, domains });
    }
    let total: usize = lists.iter().map(Vec::len).sum();
    let mut cursor = rm.domain_lengths();
    let ranges: Vec<(usize, Range<usize>)> = lists
        .iter()
        .zip(list_domains)
        .map(|(l, &d)| {
            let r = cursor[d]..cursor[d] + l.len();
            cursor[d] = r.end;
            (d, r)
        })
        .collect();
    if total == 0 {
        return Ok(AdditionStats { added: 0, ranges });
    }

    let unassigned: Vec<usize> = lists
        .iter()
        .map(|l| l.iter().filter(|a| !a.uid().is_assigned()).count())
        .collect();
    let (uid_offsets, fresh) = exclusive_prefix_sum(&unassigned);
    if let Some(max) = lists.iter().flatten().filter(|a| a.uid().is_assigned()).map(|a| a.uid().0).max() {
        rm.note_uid(AgentUid(max));
    }
    let uid_base = rm.reserve_uids(fresh);

    for (d, list) in rm.domains.iter_mut().enumerate() {
        list.resize(cursor[d], AgentPtr::dangling());
    }
    let threads = pool.thread_count();
    assert!(threads < rm.thread_slots(), "pool has more workers than allocator slots");
    let lists: Vec<Mutex<Vec<Agent>>> = lists.into_iter().map(Mutex::new).collect();
    let storage = &rm.storage;
    let uid_index = &rm.uid_index;
    let slices: Vec<DisjointSlice<'_, AgentPtr>> = rm.domains.iter_mut().map(|v| DisjointSlice::new(v)).collect();
    pool.broadcast(|w| {
        for l in (w..lists.len()).step_by(threads) {
            let agents = std::mem::take(&mut *lists[l].lock());
            let (d, ref range) = ranges[l];
            let mut next_uid = uid_base + uid_offsets[l] as u64;
            for (j, mut a) in agents.into_iter().enumerate() {
                if !a.uid().is_assigned() {
                    a.set_uid(AgentUid(next_uid));
                    next_uid += 1;
                }
                let uid = a.uid();
                let p = storage
                    .alloc(a, w, d)
                    .unwrap_or_else(|e| panic!("agent allocation failed: {e}"));
                let index = range.start + j;
                // SAFETY: ranges of different lists are disjoint.
                unsafe { slices[d].write(index, p) };
                uid_index[uid.0 as usize].store(pack_location(d, index), std::sync::atomic::Ordering::Relaxed);
            }
        }
    });
    Ok(AdditionStats { added: total, ranges })
}
