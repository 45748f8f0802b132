//! Parallel removal by swapping survivors from the tail into holes.
//!
//! For a domain of `old` agents losing `r` of them, the survivors must end
//! up in `0..new` with `new = old - r`. Holes below `new` are filled with
//! survivors from `new..old`; both sets have the same size. Everything runs
//! in O(r) time and space.

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{exclusive_prefix_sum, CommitError};
use crate::agent::Agent;
use crate::exec::WorkerPool;
use crate::resource_manager::{AgentHandle, AgentPtr, ResourceManager};
use crate::util::{chunk_range, DisjointSlice};

const SENTINEL: usize = usize::MAX;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalStats {
    pub removed: usize,
    pub swaps: usize,
    /// Elements allocated for auxiliary arrays.
    pub aux_elements: usize,
    /// Per-domain intermediate arrays, when requested.
    pub traces: Vec<RemovalTrace>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalTrace {
    pub domain: usize,
    pub old_size: usize,
    pub new_size: usize,
    /// `to_right` after marking, sentinels included.
    pub to_right_marked: Vec<usize>,
    pub not_to_left: Vec<usize>,
    /// Compacted holes below the new size, in pairing order.
    pub to_right: Vec<usize>,
    /// Compacted survivors above the new size, in pairing order.
    pub to_left: Vec<usize>,
}

struct DomainJob {
    domain: usize,
    old: usize,
    new: usize,
    to_right: Vec<AtomicUsize>,
    not_to_left: Vec<AtomicUsize>,
    captured: Vec<AtomicPtr<Agent>>,
}

impl DomainJob {
    fn r(&self) -> usize {
        self.to_right.len()
    }
}

/// Removes the agents named in `lists` (one list per staging thread).
///
/// All handles are validated before anything moves; on error the resource
/// manager is left untouched.
pub fn commit_removals(
    rm: &mut ResourceManager,
    pool: &WorkerPool,
    lists: &[Vec<AgentHandle>],
    trace: bool,
) -> Result<RemovalStats, CommitError> {
    let threads = pool.thread_count();
    assert!(threads < rm.thread_slots(), "pool has more workers than allocator slots");
    let domains = rm.domain_count();
    let epoch = rm.epoch();

    // Step 1: per-list counts per domain, totals, auxiliary arrays.
    let counts: Vec<Vec<usize>> = lists
        .iter()
        .map(|l| {
            let mut c = vec![0usize; domains];
            for h in l {
                if h.domain() < domains {
                    c[h.domain()] += 1;
                }
            }
            c
        })
        .collect();
    for l in lists {
        if let Some(h) = l.iter().find(|h| h.domain() >= domains) {
            return Err(CommitError::OutOfRange(*h));
        }
    }
    let mut jobs = Vec::new();
    let mut offsets = Vec::new();
    for d in 0..domains {
        let per_list: Vec<usize> = counts.iter().map(|c| c[d]).collect();
        let (off, r) = exclusive_prefix_sum(&per_list);
        if r == 0 {
            continue;
        }
        let old = rm.domain_len(d);
        jobs.push(DomainJob {
            domain: d,
            old,
            new: old.saturating_sub(r),
            to_right: (0..r).map(|_| AtomicUsize::new(SENTINEL)).collect(),
            not_to_left: (0..r).map(|_| AtomicUsize::new(0)).collect(),
            captured: (0..r).map(|_| AtomicPtr::new(ptr::null_mut())).collect(),
        });
        offsets.push(off);
    }
    if jobs.is_empty() {
        return Ok(RemovalStats::default());
    }

    // Step 2: mark. Each list owns the slice of the auxiliary arrays given
    // by the prefix sum over list counts.
    let error: Mutex<Option<CommitError>> = Mutex::new(None);
    {
        let rm_ref = &*rm;
        pool.broadcast(|w| {
            for l in (w..lists.len()).step_by(threads) {
                for (job, off) in jobs.iter().zip(&offsets) {
                    let base = off[l];
                    let mut k = 0;
                    let mut below = 0;
                    for h in lists[l].iter().filter(|h| h.domain() == job.domain) {
                        let slot = base + k;
                        k += 1;
                        let fail = if h.epoch() != epoch {
                            Some(CommitError::Stale { handle: *h, current: epoch })
                        } else if h.index() >= job.old {
                            Some(CommitError::OutOfRange(*h))
                        } else {
                            None
                        };
                        if let Some(e) = fail {
                            error.lock().get_or_insert(e);
                            continue;
                        }
                        let p = rm_ref.ptr(job.domain, h.index());
                        // SAFETY: the agent is alive; the flag is atomic.
                        if unsafe { p.get() }.removal_mark.swap(true, Ordering::AcqRel) {
                            error.lock().get_or_insert(CommitError::DuplicateRemoval(*h));
                            continue;
                        }
                        job.captured[slot].store(p.as_ptr(), Ordering::Relaxed);
                        if h.index() < job.new {
                            job.to_right[base + below].store(h.index(), Ordering::Relaxed);
                            below += 1;
                        } else {
                            job.not_to_left[h.index() - job.new].store(1, Ordering::Relaxed);
                        }
                    }
                }
            }
        });
    }
    if let Some(e) = error.into_inner() {
        for job in &jobs {
            for c in &job.captured {
                let p = c.load(Ordering::Relaxed);
                if !p.is_null() {
                    // SAFETY: captured pointers are live agents.
                    unsafe { (*p).removal_mark.store(false, Ordering::Relaxed) };
                }
            }
        }
        return Err(e);
    }

    let mut stats = RemovalStats::default();
    for job in &jobs {
        let r = job.r();
        stats.removed += r;
        stats.aux_elements += 3 * r;
        let mut tr = trace.then(|| RemovalTrace {
            domain: job.domain,
            old_size: job.old,
            new_size: job.new,
            to_right_marked: job.to_right.iter().map(|v| v.load(Ordering::Relaxed)).collect(),
            not_to_left: job.not_to_left.iter().map(|v| v.load(Ordering::Relaxed)).collect(),
            ..Default::default()
        });

        // Step 3: compact each block in place; survivors' flags turn into
        // their source indices.
        let block_counts = pool.broadcast(|w| {
            let block = chunk_range(r, threads, w);
            let mut right = block.start;
            let mut left = block.start;
            for p in block.clone() {
                let v = job.to_right[p].load(Ordering::Relaxed);
                if v != SENTINEL {
                    job.to_right[right].store(v, Ordering::Relaxed);
                    right += 1;
                }
                if job.not_to_left[p].load(Ordering::Relaxed) == 0 {
                    job.not_to_left[left].store(p + job.new, Ordering::Relaxed);
                    left += 1;
                }
            }
            (right - block.start, left - block.start)
        });
        let right_counts: Vec<usize> = block_counts.iter().map(|c| c.0).collect();
        let left_counts: Vec<usize> = block_counts.iter().map(|c| c.1).collect();

        // Step 4: pair the i-th hole with the i-th survivor.
        let (right_prefix, swaps) = exclusive_prefix_sum(&right_counts);
        let (left_prefix, left_total) = exclusive_prefix_sum(&left_counts);
        debug_assert_eq!(swaps, left_total, "hole and survivor counts differ");
        stats.swaps += swaps;
        if let Some(t) = tr.as_mut() {
            for b in 0..threads {
                let s = chunk_range(r, threads, b).start;
                t.to_right.extend((s..s + right_counts[b]).map(|p| job.to_right[p].load(Ordering::Relaxed)));
                t.to_left.extend((s..s + left_counts[b]).map(|p| job.not_to_left[p].load(Ordering::Relaxed)));
            }
        }
        {
            let uid_index = &rm.uid_index;
            let slots = DisjointSlice::new(&mut rm.domains[job.domain]);
            pool.broadcast(|w| {
                let mine = chunk_range(swaps, threads, w);
                if mine.is_empty() {
                    return;
                }
                let mut rc = Cursor::new(&right_prefix, &right_counts, r, threads, mine.start);
                let mut lc = Cursor::new(&left_prefix, &left_counts, r, threads, mine.start);
                for _ in mine {
                    let dest = job.to_right[rc.next()].load(Ordering::Relaxed);
                    let src = job.not_to_left[lc.next()].load(Ordering::Relaxed);
                    // SAFETY: destinations are distinct holes below the new
                    // size, sources distinct survivors above it.
                    unsafe {
                        let p: AgentPtr = *slots.read(src);
                        slots.write(dest, p);
                        let uid = p.get().uid();
                        uid_index[uid.0 as usize].store(
                            crate::resource_manager::pack_location(job.domain, dest),
                            Ordering::Relaxed,
                        );
                    }
                }
            });
        }

        // Step 5: release removed agents and shrink.
        {
            let rm_ref = &*rm;
            pool.broadcast(|w| {
                for i in chunk_range(r, threads, w) {
                    let p = job.captured[i].load(Ordering::Relaxed);
                    // SAFETY: every captured pointer is a distinct live
                    // agent now unlinked from the domain.
                    unsafe {
                        rm_ref.clear_location((*p).uid());
                        rm_ref.storage.free(AgentPtr::from_raw(p), w);
                    }
                }
            });
        }
        rm.domains[job.domain].truncate(job.new);
        if let Some(t) = tr {
            stats.traces.push(t);
        }
    }
    rm.epoch += 1;
    Ok(stats)
}

/// Walks the compacted entries of the blocked auxiliary arrays in global
/// pairing order.
struct Cursor<'a> {
    counts: &'a [usize],
    len: usize,
    blocks: usize,
    block: usize,
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn new(prefix: &'a [usize], counts: &'a [usize], len: usize, blocks: usize, i: usize) -> Self {
        let block = prefix.partition_point(|&p| p <= i) - 1;
        let start = chunk_range(len, blocks, block).start;
        Cursor {
            counts,
            len,
            blocks,
            block,
            pos: start + (i - prefix[block]),
            end: start + counts[block],
        }
    }

    #[inline]
    fn next(&mut self) -> usize {
        while self.pos >= self.end {
            self.block += 1;
            let start = chunk_range(self.len, self.blocks, self.block).start;
            self.pos = start;
            self.end = start + self.counts[self.block];
        }
        let p = self.pos;
        self.pos += 1;
        p
    }
}
