//! Topology-aware parallel iteration.
//!
//! Every domain's agent sequence is cut into equal-sized blocks, the blocks of
//! a domain are dealt out to that domain's workers, and idle workers steal
//! unclaimed blocks first from siblings in their own domain and only then from
//! other domains. Each block carries an atomic claim flag, so a block runs
//! exactly once no matter who ends up executing it.

mod topology;

use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::chunk_range;

pub use topology::{
    detect_topology, Topology, TopologySource, DOMAINS_ENV_VAR, THREADS_ENV_VAR,
};

pub const DEFAULT_BLOCK_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("failed to start worker pool: {0}")]
    PoolBuild(String),
}

/// Fixed set of workers, created once and quiescent between parallel regions.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    topology: Topology,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool")
            .field("topology", &self.topology)
            .finish()
    }
}

impl WorkerPool {
    pub fn new(topology: Topology) -> Result<Self, ExecError> {
        let threads = topology.thread_count();
        let pin = topology.source() == TopologySource::OsIntrospection
            && topology.domain_count() > 1;
        let affinity: Vec<Vec<usize>> = (0..threads)
            .map(|w| {
                if pin {
                    topology.cpus_of_domain(topology.domain_of_worker(w)).to_vec()
                } else {
                    Vec::new()
                }
            })
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("abm-worker-{i}"))
            .start_handler(move |i| bind_to_cpus(&affinity[i]))
            .build()
            .map_err(|e| ExecError::PoolBuild(e.to_string()))?;
        Ok(WorkerPool { pool, topology })
    }

    pub fn with_threads(threads: usize) -> Result<Self, ExecError> {
        Self::new(Topology::single_domain(threads))
    }

    pub fn thread_count(&self) -> usize {
        self.topology.thread_count()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Runs `f(worker_index)` once on every worker and waits for all of them.
    pub fn broadcast<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        self.pool.broadcast(|ctx| f(ctx.index()))
    }

    /// Runs `f` over every block of every domain exactly once, with
    /// two-level work stealing.
    pub fn for_each_block<F>(
        &self,
        domain_lengths: &[usize],
        block_size: usize,
        record_claims: bool,
        f: F,
    ) -> BlockLoopReport
    where
        F: Fn(BlockTask) + Sync,
    {
        let partition = BlockPartition::new(domain_lengths, block_size, &self.topology);
        let claims: Vec<AtomicBool> = (0..partition.blocks.len())
            .map(|_| AtomicBool::new(false))
            .collect();
        let clock = AtomicU64::new(0);

        let per_worker = self.broadcast(|worker| {
            let mut stats = LoopStats::default();
            let mut log = Vec::new();
            let mut run = |block: usize, kind: ClaimKind| {
                if claims[block].swap(true, Ordering::AcqRel) {
                    return;
                }
                if record_claims {
                    log.push(ClaimRecord {
                        block,
                        worker,
                        kind,
                        seq: clock.fetch_add(1, Ordering::SeqCst),
                    });
                }
                match kind {
                    ClaimKind::Own => stats.own_blocks += 1,
                    ClaimKind::SameDomain => stats.same_domain_steals += 1,
                    ClaimKind::CrossDomain => stats.cross_domain_steals += 1,
                }
                let b = &partition.blocks[block];
                f(BlockTask {
                    worker,
                    domain: b.domain,
                    range: b.start..b.end,
                    kind,
                });
            };

            let domain = self.topology.domain_of_worker(worker);
            for block in partition.assigned[worker].clone() {
                run(block, ClaimKind::Own);
            }
            // Siblings, starting after ourselves so thieves spread out.
            let siblings = self.topology.workers_of_domain(domain);
            let n_sib = siblings.len();
            let me = worker - siblings.start;
            for k in 1..n_sib {
                let victim = siblings.start + (me + k) % n_sib;
                for block in partition.assigned[victim].clone().rev() {
                    run(block, ClaimKind::SameDomain);
                }
            }
            let domains = self.topology.domain_count();
            for k in 1..domains {
                let other = (domain + k) % domains;
                for block in partition.domain_blocks(other) {
                    run(block, ClaimKind::CrossDomain);
                }
            }
            let finish = clock.fetch_add(1, Ordering::SeqCst);
            (stats, log, finish)
        });

        let mut report = BlockLoopReport {
            partition_blocks: partition.blocks.len(),
            ..Default::default()
        };
        for (worker, (stats, log, finish)) in per_worker.into_iter().enumerate() {
            report.stats.own_blocks += stats.own_blocks;
            report.stats.same_domain_steals += stats.same_domain_steals;
            report.stats.cross_domain_steals += stats.cross_domain_steals;
            if record_claims {
                report.claims.extend(log);
                report.finishes.push(WorkerFinish { worker, seq: finish });
            }
        }
        report.claims.sort_by_key(|c| c.seq);
        report
    }
}

#[cfg(target_os = "linux")]
fn bind_to_cpus(cpus: &[usize]) {
    if cpus.is_empty() {
        return;
    }
    // SAFETY: cpu_set_t is plain data; sched_setaffinity only reads it.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        for &c in cpus {
            libc::CPU_SET(c, &mut set);
        }
        // Binding is best effort; on failure the logical mapping still holds.
        let _ = libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
}

#[cfg(not(target_os = "linux"))]
fn bind_to_cpus(_cpus: &[usize]) {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimKind {
    Own,
    SameDomain,
    CrossDomain,
}

/// One unit of work handed to the loop body.
#[derive(Debug, Clone)]
pub struct BlockTask {
    pub worker: usize,
    pub domain: usize,
    pub range: Range<usize>,
    pub kind: ClaimKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub block: usize,
    pub worker: usize,
    pub kind: ClaimKind,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerFinish {
    pub worker: usize,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopStats {
    pub own_blocks: u64,
    pub same_domain_steals: u64,
    pub cross_domain_steals: u64,
}

#[derive(Debug, Clone, Default)]
pub struct BlockLoopReport {
    pub stats: LoopStats,
    pub partition_blocks: usize,
    /// Claims in global claim order; empty unless recording was requested.
    pub claims: Vec<ClaimRecord>,
    pub finishes: Vec<WorkerFinish>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub domain: usize,
    pub start: usize,
    pub end: usize,
}

/// Blocks of every domain plus the block range dealt to each worker.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    pub block_size: usize,
    pub blocks: Vec<Block>,
    domain_offsets: Vec<usize>,
    /// Flat block ids assigned to each worker.
    pub assigned: Vec<Range<usize>>,
}

impl BlockPartition {
    pub fn new(domain_lengths: &[usize], block_size: usize, topology: &Topology) -> Self {
        assert_eq!(domain_lengths.len(), topology.domain_count());
        let block_size = block_size.max(1);
        let mut blocks = Vec::new();
        let mut domain_offsets = Vec::with_capacity(domain_lengths.len() + 1);
        let mut assigned = vec![0..0; topology.thread_count()];
        for (domain, &len) in domain_lengths.iter().enumerate() {
            let first = blocks.len();
            domain_offsets.push(first);
            let mut start = 0;
            while start < len {
                let end = (start + block_size).min(len);
                blocks.push(Block { domain, start, end });
                start = end;
            }
            let nblocks = blocks.len() - first;
            let workers = topology.workers_of_domain(domain);
            let nworkers = workers.len();
            for (j, w) in workers.enumerate() {
                let r = chunk_range(nblocks, nworkers, j);
                assigned[w] = first + r.start..first + r.end;
            }
        }
        domain_offsets.push(blocks.len());
        BlockPartition {
            block_size,
            blocks,
            domain_offsets,
            assigned,
        }
    }

    pub fn domain_blocks(&self, domain: usize) -> Range<usize> {
        self.domain_offsets[domain]..self.domain_offsets[domain + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    #[test]
    fn partition_covers_each_domain() {
        let topo = Topology::with_layout(vec![2, 1]);
        let p = BlockPartition::new(&[1000, 300], 256, &topo);
        for d in 0..2 {
            let mut covered = 0;
            for b in &p.blocks[p.domain_blocks(d)] {
                assert_eq!(b.start, covered);
                covered = b.end;
            }
            assert_eq!(covered, [1000, 300][d]);
        }
        assert_eq!(p.assigned[0], 0..2);
        assert_eq!(p.assigned[1], 2..4);
        assert_eq!(p.assigned[2], 4..6);
    }

    #[test]
    fn single_thread_visits_in_sequence_order() {
        let pool = WorkerPool::with_threads(1).unwrap();
        let order = parking_lot::Mutex::new(Vec::new());
        pool.for_each_block(&[100], 7, false, |task| {
            order.lock().extend(task.range.clone());
        });
        assert_eq!(order.into_inner(), (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn empty_domain_workers_steal_across_domains() {
        let pool = WorkerPool::new(Topology::with_layout(vec![2, 2])).unwrap();
        let counters: Vec<AtomicU32> = (0..1000).map(|_| AtomicU32::new(0)).collect();
        let report = pool.for_each_block(&[1000, 0], 16, true, |task| {
            assert_eq!(task.domain, 0);
            std::thread::sleep(std::time::Duration::from_micros(300));
            for i in task.range {
                counters[i].fetch_add(1, Ordering::Relaxed);
            }
        });
        assert!(counters.iter().all(|c| c.load(Ordering::Relaxed) == 1));
        let cross: Vec<_> = report
            .claims
            .iter()
            .filter(|c| c.kind == ClaimKind::CrossDomain)
            .collect();
        assert!(cross.iter().all(|c| c.worker >= 2));
        assert_eq!(report.stats.own_blocks + report.stats.same_domain_steals + report.stats.cross_domain_steals, 63);
    }
}
