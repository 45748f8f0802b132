//! Work-efficient parallel exclusive scan.

use crate::exec::WorkerPool;
use crate::util::{chunk_range, DisjointSlice};

/// Inputs shorter than this are scanned on the calling thread.
const PARALLEL_CUTOFF: usize = 1 << 14;

/// Sequential exclusive scan; returns the prefix sums and the total.
pub fn exclusive_prefix_sum(values: &[usize]) -> (Vec<usize>, usize) {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0usize;
    for &v in values {
        out.push(acc);
        acc += v;
    }
    (out, acc)
}

/// Exclusive scan in place using the three-phase blocked algorithm: block
/// sums in parallel, a scan over the block sums, then a parallel local scan
/// seeded with each block's offset. Returns the total.
pub fn parallel_exclusive_prefix_sum_in_place(pool: &WorkerPool, values: &mut [usize]) -> usize {
    if values.len() < PARALLEL_CUTOFF {
        return scan_in_place(values, 0);
    }
    scan_blocked(pool, values)
}

fn scan_blocked(pool: &WorkerPool, values: &mut [usize]) -> usize {
    let n = values.len();
    let threads = pool.thread_count();
    let sums = {
        let v = &*values;
        pool.broadcast(|w| v[chunk_range(n, threads, w)].iter().sum::<usize>())
    };
    let (offsets, total) = exclusive_prefix_sum(&sums);
    let cells = DisjointSlice::new(values);
    pool.broadcast(|w| {
        let mut acc = offsets[w];
        for i in chunk_range(n, threads, w) {
            // SAFETY: worker w owns its chunk exclusively.
            unsafe {
                let v = *cells.read(i);
                cells.write(i, acc);
                acc += v;
            }
        }
    });
    total
}

fn scan_in_place(values: &mut [usize], mut acc: usize) -> usize {
    for v in values.iter_mut() {
        let x = *v;
        *v = acc;
        acc += x;
    }
    acc
}

pub fn parallel_exclusive_prefix_sum(pool: &WorkerPool, values: &[usize]) -> Vec<usize> {
    let mut out = values.to_vec();
    parallel_exclusive_prefix_sum_in_place(pool, &mut out);
    out
}
