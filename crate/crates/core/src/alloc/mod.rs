//! Size-class pool allocator for agent records.
//!
//! Each [`SizeClassPool`] serves elements of a single size. Memory is split
//! per domain into [`DomainPool`]s that obtain large blocks whose size grows
//! geometrically. Blocks are cut into segments of `page_size <<
//! aligned_pages_shift` bytes aligned to their own size; the first word of a
//! segment points back at the owning domain pool, which is how a bare element
//! address finds its pool in constant time on deallocation.
//!
//! Free slots live on intrusive lists stored inside the free elements. Every
//! thread slot has a private list; surplus moves to a central list in whole
//! batches. A batch is a chain of `batch_len` nodes whose head also links to
//! the next batch, so a batch moves between lists with one pointer update.

use std::alloc::{self, Layout};
use std::collections::HashMap;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes reserved at the start of every segment for the back-reference.
pub const METADATA_SIZE: usize = std::mem::size_of::<usize>();
const MIN_ELEMENT_SIZE: usize = 2 * std::mem::size_of::<usize>();
#[cfg(debug_assertions)]
const POISON: usize = 0xF4EE_DEAD_BEEF_F4EE_u64 as usize;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("out of memory while growing a {0}-byte block")]
    OutOfMemory(usize),
    #[error("invalid allocator configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// Factor by which successive blocks grow.
    pub growth_rate: f64,
    /// Segments span `page_size << aligned_pages_shift` bytes.
    pub aligned_pages_shift: u32,
    /// Private-list size, in bytes of free elements, that triggers migration.
    pub migration_threshold_bytes: usize,
    pub page_size: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            growth_rate: 2.0,
            aligned_pages_shift: 5,
            migration_threshold_bytes: 1 << 20,
            page_size: system_page_size(),
        }
    }
}

impl PoolConfig {
    pub fn segment_size(&self) -> usize {
        self.page_size << self.aligned_pages_shift
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if !(self.growth_rate > 1.0) || !self.growth_rate.is_finite() {
            return Err(AllocError::Config(format!(
                "growth rate must be > 1, got {}",
                self.growth_rate
            )));
        }
        if !self.page_size.is_power_of_two() {
            return Err(AllocError::Config("page size must be a power of two".into()));
        }
        if self.aligned_pages_shift > 20 {
            return Err(AllocError::Config("aligned pages shift too large".into()));
        }
        Ok(())
    }
}

pub fn system_page_size() -> usize {
    // SAFETY: sysconf has no preconditions.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as usize
    } else {
        4096
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocatorKind {
    Pool,
    System,
}

impl AllocatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AllocatorKind::Pool => "pool",
            AllocatorKind::System => "system",
        }
    }
}

impl std::str::FromStr for AllocatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pool" => Ok(AllocatorKind::Pool),
            "system" => Ok(AllocatorKind::System),
            _ => Err(format!("unknown allocator '{s}' (expected pool or system)")),
        }
    }
}

// --- intrusive list primitives -------------------------------------------

#[inline]
unsafe fn next_of(node: *mut u8) -> *mut u8 {
    *(node as *mut *mut u8)
}

#[inline]
unsafe fn set_next(node: *mut u8, next: *mut u8) {
    *(node as *mut *mut u8) = next;
}

#[inline]
unsafe fn next_batch_of(node: *mut u8) -> *mut u8 {
    *(node as *mut *mut u8).add(1)
}

#[inline]
unsafe fn set_next_batch(node: *mut u8, next: *mut u8) {
    *(node as *mut *mut u8).add(1) = next;
}

/// Thread-private free list: a partially filled current batch plus a stack
/// of full batches.
struct FreeList {
    head: *mut u8,
    len: usize,
    batches: *mut u8,
    batch_count: usize,
}

// SAFETY: the raw pointers reference pool-owned memory; every access happens
// under the surrounding mutex.
unsafe impl Send for FreeList {}

impl FreeList {
    const fn new() -> Self {
        FreeList {
            head: ptr::null_mut(),
            len: 0,
            batches: ptr::null_mut(),
            batch_count: 0,
        }
    }

    fn total(&self, batch_len: usize) -> usize {
        self.len + self.batch_count * batch_len
    }

    unsafe fn push(&mut self, node: *mut u8, batch_len: usize) {
        if self.len == batch_len {
            set_next_batch(self.head, self.batches);
            self.batches = self.head;
            self.batch_count += 1;
            self.head = ptr::null_mut();
            self.len = 0;
        }
        set_next(node, self.head);
        self.head = node;
        self.len += 1;
    }

    unsafe fn pop(&mut self, batch_len: usize) -> Option<*mut u8> {
        if self.len == 0 {
            if self.batch_count == 0 {
                return None;
            }
            self.head = self.batches;
            self.batches = next_batch_of(self.head);
            self.batch_count -= 1;
            self.len = batch_len;
        }
        let node = self.head;
        self.head = next_of(node);
        self.len -= 1;
        Some(node)
    }

    unsafe fn take_batch(&mut self) -> Option<*mut u8> {
        if self.batch_count == 0 {
            return None;
        }
        let b = self.batches;
        self.batches = next_batch_of(b);
        self.batch_count -= 1;
        Some(b)
    }

    unsafe fn put_batch(&mut self, batch: *mut u8, batch_len: usize) {
        if self.len == 0 {
            self.head = batch;
            self.len = batch_len;
        } else {
            set_next_batch(batch, self.batches);
            self.batches = batch;
            self.batch_count += 1;
        }
    }
}

struct CentralList {
    batches: *mut u8,
    count: usize,
}

// SAFETY: guarded by the central mutex.
unsafe impl Send for CentralList {}

#[derive(Debug, Clone, Copy)]
struct BlockInfo {
    base: *mut u8,
    segments: usize,
    initialized: usize,
}

struct BlockState {
    blocks: Vec<BlockInfo>,
    next_block_segments: f64,
}

// SAFETY: guarded by the block mutex.
unsafe impl Send for BlockState {}

#[repr(align(64))]
struct Padded<T>(T);

/// Per-domain part of a size class.
pub struct DomainPool {
    domain: usize,
    element_size: usize,
    segment_size: usize,
    first_slot_offset: usize,
    slots_per_segment: usize,
    batch_len: usize,
    threshold_elems: usize,
    growth_rate: f64,
    /// Growth stops here so a block never wastes more than one segment
    /// plus one element and one header.
    max_block_segments: usize,
    private: Vec<Padded<Mutex<FreeList>>>,
    central: Mutex<CentralList>,
    blocks: Mutex<BlockState>,
    allocations: AtomicU64,
    deallocations: AtomicU64,
    migrations: AtomicU64,
    refills: AtomicU64,
    list_ops: AtomicU64,
    segments_initialized: AtomicUsize,
}

impl DomainPool {
    fn new(domain: usize, element_size: usize, align: usize, threads: usize, cfg: &PoolConfig) -> Self {
        let segment_size = cfg.segment_size();
        let first_slot_offset = METADATA_SIZE.next_multiple_of(align);
        let slots_per_segment = (segment_size - first_slot_offset) / element_size;
        let threshold_elems = (cfg.migration_threshold_bytes / element_size).max(2);
        let waste_per_segment = segment_size - slots_per_segment * element_size;
        let bound = segment_size + element_size + METADATA_SIZE;
        let max_block_segments = (bound / waste_per_segment.max(1)).max(1);
        DomainPool {
            domain,
            element_size,
            segment_size,
            first_slot_offset,
            slots_per_segment,
            batch_len: (threshold_elems / 2).max(1),
            threshold_elems,
            growth_rate: cfg.growth_rate,
            max_block_segments,
            private: (0..threads)
                .map(|_| Padded(Mutex::new(FreeList::new())))
                .collect(),
            central: Mutex::new(CentralList {
                batches: ptr::null_mut(),
                count: 0,
            }),
            blocks: Mutex::new(BlockState {
                blocks: Vec::new(),
                next_block_segments: 1.0,
            }),
            allocations: AtomicU64::new(0),
            deallocations: AtomicU64::new(0),
            migrations: AtomicU64::new(0),
            refills: AtomicU64::new(0),
            list_ops: AtomicU64::new(0),
            segments_initialized: AtomicUsize::new(0),
        }
    }

    fn allocate(&self, thread: usize) -> Result<NonNull<u8>, AllocError> {
        let mut list = self.private[thread].0.lock();
        // SAFETY: all nodes on the lists are free slots owned by this pool.
        unsafe {
            if let Some(node) = list.pop(self.batch_len) {
                self.list_ops.fetch_add(1, Ordering::Relaxed);
                return Ok(self.hand_out(node));
            }
            let batch = {
                let mut central = self.central.lock();
                if central.count > 0 {
                    let b = central.batches;
                    central.batches = next_batch_of(b);
                    central.count -= 1;
                    Some(b)
                } else {
                    None
                }
            };
            if let Some(b) = batch {
                list.put_batch(b, self.batch_len);
                self.refills.fetch_add(1, Ordering::Relaxed);
                self.list_ops.fetch_add(2, Ordering::Relaxed);
            } else {
                let (first, count) = self.init_segment()?;
                let mut node = first;
                for _ in 0..count {
                    let next = next_of(node);
                    self.push_private(&mut list, node);
                    node = next;
                }
            }
            let node = list.pop(self.batch_len).expect("refilled list is non-empty");
            self.list_ops.fetch_add(1, Ordering::Relaxed);
            Ok(self.hand_out(node))
        }
    }

    #[inline]
    unsafe fn hand_out(&self, node: *mut u8) -> NonNull<u8> {
        #[cfg(debug_assertions)]
        if self.element_size >= 3 * METADATA_SIZE {
            *(node as *mut usize).add(2) = 0;
        }
        self.allocations.fetch_add(1, Ordering::Relaxed);
        NonNull::new_unchecked(node)
    }

    unsafe fn push_private(&self, list: &mut FreeList, node: *mut u8) {
        #[cfg(debug_assertions)]
        if self.element_size >= 3 * METADATA_SIZE {
            *(node as *mut usize).add(2) = POISON;
        }
        list.push(node, self.batch_len);
        self.list_ops.fetch_add(1, Ordering::Relaxed);
        if list.total(self.batch_len) > self.threshold_elems {
            let b = list.take_batch().expect("over-threshold list holds a full batch");
            let mut central = self.central.lock();
            set_next_batch(b, central.batches);
            central.batches = b;
            central.count += 1;
            self.migrations.fetch_add(1, Ordering::Relaxed);
            self.list_ops.fetch_add(2, Ordering::Relaxed);
        }
    }

    unsafe fn deallocate(&self, node: *mut u8, thread: usize) {
        #[cfg(debug_assertions)]
        if self.element_size >= 3 * METADATA_SIZE {
            assert_ne!(
                *(node as *const usize).add(2),
                POISON,
                "double free detected in pool allocator"
            );
        }
        let mut list = self.private[thread].0.lock();
        self.push_private(&mut list, node);
        self.deallocations.fetch_add(1, Ordering::Relaxed);
    }

    /// Initializes the next untouched segment and returns its slots as a
    /// chain `(first, count)`.
    fn init_segment(&self) -> Result<(*mut u8, usize), AllocError> {
        let mut state = self.blocks.lock();
        let needs_block = state
            .blocks
            .last()
            .map_or(true, |b| b.initialized == b.segments);
        if needs_block {
            let segments = (state.next_block_segments.ceil().max(1.0) as usize).min(self.max_block_segments);
            let bytes = segments * self.segment_size;
            let layout = Layout::from_size_align(bytes, self.segment_size)
                .map_err(|_| AllocError::OutOfMemory(bytes))?;
            // SAFETY: layout has non-zero size.
            let base = unsafe { alloc::alloc(layout) };
            if base.is_null() {
                return Err(AllocError::OutOfMemory(bytes));
            }
            state.blocks.push(BlockInfo {
                base,
                segments,
                initialized: 0,
            });
            state.next_block_segments = (state.next_block_segments * self.growth_rate).min(self.max_block_segments as f64);
        }
        let block = state.blocks.last_mut().expect("block exists");
        // SAFETY: the segment lies inside the block allocated above.
        unsafe {
            let seg = block.base.add(block.initialized * self.segment_size);
            block.initialized += 1;
            *(seg as *mut *const DomainPool) = self as *const DomainPool;
            let first = seg.add(self.first_slot_offset);
            for i in 0..self.slots_per_segment {
                let node = first.add(i * self.element_size);
                let next = if i + 1 < self.slots_per_segment {
                    node.add(self.element_size)
                } else {
                    ptr::null_mut()
                };
                set_next(node, next);
            }
            self.segments_initialized.fetch_add(1, Ordering::Relaxed);
            Ok((first, self.slots_per_segment))
        }
    }

    fn stats(&self) -> DomainStats {
        // Lock order is private list, then central or blocks, as in allocate.
        let private: Vec<usize> = self
            .private
            .iter()
            .map(|p| p.0.lock().total(self.batch_len))
            .collect();
        let central = self.central.lock().count * self.batch_len;
        let blocks = self.blocks.lock();
        let allocs = self.allocations.load(Ordering::Relaxed);
        let frees = self.deallocations.load(Ordering::Relaxed);
        let usable = self.slots_per_segment * self.element_size;
        DomainStats {
            domain: self.domain,
            blocks: blocks.blocks.len(),
            segments_total: blocks.blocks.iter().map(|b| b.segments).sum(),
            segments_initialized: blocks.blocks.iter().map(|b| b.initialized).sum(),
            slots_per_segment: self.slots_per_segment,
            free_private: private,
            free_central: central,
            live_count: allocs - frees,
            allocations: allocs,
            deallocations: frees,
            migrations: self.migrations.load(Ordering::Relaxed),
            refills: self.refills.load(Ordering::Relaxed),
            list_ops: self.list_ops.load(Ordering::Relaxed),
            block_bytes: blocks
                .blocks
                .iter()
                .map(|b| b.segments * self.segment_size)
                .collect(),
            block_waste_bytes: blocks
                .blocks
                .iter()
                .map(|b| b.segments * (self.segment_size - usable))
                .collect(),
        }
    }
}

impl Drop for DomainPool {
    fn drop(&mut self) {
        let state = self.blocks.get_mut();
        for b in state.blocks.drain(..) {
            let layout = Layout::from_size_align(b.segments * self.segment_size, self.segment_size)
                .expect("layout was valid at allocation");
            // SAFETY: block allocated with this exact layout.
            unsafe { alloc::dealloc(b.base, layout) };
        }
    }
}

enum Backing {
    Pooled(Vec<Box<DomainPool>>),
    /// Elements too large for a segment go straight to the system allocator.
    System,
}

/// A pool for one element size, split into per-domain pools.
pub struct SizeClassPool {
    layout: Layout,
    element_size: usize,
    threads: usize,
    config: PoolConfig,
    backing: Backing,
}

// SAFETY: all interior mutation goes through mutexes or atomics.
unsafe impl Send for SizeClassPool {}
unsafe impl Sync for SizeClassPool {}

impl std::fmt::Debug for SizeClassPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SizeClassPool")
            .field("element_size", &self.element_size)
            .field("pooled", &self.is_pooled())
            .finish()
    }
}

impl SizeClassPool {
    /// `threads` is the number of distinct thread slots that will call
    /// [`allocate`](Self::allocate) / [`deallocate`](Self::deallocate).
    pub fn new(layout: Layout, domains: usize, threads: usize, config: PoolConfig) -> Result<Self, AllocError> {
        config.validate()?;
        let align = layout.align().max(std::mem::align_of::<usize>());
        let element_size = layout.size().max(MIN_ELEMENT_SIZE).next_multiple_of(align);
        let segment = config.segment_size();
        let fits = align <= segment && METADATA_SIZE.next_multiple_of(align) + element_size <= segment;
        let backing = if fits {
            Backing::Pooled(
                (0..domains.max(1))
                    .map(|d| Box::new(DomainPool::new(d, element_size, align, threads.max(1), &config)))
                    .collect(),
            )
        } else {
            Backing::System
        };
        Ok(SizeClassPool {
            layout,
            element_size,
            threads: threads.max(1),
            config,
            backing,
        })
    }

    pub fn element_size(&self) -> usize {
        self.element_size
    }

    pub fn is_pooled(&self) -> bool {
        matches!(self.backing, Backing::Pooled(_))
    }

    pub fn thread_slots(&self) -> usize {
        self.threads
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    /// Largest element a segment can hold.
    pub fn max_element_size(&self) -> usize {
        self.config.segment_size() - METADATA_SIZE
    }

    pub fn allocate(&self, thread: usize, domain: usize) -> Result<NonNull<u8>, AllocError> {
        match &self.backing {
            Backing::Pooled(domains) => domains[domain % domains.len()].allocate(thread),
            Backing::System => {
                // SAFETY: layout size is non-zero (element_size >= 16).
                let p = unsafe { alloc::alloc(self.system_layout()) };
                NonNull::new(p).ok_or(AllocError::OutOfMemory(self.element_size))
            }
        }
    }

    /// Returns an element to the free list of `thread`.
    ///
    /// # Safety
    /// `ptr` must come from [`allocate`](Self::allocate) on this pool and
    /// must not have been freed since.
    pub unsafe fn deallocate(&self, ptr: NonNull<u8>, thread: usize) {
        match &self.backing {
            Backing::Pooled(domains) => {
                let owner = Self::owner_of(ptr.as_ptr(), self.config.segment_size());
                debug_assert!(
                    domains.iter().any(|d| ptr::eq(&**d, owner)),
                    "element freed into a foreign size class"
                );
                (*owner).deallocate(ptr.as_ptr(), thread);
            }
            Backing::System => alloc::dealloc(ptr.as_ptr(), self.system_layout()),
        }
    }

    /// Domain that owns `ptr`, read from its segment header.
    ///
    /// # Safety
    /// `ptr` must be a live element of this (pooled) size class.
    pub unsafe fn domain_of(&self, ptr: NonNull<u8>) -> Option<usize> {
        match self.backing {
            Backing::Pooled(_) => Some((*Self::owner_of(ptr.as_ptr(), self.config.segment_size())).domain),
            Backing::System => None,
        }
    }

    #[inline]
    unsafe fn owner_of(ptr: *mut u8, segment_size: usize) -> *const DomainPool {
        let seg = (ptr as usize) & !(segment_size - 1);
        *(seg as *const *const DomainPool)
    }

    fn system_layout(&self) -> Layout {
        Layout::from_size_align(self.element_size, self.layout.align().max(8)).expect("valid layout")
    }

    pub fn stats(&self) -> PoolStats {
        let domains = match &self.backing {
            Backing::Pooled(d) => d.iter().map(|d| d.stats()).collect(),
            Backing::System => Vec::new(),
        };
        PoolStats {
            element_size: self.element_size,
            segment_size: self.config.segment_size(),
            domains,
        }
    }
}

/// Snapshot of one domain pool; consistent when the pool is quiescent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: usize,
    pub blocks: usize,
    pub segments_total: usize,
    pub segments_initialized: usize,
    pub slots_per_segment: usize,
    /// Free elements on each thread-private list.
    pub free_private: Vec<usize>,
    pub free_central: usize,
    pub live_count: u64,
    pub allocations: u64,
    pub deallocations: u64,
    pub migrations: u64,
    pub refills: u64,
    pub list_ops: u64,
    pub block_bytes: Vec<usize>,
    /// Bytes per block that can never hold an element.
    pub block_waste_bytes: Vec<usize>,
}

impl DomainStats {
    pub fn free_total(&self) -> usize {
        self.free_private.iter().sum::<usize>() + self.free_central
    }

    pub fn slots_initialized(&self) -> usize {
        self.segments_initialized * self.slots_per_segment
    }

    pub fn slots_uninitialized(&self) -> usize {
        (self.segments_total - self.segments_initialized) * self.slots_per_segment
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub element_size: usize,
    pub segment_size: usize,
    pub domains: Vec<DomainStats>,
}

impl PoolStats {
    pub fn blocks(&self) -> usize {
        self.domains.iter().map(|d| d.blocks).sum()
    }

    pub fn segments_initialized(&self) -> usize {
        self.domains.iter().map(|d| d.segments_initialized).sum()
    }

    pub fn live_count(&self) -> u64 {
        self.domains.iter().map(|d| d.live_count).sum()
    }

    pub fn free_private(&self) -> usize {
        self.domains.iter().map(|d| d.free_private.iter().sum::<usize>()).sum()
    }

    pub fn free_central(&self) -> usize {
        self.domains.iter().map(|d| d.free_central).sum()
    }

    pub fn migrations(&self) -> u64 {
        self.domains.iter().map(|d| d.migrations).sum()
    }

    /// Initialized slots == free + live, in every domain.
    pub fn conserved(&self) -> bool {
        self.domains
            .iter()
            .all(|d| d.slots_initialized() as u64 == d.free_total() as u64 + d.live_count)
    }
}

/// One pool per distinct element layout, created on first use.
#[derive(Debug)]
pub struct PoolRegistry {
    domains: usize,
    threads: usize,
    config: PoolConfig,
    pools: Mutex<HashMap<(usize, usize), Arc<SizeClassPool>>>,
}

impl PoolRegistry {
    pub fn new(domains: usize, threads: usize, config: PoolConfig) -> Result<Self, AllocError> {
        config.validate()?;
        Ok(PoolRegistry {
            domains,
            threads,
            config,
            pools: Mutex::new(HashMap::new()),
        })
    }

    pub fn pool_for(&self, layout: Layout) -> Result<Arc<SizeClassPool>, AllocError> {
        let mut pools = self.pools.lock();
        if let Some(p) = pools.get(&(layout.size(), layout.align())) {
            return Ok(p.clone());
        }
        let pool = Arc::new(SizeClassPool::new(layout, self.domains, self.threads, self.config)?);
        pools.insert((layout.size(), layout.align()), pool.clone());
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.pools.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool72(threads: usize, threshold: usize) -> SizeClassPool {
        let cfg = PoolConfig {
            migration_threshold_bytes: threshold,
            page_size: 4096,
            ..PoolConfig::default()
        };
        SizeClassPool::new(Layout::from_size_align(72, 8).unwrap(), 1, threads, cfg).unwrap()
    }

    #[test]
    fn fresh_pool_stats_are_zero() {
        let p = pool72(2, 1 << 20);
        let s = p.stats();
        assert_eq!(s.blocks(), 0);
        assert_eq!(s.segments_initialized(), 0);
        assert_eq!(s.live_count(), 0);
        assert_eq!(s.free_private() + s.free_central(), 0);
    }

    #[test]
    fn cold_start_initializes_one_segment() {
        let p = pool72(1, 1 << 20);
        let a = p.allocate(0, 0).unwrap();
        let s = p.stats();
        assert_eq!(s.blocks(), 1);
        assert_eq!(s.segments_initialized(), 1);
        assert_eq!(s.live_count(), 1);
        assert!(s.conserved());
        assert_eq!(a.as_ptr() as usize % 8, 0);
        unsafe { p.deallocate(a, 0) };
    }

    #[test]
    fn lifo_reuse_on_same_thread() {
        let p = pool72(1, 1 << 20);
        let a = p.allocate(0, 0).unwrap();
        unsafe { p.deallocate(a, 0) };
        let b = p.allocate(0, 0).unwrap();
        assert_eq!(a, b);
        unsafe { p.deallocate(b, 0) };
    }

    #[test]
    fn live_count_after_k_allocations() {
        let p = pool72(1, 1 << 20);
        let v: Vec<_> = (0..5000).map(|_| p.allocate(0, 0).unwrap()).collect();
        assert_eq!(p.stats().live_count(), 5000);
        assert!(p.stats().conserved());
        for x in v {
            unsafe { p.deallocate(x, 0) };
        }
        assert_eq!(p.stats().live_count(), 0);
    }

    #[test]
    fn private_list_respects_threshold() {
        // 72-byte elements, threshold 7200 bytes -> 100 elements.
        let p = pool72(2, 7200);
        let v: Vec<_> = (0..10_000).map(|_| p.allocate(0, 0).unwrap()).collect();
        for x in v {
            unsafe { p.deallocate(x, 1) };
            let s = &p.stats().domains[0];
            assert!(s.free_private[1] <= 100);
        }
        let s = p.stats();
        assert!(s.migrations() > 0);
        assert!(s.conserved());
    }

    #[test]
    fn cross_thread_free_lands_on_freeing_thread() {
        let p = pool72(2, 1 << 20);
        let a = p.allocate(0, 0).unwrap();
        let before = p.stats().domains[0].free_private[1];
        unsafe { p.deallocate(a, 1) };
        assert_eq!(p.stats().domains[0].free_private[1], before + 1);
    }

    #[test]
    fn oversize_falls_back_to_system() {
        let cfg = PoolConfig {
            page_size: 4096,
            aligned_pages_shift: 0,
            ..PoolConfig::default()
        };
        let p = SizeClassPool::new(Layout::from_size_align(5000, 8).unwrap(), 1, 1, cfg).unwrap();
        assert!(!p.is_pooled());
        let a = p.allocate(0, 0).unwrap();
        unsafe { p.deallocate(a, 0) };
    }

    #[test]
    fn domain_lookup_by_address() {
        let cfg = PoolConfig {
            page_size: 4096,
            ..PoolConfig::default()
        };
        let p = SizeClassPool::new(Layout::new::<[u64; 9]>(), 2, 1, cfg).unwrap();
        let a = p.allocate(0, 1).unwrap();
        let seg = cfg.segment_size();
        assert_eq!(unsafe { p.domain_of(a) }, Some(1));
        // Element does not straddle a segment border.
        let start = a.as_ptr() as usize;
        assert_eq!(start / seg, (start + p.element_size() - 1) / seg);
        unsafe { p.deallocate(a, 0) };
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "double free")]
    fn double_free_is_detected() {
        let p = pool72(1, 1 << 20);
        let a = p.allocate(0, 0).unwrap();
        unsafe {
            p.deallocate(a, 0);
            p.deallocate(a, 0);
        }
    }

    #[test]
    fn registry_separates_classes() {
        let r = PoolRegistry::new(1, 1, PoolConfig::default()).unwrap();
        let a = r.pool_for(Layout::new::<[u8; 72]>()).unwrap();
        let b = r.pool_for(Layout::new::<[u8; 72]>()).unwrap();
        let c = r.pool_for(Layout::new::<[u8; 128]>()).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert!(!Arc::ptr_eq(&a, &c));
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn rejects_bad_growth_rate() {
        let cfg = PoolConfig {
            growth_rate: 1.0,
            ..PoolConfig::default()
        };
        assert!(SizeClassPool::new(Layout::new::<u64>(), 1, 1, cfg).is_err());
    }
}
