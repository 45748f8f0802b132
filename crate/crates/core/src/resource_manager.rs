//! Storage of all agents, partitioned by memory domain.

use std::alloc::Layout;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentUid};
use crate::alloc::{AllocError, AllocatorKind, PoolConfig, PoolStats, SizeClassPool};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RmError {
    #[error("handle {0:?} is out of range")]
    OutOfRange(AgentHandle),
    #[error("handle {handle:?} is stale (current epoch {current})")]
    Stale { handle: AgentHandle, current: u64 },
    #[error("domain {domain} does not exist ({domains} domains)")]
    NoSuchDomain { domain: usize, domains: usize },
    #[error("no agent with uid {0}")]
    UnknownUid(AgentUid),
    #[error("agent uid {0} is already registered")]
    DuplicateUid(AgentUid),
    #[error("allocation failed: {0}")]
    Alloc(String),
}

impl From<AllocError> for RmError {
    fn from(e: AllocError) -> Self {
        RmError::Alloc(e.to_string())
    }
}

/// Position of an agent in the resource manager. Handles are invalidated
/// whenever agents are removed or reordered; see [`ResourceManager::epoch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentHandle {
    domain: u32,
    index: u32,
    epoch: u64,
}

impl AgentHandle {
    pub fn new(domain: usize, index: usize, epoch: u64) -> Self {
        AgentHandle {
            domain: domain as u32,
            index: index as u32,
            epoch,
        }
    }

    pub fn domain(&self) -> usize {
        self.domain as usize
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

/// Owning pointer to a heap-allocated agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AgentPtr(NonNull<Agent>);

// SAFETY: agents are Send + Sync; the scheduler guarantees exclusive access
// for writers.
unsafe impl Send for AgentPtr {}
unsafe impl Sync for AgentPtr {}

impl AgentPtr {
    /// # Safety
    /// `p` must point to a live agent owned by a resource manager.
    pub(crate) unsafe fn from_raw(p: *mut Agent) -> Self {
        AgentPtr(NonNull::new_unchecked(p))
    }

    pub(crate) fn dangling() -> Self {
        AgentPtr(NonNull::dangling())
    }

    #[inline]
    pub(crate) fn as_ptr(self) -> *mut Agent {
        self.0.as_ptr()
    }

    /// # Safety
    /// The agent must be alive and not mutated concurrently.
    #[inline]
    pub(crate) unsafe fn get<'a>(self) -> &'a Agent {
        &*self.0.as_ptr()
    }
}

/// Where agent records live.
#[derive(Debug, Clone)]
pub(crate) enum AgentStorage {
    System,
    Pool(Arc<SizeClassPool>),
}

impl AgentStorage {
    fn raw(&self, slot: usize, domain: usize) -> Result<NonNull<Agent>, AllocError> {
        match self {
            AgentStorage::System => {
                // SAFETY: Agent is not zero-sized.
                let p = unsafe { std::alloc::alloc(Layout::new::<Agent>()) };
                NonNull::new(p as *mut Agent).ok_or(AllocError::OutOfMemory(Layout::new::<Agent>().size()))
            }
            AgentStorage::Pool(pool) => Ok(pool.allocate(slot, domain)?.cast()),
        }
    }

    /// Moves `agent` into memory associated with `domain`.
    pub(crate) fn alloc(&self, agent: Agent, slot: usize, domain: usize) -> Result<AgentPtr, AllocError> {
        let p = self.raw(slot, domain)?;
        // SAFETY: fresh, properly aligned allocation for one Agent.
        unsafe { p.as_ptr().write(agent) };
        Ok(AgentPtr(p))
    }

    /// Returns memory without running the destructor.
    ///
    /// # Safety
    /// `p` must come from this storage and its value must already have been
    /// moved out or dropped.
    pub(crate) unsafe fn dealloc_raw(&self, p: AgentPtr, slot: usize) {
        match self {
            AgentStorage::System => std::alloc::dealloc(p.as_ptr() as *mut u8, Layout::new::<Agent>()),
            AgentStorage::Pool(pool) => pool.deallocate(p.0.cast(), slot),
        }
    }

    /// Drops the agent and returns its memory.
    ///
    /// # Safety
    /// `p` must be a live agent of this storage with no other references.
    pub(crate) unsafe fn free(&self, p: AgentPtr, slot: usize) {
        std::ptr::drop_in_place(p.as_ptr());
        self.dealloc_raw(p, slot);
    }

    /// Bitwise move of the agent into memory of `domain`. With `keep_old`
    /// the old memory is left allocated and must be released later with
    /// [`dealloc_raw`](Self::dealloc_raw).
    ///
    /// # Safety
    /// `p` must be a live agent of this storage with no other references.
    pub(crate) unsafe fn relocate(
        &self,
        p: AgentPtr,
        slot: usize,
        domain: usize,
        keep_old: bool,
    ) -> Result<AgentPtr, AllocError> {
        let q = self.raw(slot, domain)?;
        std::ptr::copy_nonoverlapping(p.as_ptr(), q.as_ptr(), 1);
        if !keep_old {
            self.dealloc_raw(p, slot);
        }
        Ok(AgentPtr(q))
    }
}

const NO_LOCATION: u64 = u64::MAX;
const INDEX_BITS: u32 = 40;

#[inline]
pub(crate) fn pack_location(domain: usize, index: usize) -> u64 {
    (domain as u64) << INDEX_BITS | index as u64
}

#[inline]
fn unpack_location(v: u64) -> (usize, usize) {
    ((v >> INDEX_BITS) as usize, (v & ((1 << INDEX_BITS) - 1)) as usize)
}

/// Agent storage: one pointer vector per memory domain, a uid lookup table
/// and the allocator backing the agent records.
pub struct ResourceManager {
    pub(crate) domains: Vec<Vec<AgentPtr>>,
    pub(crate) epoch: u64,
    next_uid: u64,
    pub(crate) storage: AgentStorage,
    pub(crate) uid_index: Vec<AtomicU64>,
    round_robin: usize,
    thread_slots: usize,
}

// SAFETY: AgentPtr targets are owned by the manager.
unsafe impl Send for ResourceManager {}
unsafe impl Sync for ResourceManager {}

impl std::fmt::Debug for ResourceManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResourceManager")
            .field("domain_lengths", &self.domain_lengths())
            .field("epoch", &self.epoch)
            .field("next_uid", &self.next_uid)
            .finish()
    }
}

impl ResourceManager {
    /// `workers` is the number of worker threads that will allocate or free
    /// agents; one extra slot is reserved for the controlling thread.
    pub fn new(domains: usize, workers: usize, allocator: AllocatorKind, config: PoolConfig) -> Result<Self, RmError> {
        let domains = domains.max(1);
        let thread_slots = workers.max(1) + 1;
        let storage = match allocator {
            AllocatorKind::System => AgentStorage::System,
            AllocatorKind::Pool => AgentStorage::Pool(Arc::new(SizeClassPool::new(
                Layout::new::<Agent>(),
                domains,
                thread_slots,
                config,
            )?)),
        };
        Ok(ResourceManager {
            domains: (0..domains).map(|_| Vec::new()).collect(),
            epoch: 0,
            next_uid: 0,
            storage,
            uid_index: Vec::new(),
            round_robin: 0,
            thread_slots,
        })
    }

    /// Single-domain manager on the system allocator.
    pub fn simple() -> Self {
        Self::new(1, 1, AllocatorKind::System, PoolConfig::default()).expect("system storage")
    }

    pub(crate) fn thread_slots(&self) -> usize {
        self.thread_slots
    }

    pub(crate) fn note_uid(&mut self, uid: AgentUid) {
        if uid.0 >= self.next_uid {
            self.next_uid = uid.0 + 1;
        }
        self.ensure_uid_capacity();
    }

    pub(crate) fn control_slot(&self) -> usize {
        self.thread_slots - 1
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn domain_len(&self, domain: usize) -> usize {
        self.domains[domain].len()
    }

    pub fn domain_lengths(&self) -> Vec<usize> {
        self.domains.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.domains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.iter().all(Vec::is_empty)
    }

    /// Incremented by every structural change that moves agents.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// One past the largest uid handed out so far.
    pub fn next_uid(&self) -> AgentUid {
        AgentUid(self.next_uid)
    }

    pub fn allocator(&self) -> AllocatorKind {
        match self.storage {
            AgentStorage::System => AllocatorKind::System,
            AgentStorage::Pool(_) => AllocatorKind::Pool,
        }
    }

    pub fn pool_stats(&self) -> Option<PoolStats> {
        match &self.storage {
            AgentStorage::Pool(p) => Some(p.stats()),
            AgentStorage::System => None,
        }
    }

    pub(crate) fn reserve_uids(&mut self, count: usize) -> u64 {
        let base = self.next_uid;
        self.next_uid += count as u64;
        self.ensure_uid_capacity();
        base
    }

    pub(crate) fn ensure_uid_capacity(&mut self) {
        let need = self.next_uid as usize;
        if self.uid_index.len() < need {
            let target = need.max(self.uid_index.len() * 3 / 2);
            self.uid_index.resize_with(target, || AtomicU64::new(NO_LOCATION));
        }
    }

    #[inline]
    pub(crate) fn set_location(&self, uid: AgentUid, domain: usize, index: usize) {
        self.uid_index[uid.0 as usize].store(pack_location(domain, index), Ordering::Relaxed);
    }

    #[inline]
    pub(crate) fn clear_location(&self, uid: AgentUid) {
        self.uid_index[uid.0 as usize].store(NO_LOCATION, Ordering::Relaxed);
    }

    /// Appends to the domains in round-robin order.
    pub fn push_back(&mut self, agent: Agent) -> Result<AgentHandle, RmError> {
        let d = self.round_robin % self.domains.len();
        self.round_robin = self.round_robin.wrapping_add(1);
        self.push_back_to(d, agent)
    }

    pub fn push_back_to(&mut self, domain: usize, mut agent: Agent) -> Result<AgentHandle, RmError> {
        if domain >= self.domains.len() {
            return Err(RmError::NoSuchDomain {
                domain,
                domains: self.domains.len(),
            });
        }
        if agent.uid().is_assigned() {
            let uid = agent.uid();
            if uid.0 < self.next_uid {
                if self.handle_of(uid).is_some() {
                    return Err(RmError::DuplicateUid(uid));
                }
            } else {
                self.next_uid = uid.0 + 1;
            }
        } else {
            agent.set_uid(AgentUid(self.next_uid));
            self.next_uid += 1;
        }
        self.ensure_uid_capacity();
        let uid = agent.uid();
        let slot = self.control_slot();
        let p = self.storage.alloc(agent, slot, domain)?;
        let index = self.domains[domain].len();
        self.domains[domain].push(p);
        self.set_location(uid, domain, index);
        Ok(AgentHandle::new(domain, index, self.epoch))
    }

    fn check(&self, h: AgentHandle) -> Result<AgentPtr, RmError> {
        if h.epoch != self.epoch {
            return Err(RmError::Stale {
                handle: h,
                current: self.epoch,
            });
        }
        self.domains
            .get(h.domain())
            .and_then(|d| d.get(h.index()))
            .copied()
            .ok_or(RmError::OutOfRange(h))
    }

    pub fn get(&self, h: AgentHandle) -> Result<&Agent, RmError> {
        // SAFETY: pointer is live while owned by self; shared borrow of self.
        self.check(h).map(|p| unsafe { p.get() })
    }

    pub fn get_mut(&mut self, h: AgentHandle) -> Result<&mut Agent, RmError> {
        // SAFETY: unique borrow of self gives unique access to the agent.
        self.check(h).map(|p| unsafe { &mut *p.as_ptr() })
    }

    pub fn handle_of(&self, uid: AgentUid) -> Option<AgentHandle> {
        let v = self.uid_index.get(uid.0 as usize)?.load(Ordering::Relaxed);
        if v == NO_LOCATION {
            return None;
        }
        let (d, i) = unpack_location(v);
        Some(AgentHandle::new(d, i, self.epoch))
    }

    pub fn get_by_uid(&self, uid: AgentUid) -> Result<&Agent, RmError> {
        let h = self.handle_of(uid).ok_or(RmError::UnknownUid(uid))?;
        self.get(h)
    }

    pub fn get_by_uid_mut(&mut self, uid: AgentUid) -> Result<&mut Agent, RmError> {
        let h = self.handle_of(uid).ok_or(RmError::UnknownUid(uid))?;
        self.get_mut(h)
    }

    /// Visits agents domain by domain in storage order.
    pub fn for_each(&self, mut f: impl FnMut(AgentHandle, &Agent)) {
        for (d, list) in self.domains.iter().enumerate() {
            for (i, p) in list.iter().enumerate() {
                // SAFETY: see `get`.
                f(AgentHandle::new(d, i, self.epoch), unsafe { p.get() });
            }
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(AgentHandle, &mut Agent)) {
        let epoch = self.epoch;
        for (d, list) in self.domains.iter().enumerate() {
            for (i, p) in list.iter().enumerate() {
                // SAFETY: see `get_mut`.
                f(AgentHandle::new(d, i, epoch), unsafe { &mut *p.as_ptr() });
            }
        }
    }

    pub fn agents(&self) -> impl Iterator<Item = &Agent> + '_ {
        // SAFETY: see `get`.
        self.domains.iter().flatten().map(|p| unsafe { p.get() })
    }

    pub fn uids(&self) -> Vec<AgentUid> {
        self.agents().map(Agent::uid).collect()
    }

    /// Removes one agent right away by moving the domain's last agent into
    /// its slot. Invalidates all handles.
    pub fn remove(&mut self, h: AgentHandle) -> Result<Agent, RmError> {
        let p = self.check(h)?;
        let list = &mut self.domains[h.domain()];
        list.swap_remove(h.index());
        if let Some(moved) = list.get(h.index()) {
            // SAFETY: live agent owned by self.
            let uid = unsafe { moved.get() }.uid();
            self.set_location(uid, h.domain(), h.index());
        }
        // SAFETY: p was just unlinked; read the value out, then release.
        let agent = unsafe { std::ptr::read(p.as_ptr()) };
        self.clear_location(agent.uid());
        unsafe { self.storage.dealloc_raw(p, self.control_slot()) };
        self.epoch += 1;
        Ok(agent)
    }

    /// Drops all agents.
    pub fn clear(&mut self) {
        let slot = self.control_slot();
        for list in &mut self.domains {
            for p in list.drain(..) {
                // SAFETY: each pointer is owned exactly once.
                unsafe { self.storage.free(p, slot) };
            }
        }
        for e in &self.uid_index {
            e.store(NO_LOCATION, Ordering::Relaxed);
        }
        self.epoch += 1;
    }

    #[inline]
    pub(crate) fn ptr(&self, domain: usize, index: usize) -> AgentPtr {
        self.domains[domain][index]
    }
}

impl Drop for ResourceManager {
    fn drop(&mut self) {
        self.clear();
    }
}
