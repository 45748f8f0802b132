use std::cell::UnsafeCell;
use std::ops::Range;

/// Shared view of a slice whose elements are written by several workers at
/// pairwise disjoint positions.
pub(crate) struct DisjointSlice<'a, T> {
    cells: &'a [UnsafeCell<T>],
}

unsafe impl<T: Send> Send for DisjointSlice<'_, T> {}
unsafe impl<T: Send> Sync for DisjointSlice<'_, T> {}

impl<'a, T> DisjointSlice<'a, T> {
    pub(crate) fn new(slice: &'a mut [T]) -> Self {
        // SAFETY: UnsafeCell<T> has the same layout as T and the unique borrow
        // is held for 'a.
        let cells = unsafe { &*(slice as *mut [T] as *const [UnsafeCell<T>]) };
        DisjointSlice { cells }
    }

    /// # Safety
    /// No other worker may read or write index `i` concurrently.
    #[inline]
    pub(crate) unsafe fn write(&self, i: usize, value: T) {
        *self.cells[i].get() = value;
    }

    /// # Safety
    /// No other worker may write index `i` concurrently.
    #[inline]
    pub(crate) unsafe fn read(&self, i: usize) -> &T {
        &*self.cells[i].get()
    }
}

/// Splits `0..len` into `parts` contiguous near-equal ranges and returns the
/// `part`-th one.
#[inline]
pub(crate) fn chunk_range(len: usize, parts: usize, part: usize) -> Range<usize> {
    let parts = parts.max(1);
    let start = len * part / parts;
    let end = len * (part + 1) / parts;
    start..end
}
