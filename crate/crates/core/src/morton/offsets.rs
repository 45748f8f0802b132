//! Gap table for Morton order over grids whose sides are not equal powers of
//! two.
//!
//! The Morton order over a `2^k`-sided cube is the depth-first order of the
//! implicit `2^D`-ary tree whose leaves are the boxes. Walking that tree and
//! only descending into nodes that are partially inside the grid finds every
//! run of out-of-grid codes without visiting each leaf. The table stores one
//! `(box_counter, offset)` pair per run of in-grid boxes: for an in-grid rank
//! `r`, its Morton code is `r + offset` of the last entry with
//! `box_counter <= r`.

use super::{MortonCode, MortonError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetsTable {
    dims: Vec<u64>,
    entries: Vec<(u64, u64)>,
    boxes: u64,
}

impl OffsetsTable {
    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    /// `(box_counter, offset)` pairs, strictly increasing in `box_counter`.
    pub fn entries(&self) -> &[(u64, u64)] {
        &self.entries
    }

    /// Number of in-grid boxes.
    pub fn box_count(&self) -> u64 {
        self.boxes
    }

    pub fn rank_to_morton(&self, rank: u64) -> Result<MortonCode, MortonError> {
        if rank >= self.boxes {
            return Err(MortonError::RankOutOfRange {
                rank,
                boxes: self.boxes,
            });
        }
        let i = self.entries.partition_point(|&(c, _)| c <= rank) - 1;
        Ok(MortonCode(rank + self.entries[i].1))
    }

    /// Codes of ranks `start..box_count()` in increasing order, in O(1)
    /// amortized per step.
    pub fn sweep_from(&self, start: u64) -> MortonSweep<'_> {
        let cursor = self
            .entries
            .partition_point(|&(c, _)| c <= start)
            .saturating_sub(1);
        MortonSweep {
            table: self,
            rank: start,
            cursor,
        }
    }
}

pub struct MortonSweep<'a> {
    table: &'a OffsetsTable,
    rank: u64,
    cursor: usize,
}

impl Iterator for MortonSweep<'_> {
    type Item = MortonCode;

    #[inline]
    fn next(&mut self) -> Option<MortonCode> {
        if self.rank >= self.table.boxes {
            return None;
        }
        let entries = &self.table.entries;
        while self.cursor + 1 < entries.len() && entries[self.cursor + 1].0 <= self.rank {
            self.cursor += 1;
        }
        let code = MortonCode(self.rank + entries[self.cursor].1);
        self.rank += 1;
        Some(code)
    }
}

struct Walk<'a> {
    dims: &'a [u64],
    box_counter: u64,
    offset: u64,
    found_gap: bool,
    entries: Vec<(u64, u64)>,
}

impl Walk<'_> {
    fn visit(&mut self, origin: [u64; 3], size: u64) {
        let d = self.dims.len();
        let mut inside = 1u64;
        for axis in 0..d {
            let hi = (origin[axis] + size).min(self.dims[axis]);
            inside *= hi.saturating_sub(origin[axis]);
        }
        let leaves = size.pow(d as u32);
        if inside == leaves {
            if self.found_gap {
                self.entries.push((self.box_counter, self.offset));
                self.found_gap = false;
            }
            self.box_counter += leaves;
        } else if inside == 0 {
            self.offset += leaves;
            self.found_gap = true;
        } else {
            let half = size / 2;
            for child in 0..(1u64 << d) {
                let mut o = origin;
                for (axis, oa) in o.iter_mut().enumerate().take(d) {
                    if child >> axis & 1 == 1 {
                        *oa += half;
                    }
                }
                self.visit(o, half);
            }
        }
    }
}

/// Builds the table for a 2D (`dims.len() == 2`) or 3D grid.
pub fn build_offsets_table(dims: &[u64]) -> OffsetsTable {
    assert!(
        dims.len() == 2 || dims.len() == 3,
        "offsets table supports 2D and 3D grids"
    );
    let boxes: u64 = dims.iter().product();
    if boxes == 0 {
        return OffsetsTable {
            dims: dims.to_vec(),
            entries: Vec::new(),
            boxes: 0,
        };
    }
    let side = dims.iter().copied().max().unwrap_or(1).next_power_of_two();
    let mut walk = Walk {
        dims,
        box_counter: 0,
        offset: 0,
        found_gap: true,
        entries: Vec::new(),
    };
    walk.visit([0; 3], side);
    debug_assert_eq!(walk.box_counter, boxes);
    OffsetsTable {
        dims: dims.to_vec(),
        entries: walk.entries,
        boxes,
    }
}
