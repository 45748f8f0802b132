//! Morton (Z-order) codes and the agent sorting/balancing built on them.
//!
//! Bit `i` of x lands on code bit `D*i`, bit `i` of y on `D*i + 1` and, in
//! 3D, bit `i` of z on `3*i + 2`.

mod balance;
mod offsets;

use thiserror::Error;

pub use balance::{plan_sort, sort_and_balance, SortPlan, SortStats};
pub use offsets::{build_offsets_table, MortonSweep, OffsetsTable};

/// Largest coordinate (exclusive) that fits a 3D code.
pub const MAX_COORD_3D: u64 = 1 << 21;
/// Largest coordinate (exclusive) that fits a 2D code.
pub const MAX_COORD_2D: u64 = 1 << 31;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MortonError {
    #[error("coordinate {value} on axis {axis} exceeds the {bits}-bit range")]
    CoordinateOutOfRange { axis: usize, value: u64, bits: u32 },
    #[error("rank {rank} out of range for {boxes} in-space boxes")]
    RankOutOfRange { rank: u64, boxes: u64 },
    #[error("grid indexes {indexed} agents at epoch {grid_epoch}, resource manager holds {agents} at epoch {epoch}")]
    StaleGrid { indexed: usize, grid_epoch: u64, agents: usize, epoch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MortonCode(pub u64);

#[inline]
fn spread3(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact3(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | x >> 2) & 0x10c3_0c30_c30c_30c3;
    x = (x | x >> 4) & 0x100f_00f0_0f00_f00f;
    x = (x | x >> 8) & 0x001f_0000_ff00_00ff;
    x = (x | x >> 16) & 0x001f_0000_0000_ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x
}

#[inline]
fn spread2(v: u64) -> u64 {
    let mut x = v & 0xffff_ffff;
    x = (x | x << 16) & 0x0000_ffff_0000_ffff;
    x = (x | x << 8) & 0x00ff_00ff_00ff_00ff;
    x = (x | x << 4) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | x << 2) & 0x3333_3333_3333_3333;
    x = (x | x << 1) & 0x5555_5555_5555_5555;
    x
}

#[inline]
fn compact2(v: u64) -> u64 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | x >> 1) & 0x3333_3333_3333_3333;
    x = (x | x >> 2) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | x >> 4) & 0x00ff_00ff_00ff_00ff;
    x = (x | x >> 8) & 0x0000_ffff_0000_ffff;
    x = (x | x >> 16) & 0xffff_ffff;
    x
}

pub fn encode_3d(coords: [u64; 3]) -> Result<MortonCode, MortonError> {
    for (axis, &value) in coords.iter().enumerate() {
        if value >= MAX_COORD_3D {
            return Err(MortonError::CoordinateOutOfRange { axis, value, bits: 21 });
        }
    }
    Ok(encode_3d_unchecked(coords))
}

#[inline]
pub(crate) fn encode_3d_unchecked(c: [u64; 3]) -> MortonCode {
    MortonCode(spread3(c[0]) | spread3(c[1]) << 1 | spread3(c[2]) << 2)
}

#[inline]
pub fn decode_3d(code: MortonCode) -> [u64; 3] {
    [compact3(code.0), compact3(code.0 >> 1), compact3(code.0 >> 2)]
}

pub fn encode_2d(coords: [u64; 2]) -> Result<MortonCode, MortonError> {
    for (axis, &value) in coords.iter().enumerate() {
        if value >= MAX_COORD_2D {
            return Err(MortonError::CoordinateOutOfRange { axis, value, bits: 31 });
        }
    }
    Ok(MortonCode(spread2(coords[0]) | spread2(coords[1]) << 1))
}

#[inline]
pub fn decode_2d(code: MortonCode) -> [u64; 2] {
    [compact2(code.0), compact2(code.0 >> 1)]
}
