//! Two-dimensional Morton (Z-order) codes over 15-bit cell indices.
//!
//! The first coordinate (longitude or easting index) occupies the even bits of
//! the code and the second (latitude or northing index) the odd bits.

use super::GridError;

/// Bits per coordinate.
pub const INDEX_BITS: u32 = 15;
/// Exclusive upper bound of a coordinate index.
pub const INDEX_LIMIT: u32 = 1 << INDEX_BITS;
/// Exclusive upper bound of a code.
pub const CODE_LIMIT: u32 = 1 << (2 * INDEX_BITS);

// n = -----------------edcba9876543210
// n = ---------edcba98--------76543210
// n = -----edc----ba98----7654----3210
// n = ---e--dc--ba--98--76--54--32--10
// n = -e-d-c-b-a-9-8-7-6-5-4-3-2-1-0
#[inline]
fn spread(mut n: u32) -> u32 {
    n &= 0x0000_7fff;
    n = (n | (n << 8)) & 0x00ff_00ff;
    n = (n | (n << 4)) & 0x0f0f_0f0f;
    n = (n | (n << 2)) & 0x3333_3333;
    (n | (n << 1)) & 0x5555_5555
}

#[inline]
fn compact(mut n: u32) -> u32 {
    n &= 0x5555_5555;
    n = (n | (n >> 1)) & 0x3333_3333;
    n = (n | (n >> 2)) & 0x0f0f_0f0f;
    n = (n | (n >> 4)) & 0x00ff_00ff;
    (n | (n >> 8)) & 0x0000_ffff
}

/// Interleaves two 15-bit indices into a 30-bit code.
pub fn interleave(u: u32, v: u32) -> Result<u32, GridError> {
    for value in [u, v] {
        if value >= INDEX_LIMIT {
            return Err(GridError::IndexOutOfRange {
                value: value as i64,
                limit: INDEX_LIMIT,
            });
        }
    }
    Ok(interleave_unchecked(u, v))
}

#[inline]
pub(crate) fn interleave_unchecked(u: u32, v: u32) -> u32 {
    spread(u) | (spread(v) << 1)
}

/// Splits a 30-bit code back into its two indices.
pub fn deinterleave(code: u32) -> Result<(u32, u32), GridError> {
    if code >= CODE_LIMIT {
        return Err(GridError::CodeOutOfRange(code as u64));
    }
    Ok(deinterleave_unchecked(code))
}

#[inline]
pub(crate) fn deinterleave_unchecked(code: u32) -> (u32, u32) {
    (compact(code), compact(code >> 1))
}
