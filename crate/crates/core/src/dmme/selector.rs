use super::DmmeError;

/// Splits an `m`-bit group mask into `n` one-hot masks, lowest set bit first.
/// Slots past the popcount are zero.
pub fn selector_decode(mask: u64, m: u32, n: u32) -> Result<Vec<u64>, DmmeError> {
    let mut out = vec![0u64; n as usize];
    decode_into(mask, m, n, &mut out)?;
    Ok(out)
}

/// Allocation-free form used inside the PE.
#[inline]
pub(crate) fn decode_into(mask: u64, m: u32, n: u32, out: &mut [u64]) -> Result<(), DmmeError> {
    debug_assert!(m == 64 || mask >> m == 0, "mask wider than the group");
    let found = mask.count_ones();
    if found > n {
        return Err(DmmeError::PatternViolation { found, allowed: n });
    }
    let mut rest = mask;
    for slot in out.iter_mut().take(n as usize) {
        // x & -x isolates the lowest set bit, XOR clears it
        let low = rest & rest.wrapping_neg();
        *slot = low;
        rest ^= low;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacResult {
    pub psum: i32,
    /// The exact sum left the 32-bit range and wrapped.
    pub overflow: bool,
}

/// `psum + Σ w_i·d_i` with 32-bit products and a wrapping 32-bit result.
#[inline]
pub fn n_parallel_mac(weights: &[i16], data: &[i16], psum: i32) -> MacResult {
    debug_assert_eq!(weights.len(), data.len());
    let tree: i64 = weights
        .iter()
        .zip(data)
        .map(|(&w, &d)| (w as i32 * d as i32) as i64)
        .sum();
    let exact = psum as i64 + tree;
    let wrapped = exact as i32;
    MacResult {
        psum: wrapped,
        overflow: wrapped as i64 != exact,
    }
}
