//! Fixed-point helpers for the 16-bit datapath.

/// Fractional bits of activations and weights on the 16-bit datapath.
pub const FRAC_BITS: u32 = 10;

#[inline]
pub fn saturate_i16(v: i64) -> i32 {
    v.clamp(i16::MIN as i64, i16::MAX as i64) as i32
}

/// Rounds a wide accumulator down by `shift` bits (half away from -inf) and
/// saturates to 16 bits.
#[inline]
pub fn requantize(acc: i64, shift: u32) -> i32 {
    if shift == 0 {
        return saturate_i16(acc);
    }
    saturate_i16((acc + (1i64 << (shift - 1))) >> shift)
}

#[inline]
pub fn to_fixed(x: f64, frac_bits: u32) -> i32 {
    saturate_i16((x * (1u64 << frac_bits) as f64).round() as i64)
}

#[inline]
pub fn from_fixed(v: i32, frac_bits: u32) -> f64 {
    v as f64 / (1u64 << frac_bits) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requantize_rounds_and_saturates() {
        assert_eq!(requantize(1 << 10, 10), 1);
        assert_eq!(requantize((1 << 10) + 511, 10), 1);
        assert_eq!(requantize((1 << 10) + 512, 10), 2);
        assert_eq!(requantize(-513, 10), -1);
        assert_eq!(requantize(i64::from(i32::MAX), 0), i16::MAX as i32);
        assert_eq!(requantize(-(1 << 40), 10), i16::MIN as i32);
    }

    #[test]
    fn fixed_round_trip() {
        assert_eq!(to_fixed(1.5, FRAC_BITS), 1536);
        assert_eq!(from_fixed(-512, FRAC_BITS), -0.5);
        assert_eq!(to_fixed(1e9, FRAC_BITS), i16::MAX as i32);
    }
}
