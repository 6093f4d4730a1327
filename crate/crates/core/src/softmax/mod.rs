//! Bit-accurate model of the scalable softmax unit.
//!
//! `p` exponent lanes stream the input through a LUT + first-order Taylor
//! exponent, a partial-sum accumulator totals the exponents as they stream,
//! and a `q_out`-stage restoring divider normalizes each buffered exponent.
//! Exponent values are unsigned with [`EXP_FRAC_BITS`] fractional bits;
//! outputs are `q_out`-bit fractions.

mod divider;
mod exp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use divider::{pipelined_divide, DividerPipeline};
pub use exp::{exp_approx, ExpLut, EXP_FRAC_BITS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SoftmaxError {
    #[error("division by zero")]
    DivideByZero,
    #[error("numerator {num} exceeds denominator {den}")]
    NumeratorTooLarge { num: u64, den: u64 },
    #[error("invalid softmax config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftmaxConfig {
    /// Parallel lanes.
    pub p: u32,
    /// Output fraction width, equal to the divider pipeline depth.
    pub q_out: u32,
    /// log2 of the exponent LUT size.
    pub lut_bits: u32,
    /// Fractional bits of the 16-bit input.
    pub frac_bits: u32,
    /// Lower end of the input range covered by the LUT.
    pub x_min: f64,
    /// Subtract the vector maximum before the exponent.
    pub max_subtract: bool,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            p: 16,
            q_out: 16,
            lut_bits: 6,
            frac_bits: 10,
            x_min: -8.0,
            max_subtract: false,
        }
    }
}

impl SoftmaxConfig {
    pub fn validate(&self) -> Result<(), SoftmaxError> {
        let bad = |m: String| Err(SoftmaxError::InvalidConfig(m));
        if self.p < 1 {
            return bad("p must be >= 1".into());
        }
        if !(4..=16).contains(&self.q_out) {
            return bad(format!("q_out {} outside 4..=16", self.q_out));
        }
        if !(1..=12).contains(&self.lut_bits) {
            return bad(format!("lut_bits {} outside 1..=12", self.lut_bits));
        }
        if self.frac_bits > 14 {
            return bad(format!("frac_bits {} leaves no integer bits", self.frac_bits));
        }
        let span = -self.x_min * (1u64 << self.frac_bits) as f64;
        if !(span >= 1.0 && span.fract() == 0.0 && (span as u64).is_power_of_two()) {
            return bad(format!(
                "|x_min| * 2^frac_bits must be a power of two, got {span}"
            ));
        }
        if span as u64 > i16::MAX as u64 + 1 {
            return bad("x_min below the 16-bit input range".into());
        }
        if (span as u64) < (1u64 << self.lut_bits) {
            return bad("LUT finer than the input resolution".into());
        }
        Ok(())
    }

    /// Width of one LUT segment in raw input units.
    pub fn segment_raw(&self) -> u32 {
        let span = (-self.x_min * (1u64 << self.frac_bits) as f64) as u64;
        (span >> self.lut_bits) as u32
    }

    /// Segment width as a real number.
    pub fn segment(&self) -> f64 {
        self.segment_raw() as f64 / (1u64 << self.frac_bits) as f64
    }

    /// Most negative input the unit distinguishes: the lowest LUT knot.
    /// Inputs below it saturate to the smallest table entry.
    pub fn clamp_floor_raw(&self) -> i32 {
        -(((1i64 << self.lut_bits) - 1) * self.segment_raw() as i64) as i32
    }

    /// Relative error of the Taylor step, `seg^2 / 2`.
    pub fn exp_relative_bound(&self) -> f64 {
        let s = self.segment();
        s * s / 2.0
    }

    /// Absolute error of LUT rounding (half an LSB, scaled by the Taylor
    /// factor) plus product truncation, in real units.
    pub fn exp_absolute_bound(&self) -> f64 {
        (0.5 * (1.0 + self.segment()) + 1.0) / (1u64 << EXP_FRAC_BITS) as f64
    }

    /// Worst-case `|out_i - p_i|` for an element whose exact probability is
    /// `prob`, in a vector of `len` elements whose exact exponent sum is
    /// `exact_sum`.
    ///
    /// With `|e'_j - e_j| <= e_j·ε + a` for every exponent,
    /// `|e'_i/S' - e_i/S| <= (2·p_i·S·ε + a·(1 + p_i·len)) / S'`
    /// where `S' >= S·(1 - ε) - len·a`, plus one output LSB of truncation.
    pub fn element_error_bound(&self, prob: f64, exact_sum: f64, len: usize) -> f64 {
        let eps = self.exp_relative_bound();
        let a = self.exp_absolute_bound();
        let len = len as f64;
        let s_lo = exact_sum * (1.0 - eps) - len * a;
        assert!(s_lo > 0.0, "exponent sum too small for a finite bound");
        (2.0 * prob * exact_sum * eps + a * (1.0 + prob * len)) / s_lo
            + (0.5f64).powi(self.q_out as i32)
    }

    pub fn to_fixed_input(&self, x: f64) -> i32 {
        crate::fixed::to_fixed(x, self.frac_bits)
    }
}

/// Outcome of one softmax invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftmaxOutput {
    /// `q_out`-bit fractions.
    pub values: Vec<u32>,
    pub cycles: u64,
    pub stream_cycles: u64,
    pub divide_cycles: u64,
    /// Exponents written to / read back from the local buffer.
    pub buffer_writes: u64,
    pub buffer_reads: u64,
    /// Accesses outside the module; the unit keeps everything local.
    pub offchip_accesses: u64,
}

/// Cycle count of a `len`-element softmax: stream, divider fill, divide-out.
pub fn softmax_cycles(len: usize, config: &SoftmaxConfig) -> u64 {
    let d = len.div_ceil(config.p as usize) as u64;
    2 * d + config.q_out as u64
}

/// Runs the unit on one vector of raw fixed-point inputs.
pub fn softmax_vector(x: &[i32], config: &SoftmaxConfig) -> SoftmaxOutput {
    softmax_with_lut(x, config, &ExpLut::new(config))
}

pub fn softmax_with_lut(x: &[i32], config: &SoftmaxConfig, lut: &ExpLut) -> SoftmaxOutput {
    assert!(!x.is_empty(), "softmax of an empty vector");
    let p = config.p as usize;
    let shift = if config.max_subtract {
        *x.iter().max().unwrap()
    } else {
        0
    };

    // Phase 1: p exponents per cycle, buffered and accumulated on the fly.
    let mut buffer = Vec::with_capacity(x.len());
    let mut sum: u64 = 0;
    let mut stream_cycles = 0u64;
    for chunk in x.chunks(p) {
        stream_cycles += 1;
        for &v in chunk {
            let e = lut.exp(v - shift) as u64;
            buffer.push(e);
            sum += e;
        }
    }
    debug_assert!(sum > 0, "LUT entries are strictly positive");

    // Phase 2: p divisions issued per cycle into the Q-stage pipeline.
    let mut pipe = DividerPipeline::new(config.p, config.q_out);
    let mut values = vec![0u32; x.len()];
    let mut next = 0usize;
    let mut divide_cycles = 0u64;
    while next < buffer.len() || !pipe.is_empty() {
        let issue: Vec<(usize, u64)> = (next..(next + p).min(buffer.len()))
            .map(|i| (i, buffer[i]))
            .collect();
        next += issue.len();
        for (tag, q) in pipe.tick(&issue, sum) {
            values[tag] = q;
        }
        divide_cycles += 1;
    }

    SoftmaxOutput {
        values,
        cycles: stream_cycles + divide_cycles,
        stream_cycles,
        divide_cycles,
        buffer_writes: x.len() as u64,
        buffer_reads: x.len() as u64,
        offchip_accesses: 0,
    }
}

/// Exact softmax of the dequantized inputs in double precision, after the
/// same preprocessing the unit applies (optional max-subtract, then clamp).
pub fn reference_softmax(x: &[i32], config: &SoftmaxConfig) -> (Vec<f64>, f64) {
    let shift = if config.max_subtract {
        *x.iter().max().unwrap()
    } else {
        0
    };
    let floor = config.clamp_floor_raw();
    let scale = (1u64 << config.frac_bits) as f64;
    let e: Vec<f64> = x
        .iter()
        .map(|&v| (((v - shift).clamp(floor, 0)) as f64 / scale).exp())
        .collect();
    let s: f64 = e.iter().sum();
    (e.iter().map(|v| v / s).collect(), s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn cfg() -> SoftmaxConfig {
        SoftmaxConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        let c = cfg();
        c.validate().unwrap();
        assert_eq!(c.segment_raw(), 128);
        assert_eq!(c.clamp_floor_raw(), -63 * 128);
        assert!(SoftmaxConfig { q_out: 3, ..cfg() }.validate().is_err());
        assert!(SoftmaxConfig { x_min: -6.0, ..cfg() }.validate().is_err());
        assert!(SoftmaxConfig { p: 0, ..cfg() }.validate().is_err());
    }

    #[test]
    fn constant_vector_is_uniform() {
        for c in [-3000, -512, 0] {
            let out = softmax_vector(&[c; 4], &cfg());
            for &v in &out.values {
                assert!((v as i64 - (1 << 14)).abs() <= 1, "{v}");
            }
        }
    }

    #[test]
    fn single_element_saturates() {
        let out = softmax_vector(&[-700], &cfg());
        assert_eq!(out.values, vec![(1 << 16) - 1]);
    }

    #[test]
    fn cycle_formula_sweep() {
        for len in [1usize, 2, 7, 8, 9, 64, 100] {
            for p in [1u32, 2, 4, 8, 16] {
                for q in [4u32, 8, 12, 16] {
                    let c = SoftmaxConfig { p, q_out: q, ..cfg() };
                    let x: Vec<i32> = (0..len as i32).map(|i| -(i * 37 % 5000)).collect();
                    let out = softmax_vector(&x, &c);
                    assert_eq!(out.cycles, softmax_cycles(len, &c), "len={len} p={p} q={q}");
                    assert_eq!(out.offchip_accesses, 0);
                }
            }
        }
    }

    #[test]
    fn outputs_positive_and_sum_in_band() {
        let c = cfg();
        let mut r = rng::seeded(7);
        for _ in 0..200 {
            let len = r.gen_range(1..=96);
            let x: Vec<i32> = (0..len).map(|_| r.gen_range(-12000..=0)).collect();
            let out = softmax_vector(&x, &c);
            assert!(out.values.iter().all(|&v| v > 0));
            let sum: f64 = out.values.iter().map(|&v| v as f64).sum::<f64>() / 65536.0;
            let band = len as f64 / 65536.0;
            assert!((sum - 1.0).abs() <= band, "sum {sum} len {len}");
        }
    }

    #[test]
    fn monotone_in_input() {
        let c = cfg();
        let mut r = rng::seeded(8);
        for _ in 0..100 {
            let x: Vec<i32> = (0..32).map(|_| r.gen_range(-9000..=0)).collect();
            let out = softmax_vector(&x, &c);
            for i in 0..x.len() {
                for j in 0..x.len() {
                    if x[i] > x[j] {
                        assert!(out.values[i] >= out.values[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn shift_invariance_within_two_ulp() {
        let c = cfg();
        let mut r = rng::seeded(9);
        for _ in 0..50 {
            let x: Vec<i32> = (0..16).map(|_| r.gen_range(-3000..=-1000)).collect();
            let k = r.gen_range(1..=900);
            let y: Vec<i32> = x.iter().map(|v| v + k).collect();
            let a = softmax_vector(&x, &c);
            let b = softmax_vector(&y, &c);
            // shifts that are multiples of a segment keep the Taylor remainders
            let seg = c.segment_raw() as i32;
            let aligned: Vec<i32> = x.iter().map(|v| v + seg * 4).collect();
            let d = softmax_vector(&aligned, &c);
            for i in 0..x.len() {
                assert!((a.values[i] as i64 - d.values[i] as i64).abs() <= 2);
                let (pa, s) = reference_softmax(&x, &c);
                let tol = c.element_error_bound(pa[i], s, x.len()) * 2.0;
                let diff = (a.values[i] as f64 - b.values[i] as f64).abs() / 65536.0;
                assert!(diff <= tol, "diff {diff} tol {tol}");
            }
        }
    }

    #[test]
    fn random_vectors_within_analytic_bound() {
        let c = cfg();
        let lut = ExpLut::new(&c);
        let floor = c.clamp_floor_raw();
        let mut r = rng::seeded(10);
        for _ in 0..500 {
            let x: Vec<i32> = (0..64).map(|_| r.gen_range(floor..=0)).collect();
            let out = softmax_with_lut(&x, &c, &lut);
            let (p, s) = reference_softmax(&x, &c);
            for i in 0..64 {
                let got = out.values[i] as f64 / 65536.0;
                assert!((got - p[i]).abs() <= c.element_error_bound(p[i], s, 64));
            }
        }
    }

    #[test]
    fn max_subtract_handles_positive_inputs() {
        let c = SoftmaxConfig { max_subtract: true, ..cfg() };
        let out = softmax_vector(&[4096, 3072, 2048], &c);
        let (p, _) = reference_softmax(&[4096, 3072, 2048], &c);
        for i in 0..3 {
            assert!((out.values[i] as f64 / 65536.0 - p[i]).abs() < 0.02);
        }
        // without it, everything above zero saturates to the same exponent
        let flat = softmax_vector(&[4096, 3072, 2048], &cfg());
        assert_eq!(flat.values[0], flat.values[2]);
    }
}
