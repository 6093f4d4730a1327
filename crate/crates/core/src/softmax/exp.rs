use std::io::{self, Write};

use super::SoftmaxConfig;

/// Fractional bits of exponent values.
pub const EXP_FRAC_BITS: u32 = 16;

/// Exponent table sampled at the segment knots `floor + idx·seg`, so the last
/// entry is `e^0 = 1.0` and the first is the clamp value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpLut {
    entries: Vec<u32>,
    seg_raw: u32,
    seg_shift: u32,
    floor_raw: i32,
    frac_bits: u32,
}

impl ExpLut {
    pub fn new(config: &SoftmaxConfig) -> Self {
        config.validate().expect("invalid softmax config");
        let seg_raw = config.segment_raw();
        let floor_raw = config.clamp_floor_raw();
        let scale = (1u64 << config.frac_bits) as f64;
        let one = (1u64 << EXP_FRAC_BITS) as f64;
        let entries = (0..1u32 << config.lut_bits)
            .map(|i| {
                let x = (floor_raw as f64 + (i * seg_raw) as f64) / scale;
                (x.exp() * one).round() as u32
            })
            .collect();
        Self {
            entries,
            seg_raw,
            seg_shift: seg_raw.trailing_zeros(),
            floor_raw,
            frac_bits: config.frac_bits,
        }
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn floor_raw(&self) -> i32 {
        self.floor_raw
    }

    /// `e^x` for a raw fixed-point `x`, as an unsigned Q.16 value. Inputs
    /// are clamped to `[floor, 0]`; inside a segment the value is expanded
    /// to first order from the knot below.
    pub fn exp(&self, x_raw: i32) -> u32 {
        let t = (x_raw.clamp(self.floor_raw, 0) - self.floor_raw) as u32;
        let idx = (t >> self.seg_shift) as usize;
        let d = t & (self.seg_raw - 1);
        let prod = self.entries[idx] as u64 * ((1u64 << self.frac_bits) + d as u64);
        (prod >> self.frac_bits) as u32
    }

    /// Writes `index,x,raw,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,x,raw,value")?;
        let scale = (1u64 << self.frac_bits) as f64;
        for (i, &e) in self.entries.iter().enumerate() {
            let x = (self.floor_raw + (i as u32 * self.seg_raw) as i32) as f64 / scale;
            writeln!(w, "{i},{x},{e},{}", e as f64 / (1u64 << EXP_FRAC_BITS) as f64)?;
        }
        Ok(())
    }
}

/// Free-function form of [`ExpLut::exp`].
pub fn exp_approx(x_raw: i32, lut: &ExpLut) -> u32 {
    lut.exp(x_raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn exact(x_raw: i32, c: &SoftmaxConfig) -> f64 {
        (x_raw.clamp(c.clamp_floor_raw(), 0) as f64 / 1024.0).exp()
    }

    #[test]
    fn endpoints() {
        let c = SoftmaxConfig::default();
        let lut = ExpLut::new(&c);
        assert_eq!(lut.entries().len(), 64);
        assert_eq!(lut.exp(0), 1 << 16);
        assert_eq!(*lut.entries().last().unwrap(), 1 << 16);
        assert_eq!(lut.exp(-8 * 1024), lut.entries()[0]);
        assert_eq!(lut.exp(i16::MIN as i32), lut.entries()[0]);
        assert_eq!(lut.entries()[0], ((-7.875f64).exp() * 65536.0).round() as u32);
        assert_eq!(lut.exp(500), 1 << 16);
    }

    #[test]
    fn every_input_within_bound_and_monotone() {
        let c = SoftmaxConfig::default();
        let lut = ExpLut::new(&c);
        let (eps, a) = (c.exp_relative_bound(), c.exp_absolute_bound());
        let mut prev = 0u32;
        for x in i16::MIN as i32..=0 {
            let got = lut.exp(x);
            let e = exact(x, &c);
            assert!((got as f64 / 65536.0 - e).abs() <= e * eps + a, "x={x}");
            assert!(got >= prev, "not monotone at {x}");
            prev = got;
        }
    }

    #[test]
    fn random_sweep_10k() {
        let mut r = rng::seeded(42);
        for lut_bits in [4u32, 5, 6, 7] {
            let c = SoftmaxConfig { lut_bits, ..Default::default() };
            let lut = ExpLut::new(&c);
            let (eps, a) = (c.exp_relative_bound(), c.exp_absolute_bound());
            for _ in 0..10_000 {
                let x = r.gen_range(c.clamp_floor_raw()..=0);
                let e = exact(x, &c);
                assert!((lut.exp(x) as f64 / 65536.0 - e).abs() <= e * eps + a);
            }
        }
    }

    #[test]
    fn csv_dump() {
        let lut = ExpLut::new(&SoftmaxConfig::default());
        let mut buf = Vec::new();
        lut.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert!(text.lines().last().unwrap().starts_with("63,0,65536,1"));
    }
}
