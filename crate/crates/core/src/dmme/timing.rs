use serde::{Deserialize, Serialize};

use super::{EngineGeometry, MatMulMode};

/// Whether the final pass's shift-out is part of `total_cycles`. With it
/// excluded, the 1:2 two-head 1x2 engine computes the 2x4 by 4x2 product in
/// 5 dense and 3 sparse cycles.
pub const COUNT_TRAILING_DRAIN: bool = false;

/// Closed-form schedule of one MatMul.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub passes: u64,
    pub fill_skew: u64,
    pub steady_per_pass: u64,
    pub drain_per_pass: u64,
    pub compute_cycles: u64,
    pub drain_cycles: u64,
    pub drain_tail: u64,
    pub total_cycles: u64,
}

/// Number of passes for `heads` independent `J x K` by `K x L` products.
///
/// Dense mode gives each array its own `r x c` output tile (any head, any
/// row tile) while all arrays of a pass share one token tile. Sparse mode
/// broadcasts one activation word to all arrays, so the arrays split the
/// `h·r` output rows of a single tile.
pub fn pass_count(mode: MatMulMode, heads: usize, j: usize, l: usize, g: &EngineGeometry) -> u64 {
    let jt = j.div_ceil(g.c());
    let per_tile = match mode {
        MatMulMode::DenseDense => (heads * l.div_ceil(g.r())).div_ceil(g.h()),
        MatMulMode::SparseDense => heads * l.div_ceil(g.h() * g.r()),
    };
    (jt * per_tile) as u64
}

/// Steps per pass: one `n`-slice of K per cycle dense, one group sparse.
pub fn steady_steps(mode: MatMulMode, k: usize, g: &EngineGeometry) -> u64 {
    match mode {
        MatMulMode::DenseDense => k.div_ceil(g.n()) as u64,
        MatMulMode::SparseDense => k.div_ceil(g.m()) as u64,
    }
}

pub fn predict_timing(
    mode: MatMulMode,
    heads: usize,
    j: usize,
    k: usize,
    l: usize,
    g: &EngineGeometry,
) -> Timing {
    let passes = pass_count(mode, heads, j, l, g);
    let fill = g.fill_skew() as u64;
    let steady = steady_steps(mode, k, g);
    let drain = g.c() as u64;
    let compute = passes * (fill + steady);
    let between = passes.saturating_sub(1) * drain;
    let tail = if passes > 0 { drain } else { 0 };
    Timing {
        passes,
        fill_skew: fill,
        steady_per_pass: steady,
        drain_per_pass: drain,
        compute_cycles: compute,
        drain_cycles: between,
        drain_tail: tail,
        total_cycles: compute + between + if COUNT_TRAILING_DRAIN { tail } else { 0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nm::NmConfig;

    fn figure() -> EngineGeometry {
        EngineGeometry::new(2, 1, 2, NmConfig::pattern(1, 2).unwrap()).unwrap()
    }

    #[test]
    fn calibration_pins_figure_counts() {
        const { assert!(!COUNT_TRAILING_DRAIN) };
        let g = figure();
        let d = predict_timing(MatMulMode::DenseDense, 1, 2, 4, 2, &g);
        let s = predict_timing(MatMulMode::SparseDense, 1, 2, 4, 2, &g);
        assert_eq!((d.fill_skew, d.steady_per_pass, d.total_cycles), (1, 4, 5));
        assert_eq!((s.fill_skew, s.steady_per_pass, s.total_cycles), (1, 2, 3));
    }

    #[test]
    fn speedup_bounded_by_m_over_n() {
        for (n, m) in [(1u32, 2u32), (2, 4), (2, 8), (1, 8), (4, 8), (4, 4)] {
            let nm = NmConfig::pattern(n, m).unwrap();
            for (r, c) in [(1, 1), (2, 3), (8, 16)] {
                let g = EngineGeometry::new((m / n) as usize, r, c, nm).unwrap();
                for j in [1, 5, 17, 64] {
                    for k in [1, 3, 8, 31, 64, 200] {
                        for l in [1, 2, 9, 40, 64] {
                            let d = predict_timing(MatMulMode::DenseDense, 1, j, k, l, &g);
                            let s = predict_timing(MatMulMode::SparseDense, 1, j, k, l, &g);
                            assert!(s.total_cycles <= d.total_cycles);
                            assert!(d.total_cycles * n as u64 <= s.total_cycles * m as u64);
                            if n < m && k > n as usize {
                                assert!(s.total_cycles < d.total_cycles);
                            }
                        }
                    }
                }
            }
        }
    }
}
