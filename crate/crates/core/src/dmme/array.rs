use serde::{Deserialize, Serialize};

use super::selector::{decode_into, n_parallel_mac};
use super::{DmmeError, MatMulMode};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PeMode {
    DenseDense,
    SparseDense,
    Shifting,
    #[default]
    Idle,
}

impl From<MatMulMode> for PeMode {
    fn from(m: MatMulMode) -> Self {
        match m {
            MatMulMode::DenseDense => PeMode::DenseDense,
            MatMulMode::SparseDense => PeMode::SparseDense,
        }
    }
}

/// Register snapshot of one PE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeState {
    pub psum: i32,
    pub west_regs: Vec<i16>,
    pub north_regs: Vec<i16>,
    pub mask_reg: u64,
    pub mode: PeMode,
}

/// Activity of one array in one cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub active_pes: u64,
    pub macs: u64,
    pub selector_ops: u64,
    pub overflows: u64,
    /// Largest MAC count issued by a single PE.
    pub max_pe_macs: u32,
}

/// One `r x c` array. Weights enter row `i` from the west and move one PE
/// east per cycle; activations enter column `j` from the north and move one
/// PE south per cycle.
#[derive(Debug, Clone)]
pub struct SystolicArray {
    r: usize,
    c: usize,
    n: usize,
    m: usize,
    mode: PeMode,
    psum: Vec<i32>,
    west: Vec<i16>,
    mask: Vec<u64>,
    west_valid: Vec<bool>,
    north: Vec<i16>,
    north_valid: Vec<bool>,
    in_west: Vec<i16>,
    in_mask: Vec<u64>,
    in_west_valid: Vec<bool>,
    in_north: Vec<i16>,
    in_north_valid: Vec<bool>,
}

impl SystolicArray {
    pub fn new(r: usize, c: usize, n: usize, m: usize) -> Self {
        let pes = r * c;
        Self {
            r,
            c,
            n,
            m,
            mode: PeMode::Idle,
            psum: vec![0; pes],
            west: vec![0; pes * n],
            mask: vec![0; pes],
            west_valid: vec![false; pes],
            north: vec![0; pes * m],
            north_valid: vec![false; pes],
            in_west: vec![0; r * n],
            in_mask: vec![0; r],
            in_west_valid: vec![false; r],
            in_north: vec![0; c * m],
            in_north_valid: vec![false; c],
        }
    }

    pub fn rows(&self) -> usize {
        self.r
    }

    pub fn cols(&self) -> usize {
        self.c
    }

    pub fn mode(&self) -> PeMode {
        self.mode
    }

    /// Clears every register and enters `mode`.
    pub fn reset(&mut self, mode: PeMode) {
        self.mode = mode;
        self.psum.fill(0);
        self.west.fill(0);
        self.mask.fill(0);
        self.west_valid.fill(false);
        self.north.fill(0);
        self.north_valid.fill(false);
        self.clear_inputs();
    }

    fn clear_inputs(&mut self) {
        self.in_west_valid.fill(false);
        self.in_north_valid.fill(false);
    }

    /// Drives row `row`'s western input for the next cycle. Dense mode uses
    /// the `n` weights only; sparse mode also latches the group mask.
    pub fn drive_west(&mut self, row: usize, weights: &[i16], mask: u64) {
        self.in_west[row * self.n..(row + 1) * self.n].copy_from_slice(weights);
        self.in_mask[row] = mask;
        self.in_west_valid[row] = true;
    }

    /// Drives column `col`'s northern input: `n` elements in dense mode,
    /// a full `m`-element group in sparse mode.
    pub fn drive_north(&mut self, col: usize, data: &[i16]) {
        let base = col * self.m;
        self.in_north[base..base + data.len()].copy_from_slice(data);
        self.in_north[base + data.len()..base + self.m].fill(0);
        self.in_north_valid[col] = true;
    }

    /// One compute cycle. PEs update from the south-east corner back to the
    /// north-west so every PE latches its neighbors' previous-cycle values.
    pub fn step(&mut self) -> Result<StepStats, DmmeError> {
        let (n, m, c) = (self.n, self.m, self.c);
        let sparse = match self.mode {
            PeMode::DenseDense => false,
            PeMode::SparseDense => true,
            other => panic!("compute step in {other:?} mode"),
        };
        let mut stats = StepStats::default();
        let mut onehots = [0u64; 64];
        let mut picked = [0i16; 64];
        for i in (0..self.r).rev() {
            for j in (0..c).rev() {
                let pe = i * c + j;
                if j == 0 {
                    self.west[pe * n..(pe + 1) * n]
                        .copy_from_slice(&self.in_west[i * n..(i + 1) * n]);
                    self.mask[pe] = self.in_mask[i];
                    self.west_valid[pe] = self.in_west_valid[i];
                } else {
                    self.west.copy_within((pe - 1) * n..pe * n, pe * n);
                    self.mask[pe] = self.mask[pe - 1];
                    self.west_valid[pe] = self.west_valid[pe - 1];
                }
                if i == 0 {
                    self.north[pe * m..(pe + 1) * m]
                        .copy_from_slice(&self.in_north[j * m..(j + 1) * m]);
                    self.north_valid[pe] = self.in_north_valid[j];
                } else {
                    self.north.copy_within((pe - c) * m..(pe - c + 1) * m, pe * m);
                    self.north_valid[pe] = self.north_valid[pe - c];
                }
                if !(self.west_valid[pe] && self.north_valid[pe]) {
                    continue;
                }
                let w = &self.west[pe * n..(pe + 1) * n];
                let d = &self.north[pe * m..(pe + 1) * m];
                let r = if sparse {
                    decode_into(self.mask[pe], m as u32, n as u32, &mut onehots[..n])?;
                    for k in 0..n {
                        let oh = onehots[k];
                        picked[k] = if oh == 0 { 0 } else { d[oh.trailing_zeros() as usize] };
                    }
                    stats.selector_ops += 1;
                    n_parallel_mac(w, &picked[..n], self.psum[pe])
                } else {
                    n_parallel_mac(w, &d[..n], self.psum[pe])
                };
                self.psum[pe] = r.psum;
                stats.overflows += r.overflow as u64;
                stats.active_pes += 1;
                stats.macs += n as u64;
                stats.max_pe_macs = stats.max_pe_macs.max(n as u32);
            }
        }
        self.clear_inputs();
        Ok(stats)
    }

    /// Accumulator contents, row-major `r x c`.
    pub fn psum_snapshot(&self) -> DenseMatrix {
        DenseMatrix::from_vec(self.r, self.c, self.psum.clone()).expect("psum dims")
    }

    pub fn pe_state(&self, row: usize, col: usize) -> PeState {
        let pe = row * self.c + col;
        PeState {
            psum: self.psum[pe],
            west_regs: self.west[pe * self.n..(pe + 1) * self.n].to_vec(),
            north_regs: self.north[pe * self.m..(pe + 1) * self.m].to_vec(),
            mask_reg: self.mask[pe],
            mode: self.mode,
        }
    }

    /// Shifts results out to the east, one column per cycle. Returns the
    /// drained `r x c` tile and the number of shift cycles (`c`).
    pub fn drain_results(&mut self) -> (DenseMatrix, usize) {
        self.mode = PeMode::Shifting;
        let (r, c) = (self.r, self.c);
        let mut tile = DenseMatrix::zeros(r, c);
        for cycle in 0..c {
            // the eastmost column leaves the array; it held column c-1-cycle
            for i in 0..r {
                tile.set(i, c - 1 - cycle, self.psum[i * c + c - 1]);
            }
            for i in 0..r {
                for j in (0..c).rev() {
                    self.psum[i * c + j] = if j == 0 { 0 } else { self.psum[i * c + j - 1] };
                }
            }
        }
        self.mode = PeMode::Idle;
        (tile, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pe_drains_in_one_cycle() {
        let mut a = SystolicArray::new(1, 1, 1, 2);
        a.reset(PeMode::DenseDense);
        a.drive_west(0, &[3], 0);
        a.drive_north(0, &[5]);
        a.step().unwrap();
        let (tile, cycles) = a.drain_results();
        assert_eq!(cycles, 1);
        assert_eq!(tile.get(0, 0), 15);
    }

    #[test]
    fn drain_matches_snapshot() {
        let mut a = SystolicArray::new(3, 4, 1, 1);
        a.reset(PeMode::DenseDense);
        for v in 0..12 {
            a.psum[v] = v as i32 * 7 - 20;
        }
        let snap = a.psum_snapshot();
        let (tile, cycles) = a.drain_results();
        assert_eq!(cycles, 4);
        assert_eq!(tile, snap);
        assert!(a.psum.iter().all(|&p| p == 0));
    }

    #[test]
    fn operands_meet_at_skewed_cycle() {
        // row i and column j are driven i and j cycles late; they meet in
        // PE(i,j) at cycle i+j
        let mut a = SystolicArray::new(2, 3, 1, 1);
        a.reset(PeMode::DenseDense);
        let mut per_cycle = Vec::new();
        for t in 0..4 {
            if t < 2 {
                a.drive_west(t, &[1], 0);
            }
            if t < 3 {
                a.drive_north(t, &[1]);
            }
            per_cycle.push(a.step().unwrap().active_pes);
        }
        assert_eq!(per_cycle, vec![1, 2, 2, 1]);
        assert_eq!(a.psum_snapshot().as_slice(), &[1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn sparse_pe_selects_by_mask() {
        let mut a = SystolicArray::new(1, 1, 2, 4);
        a.reset(PeMode::SparseDense);
        a.drive_west(0, &[10, 100], 0b1010);
        a.drive_north(0, &[1, 2, 3, 4]);
        let s = a.step().unwrap();
        assert_eq!(s.selector_ops, 1);
        assert_eq!(s.macs, 2);
        assert_eq!(a.pe_state(0, 0).psum, 10 * 2 + 100 * 4);
        assert_eq!(a.pe_state(0, 0).mask_reg, 0b1010);
    }
}
