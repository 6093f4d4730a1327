//! Group-wise magnitude pruning and inherited dynamic pruning (IDP).
//!
//! Groups run down the rows of each column, matching the codec in
//! [`crate::nm`]. Masks are stored in the same line-major group order.

mod idp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::nm::GroupMask;

pub use idp::{
    run_idp, write_winner_set, IdpSchedule, ManifestEntry, RegularizerSign, Winner, WinnerSet,
};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("group {group} keeps {found} elements, limit {limit}")]
    PatternViolation {
        group: usize,
        found: u32,
        limit: u32,
    },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("training callback failed: {0}")]
    Callback(String),
    #[error(transparent)]
    Nm(#[from] crate::nm::NmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-group keep masks for a `rows x cols` weight matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTensor {
    rows: usize,
    cols: usize,
    m: u32,
    masks: Vec<GroupMask>,
}

impl MaskTensor {
    pub fn new(rows: usize, cols: usize, m: u32, masks: Vec<GroupMask>) -> Result<Self, PruneError> {
        let gpl = rows.div_ceil(m as usize);
        if masks.len() != gpl * cols {
            return Err(PruneError::DimMismatch(format!(
                "{} masks for {rows}x{cols} with m={m}",
                masks.len()
            )));
        }
        Ok(Self { rows, cols, m, masks })
    }

    pub fn filled(rows: usize, cols: usize, m: u32, keep_all: bool) -> Self {
        let gpl = rows.div_ceil(m as usize);
        let masks = (0..gpl * cols)
            .map(|i| {
                if keep_all {
                    GroupMask::full(group_width(rows, m, i % gpl))
                } else {
                    GroupMask::EMPTY
                }
            })
            .collect();
        Self { rows, cols, m, masks }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn masks(&self) -> &[GroupMask] {
        &self.masks
    }

    pub fn groups_per_line(&self) -> usize {
        self.rows.div_ceil(self.m as usize)
    }

    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        let m = self.m as usize;
        self.masks[c * self.groups_per_line() + r / m].is_set((r % m) as u32)
    }

    pub fn kept(&self) -> usize {
        self.masks.iter().map(|m| m.count() as usize).sum()
    }

    /// Shared validator: every group keeps at most `n` elements.
    pub fn check(&self, n: u32) -> Result<(), PruneError> {
        for (group, mask) in self.masks.iter().enumerate() {
            if mask.count() > n {
                return Err(PruneError::PatternViolation {
                    group,
                    found: mask.count(),
                    limit: n,
                });
            }
        }
        Ok(())
    }

    /// Every kept position of `self` is also kept in `other`.
    pub fn is_subset_of(&self, other: &MaskTensor) -> bool {
        self.masks.len() == other.masks.len()
            && self
                .masks
                .iter()
                .zip(&other.masks)
                .all(|(a, b)| a.is_subset_of(*b))
    }
}

fn group_width(rows: usize, m: u32, g: usize) -> u32 {
    (rows - g * m as usize).min(m as usize) as u32
}

/// Anything whose magnitude ranks for pruning.
pub trait Magnitude: Copy + Default {
    fn magnitude(self) -> f64;
    fn is_zero(self) -> bool;
}

impl Magnitude for f64 {
    fn magnitude(self) -> f64 {
        self.abs()
    }
    fn is_zero(self) -> bool {
        self == 0.0
    }
}

impl Magnitude for i32 {
    fn magnitude(self) -> f64 {
        (self as f64).abs()
    }
    fn is_zero(self) -> bool {
        self == 0
    }
}

/// Keeps the `n` largest magnitudes of every group of `m` consecutive rows.
///
/// Equal magnitudes keep the lower index, so groups with fewer than `n`
/// nonzeros are topped up with their lowest-index zeros.
pub fn group_topn_mask<T: Magnitude>(weights: &Matrix<T>, n: u32, m: u32) -> MaskTensor {
    assert!(n >= 1 && n <= m && m <= 64, "invalid pattern {n}:{m}");
    let (rows, cols) = weights.dims();
    let gpl = rows.div_ceil(m as usize);
    let mut masks = Vec::with_capacity(gpl * cols);
    let mut order: Vec<(f64, u32)> = Vec::with_capacity(m as usize);
    for c in 0..cols {
        for g in 0..gpl {
            let width = group_width(rows, m, g);
            order.clear();
            order.extend((0..width).map(|p| (weights.get(g * m as usize + p as usize, c).magnitude(), p)));
            order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mask = order
                .iter()
                .take(n as usize)
                .fold(GroupMask::EMPTY, |acc, &(_, p)| acc.with(p));
            masks.push(mask);
        }
    }
    MaskTensor { rows, cols, m, masks }
}

/// Mask recording only true nonzeros; the compress-time view of a matrix.
pub fn nonzero_mask<T: Magnitude>(weights: &Matrix<T>, m: u32) -> MaskTensor {
    let (rows, cols) = weights.dims();
    let gpl = rows.div_ceil(m as usize);
    let mut masks = Vec::with_capacity(gpl * cols);
    for c in 0..cols {
        for g in 0..gpl {
            let mut mask = GroupMask::EMPTY;
            for p in 0..group_width(rows, m, g) {
                if !weights.get(g * m as usize + p as usize, c).is_zero() {
                    mask = mask.with(p);
                }
            }
            masks.push(mask);
        }
    }
    MaskTensor { rows, cols, m, masks }
}

fn check_dims<T>(w: &Matrix<T>, other: (usize, usize), what: &str) -> Result<(), PruneError>
where
    T: Copy + Default,
{
    if w.dims() != other {
        return Err(PruneError::DimMismatch(format!(
            "weights {:?} vs {what} {:?}",
            w.dims(),
            other
        )));
    }
    Ok(())
}

/// `W ⊙ B`.
pub fn apply_mask<T: Magnitude>(weights: &Matrix<T>, mask: &MaskTensor) -> Result<Matrix<T>, PruneError> {
    check_dims(weights, (mask.rows, mask.cols), "mask")?;
    Ok(Matrix::from_fn(weights.rows(), weights.cols(), |r, c| {
        if mask.is_kept(r, c) {
            weights.get(r, c)
        } else {
            T::default()
        }
    }))
}

/// One backward step: `W - γ·g ± λ·((1 - B) ⊙ W)`, the sign chosen by
/// `sign` (`AsPrinted` adds the regularizer term).
pub fn dynamic_update_step(
    weights: &Matrix<f64>,
    mask: &MaskTensor,
    gradient: &Matrix<f64>,
    lr: f64,
    lambda: f64,
    sign: RegularizerSign,
) -> Result<Matrix<f64>, PruneError> {
    check_dims(weights, (mask.rows, mask.cols), "mask")?;
    check_dims(weights, gradient.dims(), "gradient")?;
    let s = sign.factor();
    Ok(Matrix::from_fn(weights.rows(), weights.cols(), |r, c| {
        let w = weights.get(r, c);
        let pruned = if mask.is_kept(r, c) { 0.0 } else { w };
        w - lr * gradient.get(r, c) + s * lambda * pruned
    }))
}

/// `1 - kept / elements` over the true (unpadded) extent.
pub fn sparsity_of(mask: &MaskTensor) -> f64 {
    let total = mask.rows * mask.cols;
    if total == 0 {
        return 1.0;
    }
    1.0 - mask.kept() as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn column(v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn top2_by_magnitude() {
        let mask = group_topn_mask(&column(&[0.5, -0.9, 0.1, 0.7]), 2, 4);
        assert_eq!(mask.masks(), &[GroupMask(0b1010)]);
    }

    #[test]
    fn all_ties_keep_lowest_index() {
        let mask = group_topn_mask(&column(&[0.0; 4]), 2, 4);
        assert_eq!(mask.masks(), &[GroupMask(0b0011)]);
        let mask = group_topn_mask(&column(&[0.0, 0.0, 3.0, 0.0]), 2, 4);
        assert_eq!(mask.masks(), &[GroupMask(0b0101)]);
    }

    #[test]
    fn partial_trailing_group() {
        let mask = group_topn_mask(&column(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 3, 4);
        assert_eq!(mask.masks(), &[GroupMask(0b1110), GroupMask(0b0011)]);
        mask.check(3).unwrap();
    }

    fn lex_first_best(mags: &[i32], n: usize) -> u64 {
        // combinations visited in lexicographic order of sorted index lists
        fn rec(mags: &[i32], n: usize, start: usize, cur: &mut Vec<usize>, best: &mut Option<(i64, u64)>) {
            if cur.len() == n {
                let sum: i64 = cur.iter().map(|&i| mags[i].unsigned_abs() as i64).sum();
                let bits = cur.iter().fold(0u64, |b, &i| b | 1 << i);
                if best.is_none_or(|(s, _)| sum > s) {
                    *best = Some((sum, bits));
                }
                return;
            }
            for i in start..mags.len() {
                cur.push(i);
                rec(mags, n, i + 1, cur, best);
                cur.pop();
            }
        }
        let mut best = None;
        rec(mags, n, 0, &mut Vec::new(), &mut best);
        best.unwrap().1
    }

    #[test]
    fn matches_subset_enumeration() {
        let mut r = rng::seeded(11);
        for _ in 0..500 {
            let vals: Vec<i32> = (0..8).map(|_| r.gen_range(-4..=4)).collect();
            let n = r.gen_range(1..=3u32);
            let w = Matrix::from_vec(8, 1, vals.clone()).unwrap();
            let got = group_topn_mask(&w, n, 8).masks()[0].bits();
            assert_eq!(got, lex_first_best(&vals, n as usize), "{vals:?} n={n}");
        }
    }

    #[test]
    fn permutation_equivariant_for_distinct_magnitudes() {
        let vals = [0.3, -1.2, 0.8, 2.5, -0.1, 0.9, 1.7, -0.4];
        let base = group_topn_mask(&column(&vals), 3, 8).masks()[0];
        let perm = [7usize, 2, 5, 0, 3, 6, 1, 4];
        let permuted: Vec<f64> = perm.iter().map(|&p| vals[p]).collect();
        let got = group_topn_mask(&column(&permuted), 3, 8).masks()[0];
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(got.is_set(i as u32), base.is_set(p as u32));
        }
    }

    #[test]
    fn apply_mask_identity_and_annihilator() {
        let mut r = rng::seeded(2);
        let w = rng::random_real(&mut r, 8, 3, 1.0);
        assert_eq!(apply_mask(&w, &MaskTensor::filled(8, 3, 4, true)).unwrap(), w);
        let z = apply_mask(&w, &MaskTensor::filled(8, 3, 4, false)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        assert!(apply_mask(&w, &MaskTensor::filled(4, 3, 4, true)).is_err());
    }

    #[test]
    fn apply_random_mask_positions() {
        let mut r = rng::seeded(9);
        let w = rng::random_real(&mut r, 16, 5, 1.0);
        let mask = group_topn_mask(&rng::random_real(&mut r, 16, 5, 1.0), 2, 8);
        let out = apply_mask(&w, &mask).unwrap();
        for row in 0..16 {
            for col in 0..5 {
                let expect = if mask.is_kept(row, col) { w.get(row, col) } else { 0.0 };
                assert_eq!(out.get(row, col), expect);
            }
        }
    }

    #[test]
    fn update_reduces_to_sgd() {
        let w = column(&[1.0, -2.0]);
        let g = column(&[0.5, 0.25]);
        let full = MaskTensor::filled(2, 1, 2, true);
        let out = dynamic_update_step(&w, &full, &g, 0.1, 0.7, RegularizerSign::AsPrinted).unwrap();
        assert_eq!(out.as_slice(), &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn regularizer_as_printed() {
        let w = column(&[1.0, 2.0]);
        let mask = MaskTensor::new(2, 1, 2, vec![GroupMask(0b01)]).unwrap();
        let g = column(&[0.0, 0.0]);
        let out = dynamic_update_step(&w, &mask, &g, 0.0, 0.1, RegularizerSign::AsPrinted).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.2]);
        let out = dynamic_update_step(&w, &mask, &g, 0.0, 0.1, RegularizerSign::Decay).unwrap();
        assert!((out.get(1, 0) - 1.8).abs() < 1e-12);
    }

    #[test]
    fn masked_quadratic_converges() {
        // loss 0.5 * ||W ⊙ B - T||^2 with a fixed mask, gradient (W⊙B - T)⊙B
        let mut r = rng::seeded(4);
        let t = rng::random_real(&mut r, 16, 4, 1.0);
        let mut w = rng::random_real(&mut r, 16, 4, 1.0);
        let mask = group_topn_mask(&w, 2, 4);
        for _ in 0..200 {
            let wm = apply_mask(&w, &mask).unwrap();
            let g = Matrix::from_fn(16, 4, |i, j| {
                if mask.is_kept(i, j) { wm.get(i, j) - t.get(i, j) } else { 0.0 }
            });
            w = dynamic_update_step(&w, &mask, &g, 0.1, 0.0, RegularizerSign::AsPrinted).unwrap();
        }
        for i in 0..16 {
            for j in 0..4 {
                if mask.is_kept(i, j) {
                    assert!((w.get(i, j) - t.get(i, j)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn sparsity_values() {
        let mut r = rng::seeded(1);
        let w = rng::random_real(&mut r, 64, 8, 1.0);
        assert_eq!(sparsity_of(&group_topn_mask(&w, 2, 4)), 0.5);
        assert_eq!(sparsity_of(&group_topn_mask(&w, 2, 16)), 0.875);
        assert_eq!(sparsity_of(&MaskTensor::filled(64, 8, 4, false)), 1.0);
    }

    #[test]
    fn check_flags_overfull_groups() {
        let mask = MaskTensor::new(4, 1, 4, vec![GroupMask(0b0111)]).unwrap();
        assert!(mask.check(3).is_ok());
        assert!(matches!(mask.check(2), Err(PruneError::PatternViolation { group: 0, found: 3, limit: 2 })));
    }
}
