use serde::{Deserialize, Serialize};

use super::{GroupAxis, GroupMask, NmConfig, NmError};
use crate::matrix::DenseMatrix;

/// Bitmap-packed N:M matrix.
///
/// Groups are ordered line-major: for every line of the non-reduction axis,
/// its `ceil(K / m)` groups follow in reduction order. Each group owns exactly
/// `n` value slots, the `i`-th slot pairing with the `i`-th set mask bit;
/// unused slots hold zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedMatrix {
    config: NmConfig,
    rows: usize,
    cols: usize,
    group_axis: GroupAxis,
    masks: Vec<GroupMask>,
    values: Vec<i32>,
}

impl CompressedMatrix {
    /// Assembles a matrix from raw parts, checking every structural invariant.
    pub fn from_parts(
        config: NmConfig,
        rows: usize,
        cols: usize,
        group_axis: GroupAxis,
        masks: Vec<GroupMask>,
        values: Vec<i32>,
    ) -> Result<Self, NmError> {
        let (k, j) = group_axis.extents(rows, cols);
        let gpl = k.div_ceil(config.m() as usize);
        let n = config.n() as usize;
        if masks.len() != gpl * j {
            return Err(NmError::CorruptStream(format!(
                "{} masks for {}x{} at {}",
                masks.len(),
                rows,
                cols,
                config
            )));
        }
        if values.len() != masks.len() * n {
            return Err(NmError::CorruptStream(format!(
                "{} value slots, expected {}",
                values.len(),
                masks.len() * n
            )));
        }
        let (lo, hi) = config.value_range();
        for (g, mask) in masks.iter().enumerate() {
            let width = (k - (g % gpl.max(1)) * config.m() as usize).min(config.m() as usize);
            if mask.count() > config.n() {
                return Err(NmError::PatternViolation {
                    group: g,
                    found: mask.count(),
                    allowed: config.n(),
                });
            }
            if !mask.is_subset_of(GroupMask::full(width as u32)) {
                return Err(NmError::CorruptStream(format!(
                    "group {g} marks positions beyond the matrix extent"
                )));
            }
            let slots = &values[g * n..(g + 1) * n];
            if slots[mask.count() as usize..].iter().any(|&v| v != 0) {
                return Err(NmError::CorruptStream(format!(
                    "group {g} has nonzero padding slots"
                )));
            }
            if let Some(&v) = slots.iter().find(|&&v| (v as i64) < lo || (v as i64) > hi) {
                return Err(NmError::ValueOutOfRange {
                    value: v as i64,
                    q: config.q(),
                });
            }
        }
        Ok(Self {
            config,
            rows,
            cols,
            group_axis,
            masks,
            values,
        })
    }

    pub fn config(&self) -> NmConfig {
        self.config
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn group_axis(&self) -> GroupAxis {
        self.group_axis
    }

    pub fn masks(&self) -> &[GroupMask] {
        &self.masks
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    /// Reduction-axis extent before padding.
    pub fn reduction_len(&self) -> usize {
        self.group_axis.extents(self.rows, self.cols).0
    }

    /// Extent of the non-reduction axis.
    pub fn lines(&self) -> usize {
        self.group_axis.extents(self.rows, self.cols).1
    }

    pub fn groups_per_line(&self) -> usize {
        self.reduction_len().div_ceil(self.config.m() as usize)
    }

    /// Mask and value slots of group `g` of line `line`.
    pub fn group(&self, line: usize, g: usize) -> (GroupMask, &[i32]) {
        let idx = line * self.groups_per_line() + g;
        let n = self.config.n() as usize;
        (self.masks[idx], &self.values[idx * n..(idx + 1) * n])
    }

    /// Number of stored (mask-set) elements.
    pub fn nnz(&self) -> usize {
        self.masks.iter().map(|m| m.count() as usize).sum()
    }
}

/// Packs an already N:M-sparse matrix. Groups run along `GroupAxis::Rows`.
pub fn compress(dense: &DenseMatrix, config: NmConfig) -> Result<CompressedMatrix, NmError> {
    compress_along(dense, config, GroupAxis::Rows)
}

pub fn compress_along(
    dense: &DenseMatrix,
    config: NmConfig,
    axis: GroupAxis,
) -> Result<CompressedMatrix, NmError> {
    let (rows, cols) = dense.dims();
    let (k, j) = axis.extents(rows, cols);
    let m = config.m() as usize;
    let n = config.n() as usize;
    let gpl = k.div_ceil(m);
    let (lo, hi) = config.value_range();
    let at = |line: usize, red: usize| match axis {
        GroupAxis::Rows => dense.get(red, line),
        GroupAxis::Cols => dense.get(line, red),
    };

    let mut masks = Vec::with_capacity(gpl * j);
    let mut values = Vec::with_capacity(gpl * j * n);
    for line in 0..j {
        for g in 0..gpl {
            let group_idx = masks.len();
            let mut mask = GroupMask::EMPTY;
            let start = values.len();
            for p in 0..m {
                let red = g * m + p;
                // zero padding past the true extent
                let v = if red < k { at(line, red) } else { 0 };
                if v == 0 {
                    continue;
                }
                if (v as i64) < lo || (v as i64) > hi {
                    return Err(NmError::ValueOutOfRange {
                        value: v as i64,
                        q: config.q(),
                    });
                }
                if mask.count() as usize == n {
                    let found = mask.count()
                        + (p..m)
                            .filter(|&pp| g * m + pp < k && at(line, g * m + pp) != 0)
                            .count() as u32;
                    return Err(NmError::PatternViolation {
                        group: group_idx,
                        found,
                        allowed: config.n(),
                    });
                }
                mask = mask.with(p as u32);
                values.push(v);
            }
            values.resize(start + n, 0);
            masks.push(mask);
        }
    }
    Ok(CompressedMatrix {
        config,
        rows,
        cols,
        group_axis: axis,
        masks,
        values,
    })
}

pub fn decompress(c: &CompressedMatrix) -> Result<DenseMatrix, NmError> {
    let k = c.reduction_len();
    let j = c.lines();
    let gpl = c.groups_per_line();
    let n = c.config.n() as usize;
    if c.masks.len() != gpl * j || c.values.len() != c.masks.len() * n {
        return Err(NmError::CorruptStream(
            "mask/value lengths disagree with dims".into(),
        ));
    }
    let m = c.config.m() as usize;
    let mut out = DenseMatrix::zeros(c.rows, c.cols);
    for line in 0..j {
        for g in 0..gpl {
            let (mask, slots) = c.group(line, g);
            if mask.count() as usize > n {
                return Err(NmError::PatternViolation {
                    group: line * gpl + g,
                    found: mask.count(),
                    allowed: n as u32,
                });
            }
            for (slot, p) in mask.positions().enumerate() {
                let red = g * m + p as usize;
                if red >= k {
                    return Err(NmError::CorruptStream(format!(
                        "mask bit {p} of group {} lies in padding",
                        line * gpl + g
                    )));
                }
                match c.group_axis {
                    GroupAxis::Rows => out.set(red, line, slots[slot]),
                    GroupAxis::Cols => out.set(line, red, slots[slot]),
                }
            }
        }
    }
    Ok(out)
}
