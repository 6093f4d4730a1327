use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{GroupAxis, NmConfig};

pub const DEFAULT_STEP_BITS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageFormat {
    Bitmap,
    Coo,
    Csr,
    Csc,
    /// Each nonzero stores its distance from the previous one in `step_bits`.
    StepIndex { step_bits: u32 },
}

impl StorageFormat {
    pub const ALL_DEFAULT: [StorageFormat; 5] = [
        StorageFormat::Bitmap,
        StorageFormat::Coo,
        StorageFormat::Csr,
        StorageFormat::Csc,
        StorageFormat::StepIndex {
            step_bits: DEFAULT_STEP_BITS,
        },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StorageFormat::Bitmap => "bitmap",
            StorageFormat::Coo => "coo",
            StorageFormat::Csr => "csr",
            StorageFormat::Csc => "csc",
            StorageFormat::StepIndex { .. } => "step_index",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixDims {
    pub rows: u64,
    pub cols: u64,
    pub axis: GroupAxis,
}

impl MatrixDims {
    pub fn new(rows: u64, cols: u64) -> Self {
        Self {
            rows,
            cols,
            axis: GroupAxis::Rows,
        }
    }
}

fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

/// `qC / (q * ceil(C/M) * N + C)` with `C` the group-axis extent.
pub fn compression_ratio(config: NmConfig, cols_along_group_axis: u64) -> Ratio<u64> {
    let c = cols_along_group_axis;
    assert!(c >= 1, "group-axis extent must be positive");
    let q = config.q() as u64;
    let groups = c.div_ceil(config.m() as u64);
    Ratio::new(q * c, q * groups * config.n() as u64 + c)
}

pub fn dense_bits(dims: MatrixDims, q: u8) -> u64 {
    q as u64 * dims.rows * dims.cols
}

/// Total storage in bits of a `dims` matrix with `nnz` stored values.
pub fn storage_cost(format: StorageFormat, dims: MatrixDims, config: NmConfig, nnz: u64) -> u64 {
    let MatrixDims { rows, cols, axis } = dims;
    assert!(nnz <= rows * cols, "nnz exceeds matrix size");
    let q = config.q() as u64;
    match format {
        StorageFormat::Bitmap => {
            let (k, j) = axis.extents(rows as usize, cols as usize);
            let groups = (k as u64).div_ceil(config.m() as u64);
            q * groups * config.n() as u64 * j as u64 + rows * cols
        }
        StorageFormat::Coo => nnz * (q + ceil_log2(rows) + ceil_log2(cols)),
        StorageFormat::Csr => nnz * (q + ceil_log2(cols)) + (rows + 1) * ceil_log2(nnz + 1),
        StorageFormat::Csc => nnz * (q + ceil_log2(rows)) + (cols + 1) * ceil_log2(nnz + 1),
        StorageFormat::StepIndex { step_bits } => nnz * (q + step_bits as u64),
    }
}
