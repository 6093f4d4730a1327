//! N:M sparse data model, bitmap codec, storage-cost formulas and the NMSP
//! on-disk format.

mod codec;
mod cost;
mod nmsp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{compress, compress_along, decompress, CompressedMatrix};
pub use cost::{
    compression_ratio, dense_bits, storage_cost, MatrixDims, StorageFormat,
    DEFAULT_STEP_BITS,
};
pub use nmsp::{read_nmsp, write_nmsp, HEADER_LEN, NMSP_MAGIC, NMSP_VERSION};

#[derive(Debug, Error)]
pub enum NmError {
    #[error("invalid N:M config: {0}")]
    InvalidConfig(String),
    #[error("group {group} holds {found} nonzeros, pattern allows {allowed}")]
    PatternViolation {
        group: usize,
        found: u32,
        allowed: u32,
    },
    #[error("value {value} does not fit in {q} signed bits")]
    ValueOutOfRange { value: i64, q: u8 },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported NMSP version {0}")]
    UnsupportedVersion(u8),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An N:M pattern plus the storage width of each kept value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawNm")]
pub struct NmConfig {
    n: u32,
    m: u32,
    q: u8,
}

#[derive(Deserialize)]
struct RawNm {
    n: u32,
    m: u32,
    q: u8,
}

impl TryFrom<RawNm> for NmConfig {
    type Error = NmError;
    fn try_from(r: RawNm) -> Result<Self, NmError> {
        NmConfig::new(r.n, r.m, r.q)
    }
}

pub const VALID_Q: [u8; 4] = [4, 8, 16, 32];

impl NmConfig {
    pub fn new(n: u32, m: u32, q: u8) -> Result<Self, NmError> {
        if !(1 <= n && n <= m && m <= 64) {
            return Err(NmError::InvalidConfig(format!(
                "need 1 <= n <= m <= 64, got {n}:{m}"
            )));
        }
        if !VALID_Q.contains(&q) {
            return Err(NmError::InvalidConfig(format!(
                "q must be one of {VALID_Q:?}, got {q}"
            )));
        }
        Ok(Self { n, m, q })
    }

    /// `n:m` with 16-bit values.
    pub fn pattern(n: u32, m: u32) -> Result<Self, NmError> {
        Self::new(n, m, 16)
    }

    #[inline]
    pub fn n(&self) -> u32 {
        self.n
    }

    #[inline]
    pub fn m(&self) -> u32 {
        self.m
    }

    #[inline]
    pub fn q(&self) -> u8 {
        self.q
    }

    pub fn with_q(self, q: u8) -> Result<Self, NmError> {
        Self::new(self.n, self.m, q)
    }

    pub fn with_n(self, n: u32) -> Result<Self, NmError> {
        Self::new(n, self.m, self.q)
    }

    pub fn is_dense(&self) -> bool {
        self.n == self.m
    }

    /// Fraction of pruned positions in a fully populated pattern.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.n as f64 / self.m as f64
    }

    pub fn value_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.q - 1);
        (-half, half - 1)
    }
}

impl fmt::Display for NmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

/// Parses `N:M` (q defaults to 16) or `N:M/q`.
impl FromStr for NmConfig {
    type Err = NmError;

    fn from_str(s: &str) -> Result<Self, NmError> {
        let bad = || NmError::InvalidConfig(format!("cannot parse {s:?}, expected N:M or N:M/q"));
        let (pat, q) = match s.split_once('/') {
            Some((p, q)) => (p, q.trim().parse::<u8>().map_err(|_| bad())?),
            None => (s, 16),
        };
        let (n, m) = pat.split_once(':').ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let m = m.trim().parse().map_err(|_| bad())?;
        NmConfig::new(n, m, q)
    }
}

/// Which matrix axis the groups run along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum GroupAxis {
    /// Groups are consecutive rows of one column; the row index is the
    /// reduction dimension (weights used as `x · W`).
    #[default]
    Rows,
    /// Groups are consecutive columns of one row.
    Cols,
}

impl GroupAxis {
    pub fn code(self) -> u8 {
        match self {
            GroupAxis::Rows => 0,
            GroupAxis::Cols => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(GroupAxis::Rows),
            1 => Some(GroupAxis::Cols),
            _ => None,
        }
    }

    /// (reduction extent, other extent) for a `rows x cols` matrix.
    pub fn extents(self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            GroupAxis::Rows => (rows, cols),
            GroupAxis::Cols => (cols, rows),
        }
    }
}

/// Keep-bits of one group. Bit `i` (LSB = 0) marks element `i` of the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GroupMask(pub u64);

impl GroupMask {
    pub const EMPTY: GroupMask = GroupMask(0);

    pub fn full(width: u32) -> Self {
        if width >= 64 {
            GroupMask(u64::MAX)
        } else {
            GroupMask((1u64 << width) - 1)
        }
    }

    #[inline]
    pub fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    #[inline]
    pub fn is_set(self, i: u32) -> bool {
        (self.0 >> i) & 1 == 1
    }

    pub fn with(self, i: u32) -> Self {
        GroupMask(self.0 | (1u64 << i))
    }

    /// Set positions in ascending order.
    pub fn positions(self) -> impl Iterator<Item = u32> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let p = bits.trailing_zeros();
                bits &= bits - 1;
                Some(p)
            }
        })
    }

    pub fn is_subset_of(self, other: GroupMask) -> bool {
        self.0 & !other.0 == 0
    }
}
