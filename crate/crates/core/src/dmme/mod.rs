//! Cycle-stepped model of the dense/sparse MatMul engine: `h` systolic
//! arrays of `r x c` unified PEs fed from a `c`-banked input memory.
//!
//! Rows of an array hold output features and receive weights from the west;
//! columns hold tokens and receive activations from the north. Results stay
//! in the PEs until they are shifted out to the east.

mod array;
mod bank;
mod run;
mod selector;
mod timing;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nm::NmConfig;

pub use array::{PeMode, PeState, SystolicArray};
pub use bank::{bank_address, BankAccess, Routing};
pub use run::{run_dense, run_forced_dense, run_matmul, run_sparse, MatMulOutput, Rhs};
pub use selector::{n_parallel_mac, selector_decode, MacResult};
pub use timing::{predict_timing, Timing};
pub use trace::{CycleRecord, CycleTrace, TraceLevel, TraceSummary};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DmmeError {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("group mask has {found} set bits, pattern allows {allowed}")]
    PatternViolation { found: u32, allowed: u32 },
    #[error("operand {value} does not fit the 16-bit datapath")]
    OperandRange { value: i64 },
}

/// Operand kinds of a MatMul.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatMulMode {
    /// Both operands dense, e.g. attention score and context products.
    DenseDense,
    /// Dense activations times N:M compressed weights.
    SparseDense,
}

/// `h` arrays of `r x c` PEs built for one N:M pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct EngineGeometry {
    h: usize,
    r: usize,
    c: usize,
    nm: NmConfig,
}

#[derive(Deserialize)]
struct RawGeometry {
    h: usize,
    r: usize,
    c: usize,
    nm: NmConfig,
}

impl TryFrom<RawGeometry> for EngineGeometry {
    type Error = DmmeError;
    fn try_from(g: RawGeometry) -> Result<Self, DmmeError> {
        EngineGeometry::new(g.h, g.r, g.c, g.nm)
    }
}

impl EngineGeometry {
    pub fn new(h: usize, r: usize, c: usize, nm: NmConfig) -> Result<Self, DmmeError> {
        if h == 0 || r == 0 || c == 0 {
            return Err(DmmeError::GeometryMismatch(format!(
                "h, r, c must be >= 1, got {h}x{r}x{c}"
            )));
        }
        if nm.n() as usize * h != nm.m() as usize {
            return Err(DmmeError::GeometryMismatch(format!(
                "n*h must equal m: {}*{h} != {}",
                nm.n(),
                nm.m()
            )));
        }
        Ok(Self { h, r, c, nm })
    }

    /// `m/n` heads of 8 x 16 arrays.
    pub fn with_defaults(nm: NmConfig) -> Result<Self, DmmeError> {
        if !nm.m().is_multiple_of(nm.n()) {
            return Err(DmmeError::GeometryMismatch(format!("n does not divide m in {nm}")));
        }
        Self::new((nm.m() / nm.n()) as usize, 8, 16, nm)
    }

    /// Parses `HxRxC`.
    pub fn parse(dims: &str, nm: NmConfig) -> Result<Self, DmmeError> {
        let parts: Vec<usize> = dims
            .split(['x', 'X'])
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| DmmeError::GeometryMismatch(format!("cannot parse {dims:?} as HxRxC")))?;
        match parts[..] {
            [h, r, c] => Self::new(h, r, c, nm),
            _ => Err(DmmeError::GeometryMismatch(format!("expected HxRxC, got {dims:?}"))),
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn nm(&self) -> NmConfig {
        self.nm
    }

    pub fn n(&self) -> usize {
        self.nm.n() as usize
    }

    pub fn m(&self) -> usize {
        self.nm.m() as usize
    }

    pub fn pe_count(&self) -> usize {
        self.h * self.r * self.c
    }

    /// Peak MACs per cycle over all heads.
    pub fn mac_units(&self) -> usize {
        self.pe_count() * self.n()
    }

    /// Skew for the last PE of an array to see its first operands.
    pub fn fill_skew(&self) -> usize {
        (self.r - 1) + (self.c - 1)
    }
}

impl fmt::Display for EngineGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{} @ {}", self.h, self.r, self.c, self.nm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_constraint() {
        let nm = NmConfig::pattern(2, 8).unwrap();
        assert!(EngineGeometry::new(4, 8, 16, nm).is_ok());
        assert!(EngineGeometry::new(2, 8, 16, nm).is_err());
        assert!(EngineGeometry::new(4, 0, 16, nm).is_err());
        let g = EngineGeometry::with_defaults(nm).unwrap();
        assert_eq!((g.h(), g.r(), g.c(), g.mac_units()), (4, 8, 16, 1024));
        assert_eq!(EngineGeometry::parse("4x8x16", nm).unwrap(), g);
        assert!(EngineGeometry::parse("4x8", nm).is_err());
        assert!(EngineGeometry::with_defaults(NmConfig::pattern(3, 8).unwrap()).is_err());
    }

    #[test]
    fn geometry_serde_validates() {
        let json = r#"{"h":2,"r":1,"c":2,"nm":{"n":1,"m":2,"q":16}}"#;
        let g: EngineGeometry = serde_json::from_str(json).unwrap();
        assert_eq!(g.fill_skew(), 1);
        let bad = r#"{"h":3,"r":1,"c":2,"nm":{"n":1,"m":2,"q":16}}"#;
        assert!(serde_json::from_str::<EngineGeometry>(bad).is_err());
    }
}
