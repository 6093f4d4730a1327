//! Runs compiled programs on the engine and softmax models.

mod exec;
mod reference;
mod report;
pub mod vector;
mod weights;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{CompileError, Diagnostic, MemoryConfig};
use crate::dmme::{DmmeError, EngineGeometry};
use crate::nm::{NmConfig, NmError};
use crate::prune::PruneError;
use crate::softmax::SoftmaxConfig;

pub use exec::{execute, ExecMode, ExecOutcome, MemoryTraffic};
pub use reference::reference_forward;
pub use report::{simulate, BlockReport, SimReport};
pub use weights::{synthetic_inputs, LayerWeights, WeightStore};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Engine(#[from] DmmeError),
    #[error(transparent)]
    Nm(#[from] NmError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error("program failed validation with {} diagnostics", .0.len())]
    Diagnostics(Vec<Diagnostic>),
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryDims {
    pub h: usize,
    pub r: usize,
    pub c: usize,
}

/// Simulator settings, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Engine shape; `m/n` heads of 8x16 arrays when absent.
    pub geometry: Option<GeometryDims>,
    pub memory: MemoryConfig,
    pub softmax: SoftmaxConfig,
    /// Elements per cycle of the fused vector unit.
    pub vector_lanes: usize,
    /// Seed for synthetic weights and inputs.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: None,
            memory: MemoryConfig::default(),
            softmax: SoftmaxConfig::default(),
            vector_lanes: 64,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let c: SimConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.vector_lanes == 0 {
            return Err(SimError::Config("vector_lanes must be >= 1".into()));
        }
        self.softmax
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn engine_geometry(&self, nm: NmConfig) -> Result<EngineGeometry, SimError> {
        Ok(match self.geometry {
            Some(GeometryDims { h, r, c }) => EngineGeometry::new(h, r, c, nm)?,
            None => EngineGeometry::with_defaults(nm)?,
        })
    }
}
