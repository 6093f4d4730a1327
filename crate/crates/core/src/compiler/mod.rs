//! Transformer configuration to ResBlock IR to instruction stream.

mod encode;
mod ir;
mod program;
mod validate;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::{decode_binary, encode_binary, read_jsonl, write_jsonl};
pub use ir::{
    build_ir, mac_count, AttentionKind, AttentionProduct, BlockKind, IrOp, MacCounts, Projection,
    ResBlockIr, VectorKind, WeightId,
};
pub use program::{
    lower, FusedOp, Instruction, Program, Region, Shape, TensorId, TensorInfo, TensorKind,
    BlockSpan, NO_OPERAND,
};
pub use validate::{footprint, validate_program, Diagnostic, DiagnosticKind, Footprint, MemoryConfig};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("bad instruction stream: {0}")]
    Decode(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Gelu => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Gelu),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let k = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }
}

/// Shape of a Transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_encoders: usize,
    pub num_decoders: usize,
    pub seq_len: usize,
    pub heads: usize,
    pub hidden: usize,
    pub intermediate: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), CompileError> {
        let bad = |m: String| Err(CompileError::InvalidConfig(m));
        if self.num_encoders == 0 && self.num_decoders == 0 {
            return bad("needs at least one encoder or decoder".into());
        }
        for (name, v) in [
            ("seq_len", self.seq_len),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("intermediate", self.intermediate),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let c: ModelConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, CompileError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Benchmark models by name.
    pub fn preset(name: &str) -> Option<Self> {
        let mk = |e, d, s, h, hid, i, activation| ModelConfig {
            num_encoders: e,
            num_decoders: d,
            seq_len: s,
            heads: h,
            hidden: hid,
            intermediate: i,
            activation,
        };
        use Activation::*;
        Some(match name {
            "tinybert4" => mk(4, 0, 128, 12, 312, 1200, Gelu),
            "dino-vits8" => mk(12, 0, 64, 6, 384, 1536, Gelu),
            "transformer-base-encoders" => mk(6, 0, 64, 8, 512, 2048, Relu),
            "transformer-base-decoders" => mk(0, 6, 64, 8, 512, 2048, Relu),
            "shallow-transformer" => mk(2, 1, 64, 4, 200, 800, Relu),
            "bert-base" => mk(12, 0, 128, 12, 768, 3072, Gelu),
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 6] = [
        "tinybert4",
        "dino-vits8",
        "transformer-base-encoders",
        "transformer-base-decoders",
        "shallow-transformer",
        "bert-base",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_default_activation() {
        let text = r#"{"num_encoders":2,"num_decoders":1,"seq_len":64,"heads":4,"hidden":200,"intermediate":800}"#;
        let c = ModelConfig::from_json(text).unwrap();
        assert_eq!(c.activation, Activation::Gelu);
        assert_eq!(c.head_dim(), 50);
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs() {
        let base = ModelConfig::preset("shallow-transformer").unwrap();
        assert!(ModelConfig { heads: 3, ..base }.validate().is_err());
        assert!(ModelConfig { num_encoders: 0, num_decoders: 0, ..base }.validate().is_err());
        assert!(ModelConfig { seq_len: 0, ..base }.validate().is_err());
        assert!(ModelConfig::from_json(r#"{"num_encoders":1}"#).is_err());
        for p in ModelConfig::PRESETS {
            ModelConfig::preset(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert!((Activation::Gelu.apply(1.0) - 0.841192).abs() < 1e-5);
        assert_eq!(Activation::from_code(Activation::Relu.code()), Some(Activation::Relu));
    }
}
