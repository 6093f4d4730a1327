use serde::{Deserialize, Serialize};

use super::{Activation, CompileError, ModelConfig};
use crate::nm::NmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Mha,
    Ffn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionKind {
    /// Encoder self-attention.
    SelfAttention,
    /// Decoder self-attention with a causal mask.
    Causal,
    /// Decoder attention over the encoder output.
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
    Ffn1,
    Ffn2,
}

impl Projection {
    pub fn code(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightId {
    pub block: usize,
    pub role: Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionProduct {
    /// `Q Kᵀ` per head.
    Scores,
    /// Probabilities times `V` per head.
    Context,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VectorKind {
    BiasAdd,
    ResidualAdd,
    Activation(Activation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrOp {
    LinearProjection {
        weight: WeightId,
        /// Tokens (J).
        rows: usize,
        in_dims: usize,
        out_dims: usize,
        sparse: bool,
    },
    AttentionMatMul {
        product: AttentionProduct,
        heads: usize,
        /// Per-head (J, K, L).
        dims: (usize, usize, usize),
        dense: bool,
    },
    Softmax {
        vector_len: usize,
        repeat_count: usize,
        causal: bool,
    },
    VectorOp {
        kind: VectorKind,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResBlockIr {
    pub index: usize,
    pub name: String,
    pub kind: BlockKind,
    pub attention: Option<AttentionKind>,
    pub ops: Vec<IrOp>,
}

fn mha(index: usize, name: String, cfg: &ModelConfig, attention: AttentionKind) -> ResBlockIr {
    let (j, d, h) = (cfg.seq_len, cfg.hidden, cfg.heads);
    let dh = cfg.head_dim();
    let lin = |role| IrOp::LinearProjection {
        weight: WeightId { block: index, role },
        rows: j,
        in_dims: d,
        out_dims: d,
        sparse: true,
    };
    let bias = IrOp::VectorOp { kind: VectorKind::BiasAdd, len: j * d };
    let ops = vec![
        lin(Projection::Query),
        bias.clone(),
        lin(Projection::Key),
        bias.clone(),
        lin(Projection::Value),
        bias.clone(),
        IrOp::AttentionMatMul {
            product: AttentionProduct::Scores,
            heads: h,
            dims: (j, dh, j),
            dense: true,
        },
        IrOp::Softmax {
            vector_len: j,
            repeat_count: h * j,
            causal: attention == AttentionKind::Causal,
        },
        IrOp::AttentionMatMul {
            product: AttentionProduct::Context,
            heads: h,
            dims: (j, j, dh),
            dense: true,
        },
        lin(Projection::Output),
        bias,
        IrOp::VectorOp { kind: VectorKind::ResidualAdd, len: j * d },
    ];
    ResBlockIr {
        index,
        name,
        kind: BlockKind::Mha,
        attention: Some(attention),
        ops,
    }
}

fn ffn(index: usize, name: String, cfg: &ModelConfig) -> ResBlockIr {
    let (j, d, i) = (cfg.seq_len, cfg.hidden, cfg.intermediate);
    let ops = vec![
        IrOp::LinearProjection {
            weight: WeightId { block: index, role: Projection::Ffn1 },
            rows: j,
            in_dims: d,
            out_dims: i,
            sparse: true,
        },
        IrOp::VectorOp { kind: VectorKind::BiasAdd, len: j * i },
        IrOp::VectorOp { kind: VectorKind::Activation(cfg.activation), len: j * i },
        IrOp::LinearProjection {
            weight: WeightId { block: index, role: Projection::Ffn2 },
            rows: j,
            in_dims: i,
            out_dims: d,
            sparse: true,
        },
        IrOp::VectorOp { kind: VectorKind::BiasAdd, len: j * d },
        IrOp::VectorOp { kind: VectorKind::ResidualAdd, len: j * d },
    ];
    ResBlockIr {
        index,
        name,
        kind: BlockKind::Ffn,
        attention: None,
        ops,
    }
}

/// Encoder blocks (MHA, FFN) followed by decoder blocks (causal MHA, cross
/// MHA, FFN). Weight MatMuls are sparse, attention MatMuls dense.
pub fn build_ir(cfg: &ModelConfig) -> Result<Vec<ResBlockIr>, CompileError> {
    cfg.validate()?;
    let mut blocks = Vec::new();
    for e in 0..cfg.num_encoders {
        let i = blocks.len();
        blocks.push(mha(i, format!("enc{e}.mha"), cfg, AttentionKind::SelfAttention));
        blocks.push(ffn(i + 1, format!("enc{e}.ffn"), cfg));
    }
    for d in 0..cfg.num_decoders {
        let i = blocks.len();
        blocks.push(mha(i, format!("dec{d}.self_mha"), cfg, AttentionKind::Causal));
        blocks.push(mha(i + 1, format!("dec{d}.cross_mha"), cfg, AttentionKind::Cross));
        blocks.push(ffn(i + 2, format!("dec{d}.ffn"), cfg));
    }
    Ok(blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MacCounts {
    /// Attention (parameter-free) MatMuls at full size.
    pub dense_macs: u64,
    /// Weight MatMuls under the N:M pattern.
    pub sparse_macs: u64,
}

impl MacCounts {
    pub fn total(&self) -> u64 {
        self.dense_macs + self.sparse_macs
    }
}

/// Exact MAC counts. A sparse projection issues `n` MACs per group of `m`
/// inputs, so it costs `J·L·ceil(K/m)·n`.
pub fn mac_count(ir: &[ResBlockIr], nm: NmConfig) -> MacCounts {
    let (n, m) = (nm.n() as u64, nm.m() as u64);
    let mut out = MacCounts::default();
    for op in ir.iter().flat_map(|b| &b.ops) {
        match *op {
            IrOp::LinearProjection { rows, in_dims, out_dims, sparse, .. } => {
                let (j, k, l) = (rows as u64, in_dims as u64, out_dims as u64);
                if sparse {
                    out.sparse_macs += j * l * k.div_ceil(m) * n;
                } else {
                    out.dense_macs += j * k * l;
                }
            }
            IrOp::AttentionMatMul { heads, dims: (j, k, l), .. } => {
                out.dense_macs += (heads * j * k * l) as u64;
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(b: &ResBlockIr, f: impl Fn(&IrOp) -> bool) -> usize {
        b.ops.iter().filter(|o| f(o)).count()
    }

    #[test]
    fn shallow_transformer_structure() {
        let ir = build_ir(&ModelConfig::preset("shallow-transformer").unwrap()).unwrap();
        let kinds: Vec<_> = ir.iter().map(|b| (b.kind, b.attention)).collect();
        use AttentionKind::*;
        use BlockKind::*;
        assert_eq!(
            kinds,
            vec![
                (Mha, Some(SelfAttention)),
                (Ffn, None),
                (Mha, Some(SelfAttention)),
                (Ffn, None),
                (Mha, Some(Causal)),
                (Mha, Some(Cross)),
                (Ffn, None),
            ]
        );
    }

    #[test]
    fn block_invariants() {
        for p in ModelConfig::PRESETS {
            let cfg = ModelConfig::preset(p).unwrap();
            for b in build_ir(&cfg).unwrap() {
                let lin = count(&b, |o| matches!(o, IrOp::LinearProjection { .. }));
                assert!(matches!(
                    b.ops.last(),
                    Some(IrOp::VectorOp { kind: VectorKind::ResidualAdd, .. })
                ));
                match b.kind {
                    BlockKind::Mha => {
                        assert_eq!(lin, 4);
                        assert_eq!(count(&b, |o| matches!(o, IrOp::AttentionMatMul { .. })), 2);
                        assert_eq!(count(&b, |o| matches!(o, IrOp::Softmax { .. })), 1);
                        // per-head reduction dims of the score product add up to hidden
                        for o in &b.ops {
                            if let IrOp::AttentionMatMul { product: AttentionProduct::Scores, heads, dims, .. } = o {
                                assert_eq!(heads * dims.1, cfg.hidden);
                            }
                        }
                    }
                    BlockKind::Ffn => {
                        assert_eq!(lin, 2);
                        assert_eq!(
                            count(&b, |o| matches!(o, IrOp::VectorOp { kind: VectorKind::Activation(_), .. })),
                            1
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn block_counts() {
        let tiny = build_ir(&ModelConfig::preset("tinybert4").unwrap()).unwrap();
        assert_eq!(tiny.len(), 8);
        let one = ModelConfig { num_encoders: 1, num_decoders: 0, ..ModelConfig::preset("tinybert4").unwrap() };
        assert_eq!(build_ir(&one).unwrap().len(), 2);
    }

    #[test]
    fn mac_examples() {
        let one = ResBlockIr {
            index: 0,
            name: "t".into(),
            kind: BlockKind::Ffn,
            attention: None,
            ops: vec![IrOp::LinearProjection {
                weight: WeightId { block: 0, role: Projection::Ffn1 },
                rows: 8,
                in_dims: 8,
                out_dims: 8,
                sparse: true,
            }],
        };
        let c = mac_count(std::slice::from_ref(&one), NmConfig::pattern(2, 8).unwrap());
        assert_eq!(c.sparse_macs, 128);
        let d = mac_count(std::slice::from_ref(&one), NmConfig::pattern(8, 8).unwrap());
        assert_eq!(d.sparse_macs, 512);
    }

    #[test]
    fn weight_mac_ratio_is_m_over_n() {
        for p in ModelConfig::PRESETS {
            let ir = build_ir(&ModelConfig::preset(p).unwrap()).unwrap();
            for (n, m) in [(2u32, 8u32), (1, 8), (2, 4), (4, 8)] {
                let dense = mac_count(&ir, NmConfig::pattern(m, m).unwrap());
                let sparse = mac_count(&ir, NmConfig::pattern(n, m).unwrap());
                assert_eq!(dense.sparse_macs * n as u64, sparse.sparse_macs * m as u64, "{p} {n}:{m}");
                assert_eq!(dense.dense_macs, sparse.dense_macs);
            }
        }
    }
}
