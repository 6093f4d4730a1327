use serde::{Deserialize, Serialize};

use super::ir::{AttentionKind, AttentionProduct, BlockKind, IrOp, Projection, ResBlockIr, VectorKind, WeightId};
use super::{Activation, ModelConfig};
use crate::dmme::MatMulMode;
use crate::nm::{storage_cost, MatrixDims, NmConfig, StorageFormat};

pub type TensorId = u32;

/// Placeholder for an unused operand slot.
pub const NO_OPERAND: TensorId = u32::MAX;

/// Bytes per activation element on the 16-bit datapath.
pub const ELEM_BYTES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Weight,
    Input,
    Intermediate,
}

impl Region {
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(c: u32) -> Option<Self> {
        [Region::Weight, Region::Input, Region::Intermediate]
            .get(c as usize)
            .copied()
    }
}

/// `heads` stacked `rows x cols` matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub heads: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(heads: usize, rows: usize, cols: usize) -> Self {
        Self { heads, rows, cols }
    }

    pub fn elements(&self) -> usize {
        self.heads * self.rows * self.cols
    }

    /// Per-head `(rows, cols)` when viewed as `heads` operands. A single
    /// matrix splits its columns evenly between the heads.
    pub fn head_view(&self, heads: usize) -> Option<(usize, usize)> {
        if self.heads == heads {
            Some((self.rows, self.cols))
        } else if self.heads == 1 && self.cols.is_multiple_of(heads) {
            Some((self.rows, self.cols / heads))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorKind {
    /// Pre-resident in the input memory when the program starts.
    ModelInput,
    Activation,
    /// N:M compressed weight matrix with its bias.
    Weight(WeightId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub id: TensorId,
    pub name: String,
    pub shape: Shape,
    pub kind: TensorKind,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusedOp {
    /// Adds the bias packed with weight `aux`.
    BiasAdd,
    Activation(Activation),
    /// `src + aux`, optionally followed by LayerNorm over each row.
    ResidualAdd { layer_norm: bool },
    /// Row softmax of `src` scaled by `1/sqrt(head_dim)`.
    Softmax { causal: bool, head_dim: u32 },
    /// `1 x J x (heads·d)` to `heads x d x J`.
    Transpose { heads: u32 },
    /// `heads x J x d` to `1 x J x (heads·d)`.
    MergeHeads { heads: u32 },
}

impl FusedOp {
    pub fn is_reshuffle(&self) -> bool {
        matches!(self, FusedOp::Transpose { .. } | FusedOp::MergeHeads { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Load {
        region: Region,
        bytes: u32,
        id: TensorId,
    },
    Store {
        region: Region,
        bytes: u32,
        id: TensorId,
    },
    MatMul {
        mode: MatMulMode,
        /// Per-head (J, K, L).
        dims: (u32, u32, u32),
        heads_parallel: u32,
        lhs: TensorId,
        rhs: TensorId,
        out: TensorId,
    },
    FusedVector {
        op: FusedOp,
        length: u32,
        src: TensorId,
        aux: TensorId,
        out: TensorId,
    },
}

impl Instruction {
    /// Tensors read by the instruction.
    pub fn reads(&self) -> Vec<TensorId> {
        match *self {
            Instruction::Load { .. } => vec![],
            Instruction::Store { id, .. } => vec![id],
            Instruction::MatMul { lhs, rhs, .. } => vec![lhs, rhs],
            Instruction::FusedVector { src, aux, .. } => {
                if aux == NO_OPERAND {
                    vec![src]
                } else {
                    vec![src, aux]
                }
            }
        }
    }

    /// Tensor produced on chip, if any.
    pub fn writes(&self) -> Option<TensorId> {
        match *self {
            Instruction::Load { id, .. } => Some(id),
            Instruction::Store { .. } => None,
            Instruction::MatMul { out, .. } | Instruction::FusedVector { out, .. } => Some(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpan {
    pub name: String,
    pub kind: BlockKind,
    /// Instruction range `start..end`.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub model: ModelConfig,
    pub nm: NmConfig,
    pub tensors: Vec<TensorInfo>,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    pub blocks: Vec<BlockSpan>,
    pub instructions: Vec<Instruction>,
}

impl Program {
    pub fn tensor(&self, id: TensorId) -> &TensorInfo {
        &self.tensors[id as usize]
    }
}

/// Bytes of a compressed `k x l` weight plus its 16-bit bias.
pub fn weight_bytes(k: usize, l: usize, nm: NmConfig) -> u64 {
    let bits = storage_cost(StorageFormat::Bitmap, MatrixDims::new(k as u64, l as u64), nm, 0);
    bits.div_ceil(8) + ELEM_BYTES * l as u64
}

struct Builder {
    nm: NmConfig,
    tensors: Vec<TensorInfo>,
    instrs: Vec<Instruction>,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Shape, kind: TensorKind) -> TensorId {
        let id = self.tensors.len() as TensorId;
        let bytes = match kind {
            TensorKind::Weight(_) => weight_bytes(shape.rows, shape.cols, self.nm),
            _ => shape.elements() as u64 * ELEM_BYTES,
        };
        self.tensors.push(TensorInfo { id, name, shape, kind, bytes });
        id
    }

    fn shape(&self, id: TensorId) -> Shape {
        self.tensors[id as usize].shape
    }

    fn matmul(&mut self, mode: MatMulMode, heads: usize, lhs: TensorId, rhs: TensorId, name: String) -> TensorId {
        let (j, k) = self.shape(lhs).head_view(heads).expect("lhs view");
        let (_, l) = self.shape(rhs).head_view(heads).expect("rhs view");
        let out = self.tensor(name, Shape::new(heads, j, l), TensorKind::Activation);
        self.instrs.push(Instruction::MatMul {
            mode,
            dims: (j as u32, k as u32, l as u32),
            heads_parallel: heads as u32,
            lhs,
            rhs,
            out,
        });
        out
    }

    fn fused(&mut self, op: FusedOp, src: TensorId, aux: TensorId, shape: Shape, name: String) -> TensorId {
        let out = self.tensor(name, shape, TensorKind::Activation);
        self.instrs.push(Instruction::FusedVector {
            op,
            length: self.shape(src).elements() as u32,
            src,
            aux,
            out,
        });
        out
    }
}

/// Lowers the IR to a straight-line instruction stream. Each weight is
/// loaded right before its MatMul; every block result is stored to the
/// input memory, everything else stays in the intermediate memory.
pub fn lower(cfg: &ModelConfig, ir: &[ResBlockIr], nm: NmConfig) -> Program {
    let mut b = Builder { nm, tensors: Vec::new(), instrs: Vec::new() };
    let (j, d, heads) = (cfg.seq_len, cfg.hidden, cfg.heads);
    let act_shape = Shape::new(1, j, d);
    let mut inputs = Vec::new();
    let mut enc_x = None;
    let mut dec_x = None;
    if cfg.num_encoders > 0 {
        let id = b.tensor("input".into(), act_shape, TensorKind::ModelInput);
        inputs.push(id);
        enc_x = Some(id);
    }
    if cfg.num_decoders > 0 {
        let id = b.tensor("dec_input".into(), act_shape, TensorKind::ModelInput);
        inputs.push(id);
        dec_x = Some(id);
    }
    let dec_source = dec_x;
    let mut blocks = Vec::new();

    for block in ir {
        let start = b.instrs.len();
        let decoder = block.name.starts_with("dec");
        let x = if decoder { dec_x } else { enc_x }.expect("stream for block");
        let memory = match block.attention {
            Some(AttentionKind::Cross) => enc_x.or(dec_source).expect("cross source"),
            _ => x,
        };
        let pfx = &block.name;
        let mut last = x;
        let mut last_weight = NO_OPERAND;
        let (mut q, mut k, mut v) = (NO_OPERAND, NO_OPERAND, NO_OPERAND);

        for op in &block.ops {
            match *op {
                IrOp::LinearProjection { weight, in_dims, out_dims, .. } => {
                    let src = match weight.role {
                        Projection::Query | Projection::Ffn1 => x,
                        Projection::Key | Projection::Value => memory,
                        Projection::Output | Projection::Ffn2 => last,
                    };
                    let wname = format!("{pfx}.w_{:?}", weight.role).to_lowercase();
                    let w = b.tensor(wname, Shape::new(1, in_dims, out_dims), TensorKind::Weight(weight));
                    let bytes = b.tensors[w as usize].bytes as u32;
                    b.instrs.push(Instruction::Load { region: Region::Weight, bytes, id: w });
                    let name = format!("{pfx}.{:?}_raw", weight.role).to_lowercase();
                    last = b.matmul(MatMulMode::SparseDense, 1, src, w, name);
                    last_weight = w;
                }
                IrOp::VectorOp { kind, .. } => {
                    let shape = b.shape(last);
                    match kind {
                        VectorKind::BiasAdd => {
                            let role = match b.tensors[last_weight as usize].kind {
                                TensorKind::Weight(w) => w.role,
                                _ => unreachable!("bias follows a projection"),
                            };
                            let name = format!("{pfx}.{role:?}").to_lowercase();
                            last = b.fused(FusedOp::BiasAdd, last, last_weight, shape, name);
                            match role {
                                Projection::Query => q = last,
                                Projection::Key => k = last,
                                Projection::Value => v = last,
                                _ => {}
                            }
                        }
                        VectorKind::Activation(a) => {
                            last = b.fused(FusedOp::Activation(a), last, NO_OPERAND, shape, format!("{pfx}.act"));
                        }
                        VectorKind::ResidualAdd => {
                            let op = FusedOp::ResidualAdd { layer_norm: true };
                            last = b.fused(op, last, x, shape, format!("{pfx}.out"));
                        }
                    }
                }
                IrOp::AttentionMatMul { product, heads: h, dims, .. } => match product {
                    AttentionProduct::Scores => {
                        let shape = Shape::new(h, dims.1, dims.2);
                        let kt = b.fused(FusedOp::Transpose { heads: h as u32 }, k, NO_OPERAND, shape, format!("{pfx}.kt"));
                        last = b.matmul(MatMulMode::DenseDense, h, q, kt, format!("{pfx}.scores"));
                    }
                    AttentionProduct::Context => {
                        let ctx = b.matmul(MatMulMode::DenseDense, h, last, v, format!("{pfx}.ctx"));
                        let op = FusedOp::MergeHeads { heads: h as u32 };
                        last = b.fused(op, ctx, NO_OPERAND, Shape::new(1, dims.0, h * dims.2), format!("{pfx}.merged"));
                    }
                },
                IrOp::Softmax { causal, .. } => {
                    let op = FusedOp::Softmax { causal, head_dim: (d / heads) as u32 };
                    let shape = b.shape(last);
                    last = b.fused(op, last, NO_OPERAND, shape, format!("{pfx}.probs"));
                }
            }
        }
        let bytes = b.tensors[last as usize].bytes as u32;
        b.instrs.push(Instruction::Store { region: Region::Input, bytes, id: last });
        if decoder {
            dec_x = Some(last);
        } else {
            enc_x = Some(last);
        }
        blocks.push(BlockSpan { name: block.name.clone(), kind: block.kind, start, end: b.instrs.len() });
    }

    let outputs = vec![if cfg.num_decoders > 0 { dec_x } else { enc_x }.expect("model output")];
    Program {
        model: *cfg,
        nm,
        tensors: b.tensors,
        inputs,
        outputs,
        blocks,
        instructions: b.instrs,
    }
}
