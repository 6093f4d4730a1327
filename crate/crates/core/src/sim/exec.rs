use serde::{Deserialize, Serialize};

use super::vector;
use super::{SimConfig, SimError, WeightStore};
use crate::compiler::{FusedOp, Instruction, Program, Region, Shape, TensorKind, NO_OPERAND};
use crate::dmme::{run_dense, run_forced_dense, run_sparse, EngineGeometry, MatMulMode, TraceLevel};
use crate::matrix::DenseMatrix;
use crate::softmax::ExpLut;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Sparse weights run in sparse mode.
    #[default]
    Auto,
    /// Every MatMul runs in dense mode on decompressed weights.
    Dense,
}

/// Bytes moved per memory region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryTraffic {
    /// Off-chip to weight memory.
    pub weight_load_bytes: u64,
    /// Block results written to the input memory.
    pub input_store_bytes: u64,
    pub input_read_bytes: u64,
    pub intermediate_read_bytes: u64,
    pub intermediate_write_bytes: u64,
    /// Intermediate data that left the chip. Always zero by construction.
    pub offchip_intermediate_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub mode: ExecMode,
    pub outputs: Vec<DenseMatrix>,
    pub instruction_cycles: Vec<u64>,
    pub total_cycles: u64,
    pub matmul_cycles: u64,
    pub vector_cycles: u64,
    pub softmax_cycles: u64,
    /// MACs issued by the engine.
    pub engine_macs: u64,
    pub overflow_count: u64,
    pub traffic: MemoryTraffic,
}

/// Per-head operand views of a stored value.
fn views(value: &[DenseMatrix], heads: usize) -> Vec<DenseMatrix> {
    if value.len() == heads {
        value.to_vec()
    } else {
        assert_eq!(value.len(), 1, "cannot view {} heads as {heads}", value.len());
        vector::split_heads(&value[0], heads)
    }
}

fn bytes_of(shape: Shape) -> u64 {
    shape.elements() as u64 * 2
}

/// Runs `p` instruction by instruction. Loads and stores only count bytes;
/// MatMuls run on the cycle-stepped engine; fused vector ops take
/// `ceil(len / vector_lanes)` cycles except softmax, which uses the softmax
/// unit's own timing.
pub fn execute(
    p: &Program,
    weights: &WeightStore,
    inputs: &[DenseMatrix],
    geometry: &EngineGeometry,
    cfg: &SimConfig,
    mode: ExecMode,
) -> Result<ExecOutcome, SimError> {
    if inputs.len() != p.inputs.len() {
        return Err(SimError::Config(format!("{} inputs for {} program inputs", inputs.len(), p.inputs.len())));
    }
    let lut = ExpLut::new(&cfg.softmax);
    let mut values: Vec<Option<Vec<DenseMatrix>>> = vec![None; p.tensors.len()];
    for (&id, x) in p.inputs.iter().zip(inputs) {
        values[id as usize] = Some(vec![x.clone()]);
    }
    let mut out = ExecOutcome {
        mode,
        outputs: Vec::new(),
        instruction_cycles: Vec::with_capacity(p.instructions.len()),
        total_cycles: 0,
        matmul_cycles: 0,
        vector_cycles: 0,
        softmax_cycles: 0,
        engine_macs: 0,
        overflow_count: 0,
        traffic: MemoryTraffic::default(),
    };
    let get = |values: &Vec<Option<Vec<DenseMatrix>>>, id: u32| -> Vec<DenseMatrix> {
        values[id as usize].clone().unwrap_or_else(|| panic!("tensor {id} used before definition"))
    };
    let mut region = vec![Region::Intermediate; p.tensors.len()];
    for &id in &p.inputs {
        region[id as usize] = Region::Input;
    }
    let count_read = |traffic: &mut MemoryTraffic, region: &[Region], id: u32| {
        let t = p.tensor(id);
        match region[id as usize] {
            Region::Input => traffic.input_read_bytes += t.bytes,
            Region::Intermediate => traffic.intermediate_read_bytes += t.bytes,
            Region::Weight => {}
        }
    };

    for ins in &p.instructions {
        let cycles = match *ins {
            Instruction::Load { bytes, id, region: r } => {
                if r == Region::Weight {
                    out.traffic.weight_load_bytes += bytes as u64;
                }
                region[id as usize] = r;
                0
            }
            Instruction::Store { bytes, id, region: r } => {
                out.traffic.input_store_bytes += bytes as u64;
                region[id as usize] = r;
                0
            }
            Instruction::MatMul { mode: mm, heads_parallel, lhs, rhs, out: dst, .. } => {
                let h = heads_parallel as usize;
                count_read(&mut out.traffic, &region, lhs);
                let a = views(&get(&values, lhs), h);
                let res = match (mm, p.tensor(rhs).kind) {
                    (MatMulMode::SparseDense, TensorKind::Weight(wid)) => {
                        let w = &weights.get(wid).matrix;
                        match mode {
                            ExecMode::Auto => run_sparse(&a[0], w, geometry, TraceLevel::Summary)?,
                            ExecMode::Dense => run_forced_dense(&a[0], w, geometry, TraceLevel::Summary)?,
                        }
                    }
                    (MatMulMode::DenseDense, _) => {
                        count_read(&mut out.traffic, &region, rhs);
                        let b = views(&get(&values, rhs), h);
                        run_dense(&a, &b, geometry, TraceLevel::Summary)?
                    }
                    (m, k) => return Err(SimError::Config(format!("{m:?} MatMul with {k:?} operand"))),
                };
                out.engine_macs += res.trace.total_macs;
                out.overflow_count += res.trace.overflow_count;
                out.matmul_cycles += res.trace.total_cycles;
                let result: Vec<DenseMatrix> = res.results.iter().map(vector::requantize_acc).collect();
                out.traffic.intermediate_write_bytes += bytes_of(p.tensor(dst).shape);
                values[dst as usize] = Some(result);
                res.trace.total_cycles
            }
            Instruction::FusedVector { op, length, src, aux, out: dst } => {
                count_read(&mut out.traffic, &region, src);
                if aux != NO_OPERAND {
                    count_read(&mut out.traffic, &region, aux);
                }
                let x = get(&values, src);
                let lanes = cfg.vector_lanes as u64;
                let vec_cycles = (length as u64).div_ceil(lanes);
                let (result, cycles) = match op {
                    FusedOp::BiasAdd => {
                        let TensorKind::Weight(wid) = p.tensor(aux).kind else {
                            return Err(SimError::Config("bias operand is not a weight".into()));
                        };
                        let bias = &weights.get(wid).bias;
                        (x.iter().map(|m| vector::bias_add(m, bias)).collect(), vec_cycles)
                    }
                    FusedOp::Activation(a) => (x.iter().map(|m| vector::activation(m, a)).collect(), vec_cycles),
                    FusedOp::ResidualAdd { layer_norm } => {
                        let r = get(&values, aux);
                        let y = x.iter().zip(&r).map(|(a, b)| vector::residual_add(a, b, layer_norm)).collect();
                        (y, vec_cycles)
                    }
                    FusedOp::Softmax { causal, head_dim } => {
                        let mut total = 0;
                        let mut y = Vec::with_capacity(x.len());
                        for s in &x {
                            let (probs, c) = vector::softmax_rows(s, causal, head_dim as usize, &cfg.softmax, &lut);
                            total += c;
                            y.push(probs);
                        }
                        out.softmax_cycles += total;
                        (y, total)
                    }
                    FusedOp::Transpose { heads } => (vector::transpose_heads(&x[0], heads as usize), vec_cycles),
                    FusedOp::MergeHeads { .. } => (vec![vector::merge_heads(&x)], vec_cycles),
                };
                if !matches!(op, FusedOp::Softmax { .. }) {
                    out.vector_cycles += cycles;
                }
                out.traffic.intermediate_write_bytes += bytes_of(p.tensor(dst).shape);
                values[dst as usize] = Some(result);
                cycles
            }
        };
        out.instruction_cycles.push(cycles);
        out.total_cycles += cycles;
    }
    out.outputs = p
        .outputs
        .iter()
        .map(|&id| get(&values, id).into_iter().next().expect("single-head output"))
        .collect();
    Ok(out)
}
