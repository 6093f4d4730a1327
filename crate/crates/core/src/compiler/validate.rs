use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::program::{FusedOp, Instruction, Program, Region, TensorId, TensorKind, NO_OPERAND};
use crate::dmme::MatMulMode;

/// On-chip memory sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub weight_bytes: u64,
    pub input_bytes: u64,
    pub intermediate_bytes: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            weight_bytes: 4 << 20,
            input_bytes: 512 << 10,
            intermediate_bytes: 2 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    UseBeforeDefinition,
    BadOperand,
    DimensionMismatch,
    RegionRule,
    CapacityExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Offending instruction, if the problem is local to one.
    pub index: Option<usize>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(i) => write!(f, "instruction {i}: {:?}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

/// Peak live bytes per region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Footprint {
    pub weight: u64,
    pub input: u64,
    pub intermediate: u64,
    /// Instruction index at which each peak first occurs.
    pub weight_at: usize,
    pub input_at: usize,
    pub intermediate_at: usize,
}

/// Max live-set size per region. A tensor is live from the instruction that
/// places it in a region to its last read there; block outputs move from the
/// intermediate to the input memory at their Store; program outputs stay
/// live to the end.
pub fn footprint(p: &Program) -> Footprint {
    let len = p.instructions.len();
    // (region, tensor) -> [start, end]
    let mut spans: HashMap<(Region, TensorId), (usize, usize)> = HashMap::new();
    let mut location: HashMap<TensorId, Region> = HashMap::new();
    for &id in &p.inputs {
        location.insert(id, Region::Input);
        spans.insert((Region::Input, id), (0, 0));
    }
    let touch = |spans: &mut HashMap<(Region, TensorId), (usize, usize)>, key, at| {
        spans.entry(key).and_modify(|s: &mut (usize, usize)| s.1 = s.1.max(at)).or_insert((at, at));
    };
    for (i, ins) in p.instructions.iter().enumerate() {
        for id in ins.reads() {
            if let Some(&r) = location.get(&id) {
                touch(&mut spans, (r, id), i);
            }
        }
        match *ins {
            Instruction::Load { region, id, .. } => {
                location.insert(id, region);
                touch(&mut spans, (region, id), i);
            }
            Instruction::Store { region, id, .. } => {
                location.insert(id, region);
                touch(&mut spans, (region, id), i);
            }
            _ => {
                if let Some(out) = ins.writes() {
                    location.insert(out, Region::Intermediate);
                    touch(&mut spans, (Region::Intermediate, out), i);
                }
            }
        }
    }
    for &id in &p.outputs {
        if let Some(&r) = location.get(&id) {
            touch(&mut spans, (r, id), len.saturating_sub(1));
        }
    }
    let mut live = vec![[0u64; 3]; len.max(1)];
    for (&(region, id), &(s, e)) in &spans {
        let bytes = p.tensors.get(id as usize).map_or(0, |t| t.bytes);
        for slot in &mut live[s..=e.min(len.max(1) - 1)] {
            slot[region.code() as usize] += bytes;
        }
    }
    let mut f = Footprint::default();
    for (i, l) in live.iter().enumerate() {
        if l[0] > f.weight {
            (f.weight, f.weight_at) = (l[0], i);
        }
        if l[1] > f.input {
            (f.input, f.input_at) = (l[1], i);
        }
        if l[2] > f.intermediate {
            (f.intermediate, f.intermediate_at) = (l[2], i);
        }
    }
    f
}

/// Checks definition order, operand kinds and shapes, the region rules and
/// memory capacity. Collects every problem instead of stopping at the first.
pub fn validate_program(p: &Program, mem: &MemoryConfig) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut push = |index: Option<usize>, kind, message: String| diags.push(Diagnostic { index, kind, message });
    let mut location: HashMap<TensorId, Region> = p.inputs.iter().map(|&id| (id, Region::Input)).collect();
    let n_tensors = p.tensors.len() as TensorId;

    for (i, ins) in p.instructions.iter().enumerate() {
        let at = Some(i);
        let ids: Vec<TensorId> = ins.reads().into_iter().chain(ins.writes()).collect();
        if let Some(&bad) = ids.iter().find(|&&id| id >= n_tensors) {
            push(at, DiagnosticKind::BadOperand, format!("unknown tensor id {bad}"));
            continue;
        }
        for id in ins.reads() {
            if !location.contains_key(&id) {
                push(at, DiagnosticKind::UseBeforeDefinition, format!("{} read before it is defined", p.tensor(id).name));
            }
        }
        match *ins {
            Instruction::Load { region, bytes, id } => {
                let t = p.tensor(id);
                if matches!(t.kind, TensorKind::Weight(_)) != (region == Region::Weight) {
                    push(at, DiagnosticKind::RegionRule, format!("{} loaded into {region:?}", t.name));
                }
                if bytes as u64 != t.bytes {
                    push(at, DiagnosticKind::DimensionMismatch, format!("load of {} moves {bytes} bytes, tensor has {}", t.name, t.bytes));
                }
                location.insert(id, region);
            }
            Instruction::Store { region, bytes, id } => {
                let t = p.tensor(id);
                if region != Region::Input {
                    push(at, DiagnosticKind::RegionRule, format!("{} stored to {region:?}; block results belong in Input", t.name));
                }
                if bytes as u64 != t.bytes {
                    push(at, DiagnosticKind::DimensionMismatch, format!("store of {} moves {bytes} bytes, tensor has {}", t.name, t.bytes));
                }
                location.insert(id, region);
            }
            Instruction::MatMul { mode, dims: (j, k, l), heads_parallel, lhs, rhs, out } => {
                let h = heads_parallel as usize;
                let (j, k, l) = (j as usize, k as usize, l as usize);
                let (a, b, o) = (p.tensor(lhs), p.tensor(rhs), p.tensor(out));
                let rhs_weight = matches!(b.kind, TensorKind::Weight(_));
                match mode {
                    MatMulMode::SparseDense if !rhs_weight || h != 1 => {
                        push(at, DiagnosticKind::BadOperand, format!("sparse MatMul needs a compressed weight, got {}", b.name));
                    }
                    MatMulMode::SparseDense if location.get(&rhs) != Some(&Region::Weight) && location.contains_key(&rhs) => {
                        push(at, DiagnosticKind::RegionRule, format!("{} is not in the weight memory", b.name));
                    }
                    MatMulMode::DenseDense if rhs_weight || matches!(a.kind, TensorKind::Weight(_)) => {
                        push(at, DiagnosticKind::BadOperand, "dense MatMul takes two activations".into());
                    }
                    _ => {}
                }
                if a.shape.head_view(h) != Some((j, k)) || b.shape.head_view(h) != Some((k, l)) {
                    push(at, DiagnosticKind::DimensionMismatch, format!(
                        "({j},{k},{l}) x{h} does not fit {} {:?} and {} {:?}", a.name, a.shape, b.name, b.shape
                    ));
                }
                if (o.shape.heads, o.shape.rows, o.shape.cols) != (h, j, l) {
                    push(at, DiagnosticKind::DimensionMismatch, format!("output {} has shape {:?}", o.name, o.shape));
                }
                location.insert(out, Region::Intermediate);
            }
            Instruction::FusedVector { op, length, src, aux, out } => {
                let (s, o) = (p.tensor(src), p.tensor(out));
                if length as usize != s.shape.elements() {
                    push(at, DiagnosticKind::DimensionMismatch, format!("length {length} over {} elements", s.shape.elements()));
                }
                if o.shape.elements() != s.shape.elements() {
                    push(at, DiagnosticKind::DimensionMismatch, format!("{} and {} differ in size", s.name, o.name));
                }
                match op {
                    FusedOp::BiasAdd => {
                        let ok = aux != NO_OPERAND
                            && matches!(p.tensor(aux).kind, TensorKind::Weight(_))
                            && p.tensor(aux).shape.cols == s.shape.cols;
                        if !ok {
                            push(at, DiagnosticKind::BadOperand, "bias add needs the projection's weight".into());
                        }
                    }
                    FusedOp::ResidualAdd { .. }
                        if (aux == NO_OPERAND || p.tensor(aux).shape != s.shape) => {
                            push(at, DiagnosticKind::DimensionMismatch, "residual operand shape differs".into());
                        }
                    _ => {}
                }
                location.insert(out, Region::Intermediate);
            }
        }
    }

    let f = footprint(p);
    for (region, used, cap, at) in [
        (Region::Weight, f.weight, mem.weight_bytes, f.weight_at),
        (Region::Input, f.input, mem.input_bytes, f.input_at),
        (Region::Intermediate, f.intermediate, mem.intermediate_bytes, f.intermediate_at),
    ] {
        if used > cap {
            push(Some(at), DiagnosticKind::CapacityExceeded, format!("{region:?} memory needs {used} bytes, has {cap}"));
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}
