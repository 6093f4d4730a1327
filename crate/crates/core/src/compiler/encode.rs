use std::io::{BufRead, Write};

use super::program::{FusedOp, Instruction, Region};
use super::{Activation, CompileError};
use crate::dmme::MatMulMode;

const TAG_LOAD: u8 = 1;
const TAG_STORE: u8 = 2;
const TAG_MATMUL: u8 = 3;
const TAG_FUSED: u8 = 4;

fn mode_code(m: MatMulMode) -> u32 {
    match m {
        MatMulMode::DenseDense => 0,
        MatMulMode::SparseDense => 1,
    }
}

fn fused_code(op: FusedOp) -> [u32; 3] {
    match op {
        FusedOp::BiasAdd => [0, 0, 0],
        FusedOp::Activation(a) => [1, a.code(), 0],
        FusedOp::ResidualAdd { layer_norm } => [2, layer_norm as u32, 0],
        FusedOp::Softmax { causal, head_dim } => [3, causal as u32, head_dim],
        FusedOp::Transpose { heads } => [4, heads, 0],
        FusedOp::MergeHeads { heads } => [5, heads, 0],
    }
}

fn fused_from(c: [u32; 3]) -> Option<FusedOp> {
    Some(match c[0] {
        0 => FusedOp::BiasAdd,
        1 => FusedOp::Activation(Activation::from_code(c[1])?),
        2 => FusedOp::ResidualAdd { layer_norm: c[1] != 0 },
        3 => FusedOp::Softmax { causal: c[1] != 0, head_dim: c[2] },
        4 => FusedOp::Transpose { heads: c[1] },
        5 => FusedOp::MergeHeads { heads: c[1] },
        _ => return None,
    })
}

/// Compact form: a tag byte followed by little-endian `u32` fields.
pub fn encode_binary(instrs: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut put = |tag: u8, fields: &[u32]| {
        out.push(tag);
        for f in fields {
            out.extend_from_slice(&f.to_le_bytes());
        }
    };
    for ins in instrs {
        match *ins {
            Instruction::Load { region, bytes, id } => put(TAG_LOAD, &[region.code(), bytes, id]),
            Instruction::Store { region, bytes, id } => put(TAG_STORE, &[region.code(), bytes, id]),
            Instruction::MatMul { mode, dims, heads_parallel, lhs, rhs, out } => put(
                TAG_MATMUL,
                &[mode_code(mode), dims.0, dims.1, dims.2, heads_parallel, lhs, rhs, out],
            ),
            Instruction::FusedVector { op, length, src, aux, out } => {
                let [code, a, b] = fused_code(op);
                put(TAG_FUSED, &[code, a, b, length, src, aux, out]);
            }
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<Instruction>, CompileError> {
    let bad = |m: String| CompileError::Decode(m);
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let at = pos;
        let tag = bytes[pos];
        pos += 1;
        let count = match tag {
            TAG_LOAD | TAG_STORE => 3,
            TAG_MATMUL => 8,
            TAG_FUSED => 7,
            t => return Err(bad(format!("unknown tag {t} at byte {at}"))),
        };
        if bytes.len() < pos + 4 * count {
            return Err(bad(format!("truncated instruction at byte {at}")));
        }
        let f: Vec<u32> = bytes[pos..pos + 4 * count]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * count;
        let region = |c: u32| Region::from_code(c).ok_or_else(|| bad(format!("bad region {c} at byte {at}")));
        out.push(match tag {
            TAG_LOAD => Instruction::Load { region: region(f[0])?, bytes: f[1], id: f[2] },
            TAG_STORE => Instruction::Store { region: region(f[0])?, bytes: f[1], id: f[2] },
            TAG_MATMUL => Instruction::MatMul {
                mode: match f[0] {
                    0 => MatMulMode::DenseDense,
                    1 => MatMulMode::SparseDense,
                    m => return Err(bad(format!("bad mode {m} at byte {at}"))),
                },
                dims: (f[1], f[2], f[3]),
                heads_parallel: f[4],
                lhs: f[5],
                rhs: f[6],
                out: f[7],
            },
            _ => Instruction::FusedVector {
                op: fused_from([f[0], f[1], f[2]]).ok_or_else(|| bad(format!("bad fused op at byte {at}")))?,
                length: f[3],
                src: f[4],
                aux: f[5],
                out: f[6],
            },
        });
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(instrs: &[Instruction], mut w: W) -> Result<(), CompileError> {
    for ins in instrs {
        serde_json::to_writer(&mut w, ins)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Instruction>, CompileError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{build_ir, lower, ModelConfig};

    fn stream() -> Vec<Instruction> {
        let cfg = ModelConfig::preset("shallow-transformer").unwrap();
        lower(&cfg, &build_ir(&cfg).unwrap(), "2:8".parse().unwrap()).instructions
    }

    #[test]
    fn binary_round_trip() {
        let s = stream();
        let bytes = encode_binary(&s);
        assert_eq!(decode_binary(&bytes).unwrap(), s);
    }

    #[test]
    fn binary_layout() {
        let bytes = encode_binary(&[Instruction::Load { region: Region::Weight, bytes: 258, id: 7 }]);
        assert_eq!(bytes, [1, 0, 0, 0, 0, 2, 1, 0, 0, 7, 0, 0, 0]);
        assert!(decode_binary(&bytes[..5]).is_err());
        assert!(decode_binary(&[9]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let s = stream();
        let mut buf = Vec::new();
        write_jsonl(&s, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), s.len());
        assert_eq!(read_jsonl(&buf[..]).unwrap(), s);
    }
}
