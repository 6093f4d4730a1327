use super::vector;
use super::{SimConfig, WeightStore};
use crate::compiler::{AttentionKind, BlockKind, ModelConfig, Projection, ResBlockIr, WeightId};
use crate::matrix::DenseMatrix;
use crate::nm;
use crate::softmax::ExpLut;

/// Integer product with the engine's 32-bit wrap, then the Q.10 rescale.
fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    vector::requantize_acc(&a.matmul_i64(b).map(|v| v as i32))
}

fn project(x: &DenseMatrix, weights: &WeightStore, block: usize, role: Projection) -> DenseMatrix {
    let w = weights.get(WeightId { block, role });
    let dense = nm::decompress(&w.matrix).expect("stored weights decompress");
    vector::bias_add(&matmul(x, &dense), &w.bias)
}

/// Direct evaluation of the model from its IR with decompressed weights and
/// plain integer matrix products. Shares only the vector-unit functions with
/// the instruction executor.
pub fn reference_forward(
    cfg: &ModelConfig,
    ir: &[ResBlockIr],
    weights: &WeightStore,
    inputs: &[DenseMatrix],
    sim: &SimConfig,
) -> Vec<DenseMatrix> {
    let lut = ExpLut::new(&sim.softmax);
    let mut next = inputs.iter();
    let mut enc = (cfg.num_encoders > 0).then(|| next.next().unwrap().clone());
    let dec_input = (cfg.num_decoders > 0).then(|| next.next().unwrap().clone());
    let mut dec = dec_input.clone();

    for block in ir {
        let decoder = block.name.starts_with("dec");
        let x = if decoder { dec.clone() } else { enc.clone() }.unwrap();
        let y = match block.kind {
            BlockKind::Ffn => {
                let h1 = vector::activation(&project(&x, weights, block.index, Projection::Ffn1), cfg.activation);
                let h2 = project(&h1, weights, block.index, Projection::Ffn2);
                vector::residual_add(&h2, &x, true)
            }
            BlockKind::Mha => {
                let kind = block.attention.unwrap();
                let mem = match kind {
                    AttentionKind::Cross => enc.clone().or(dec_input.clone()).unwrap(),
                    _ => x.clone(),
                };
                let q = project(&x, weights, block.index, Projection::Query);
                let k = project(&mem, weights, block.index, Projection::Key);
                let v = project(&mem, weights, block.index, Projection::Value);
                let (qh, kh, vh) = (
                    vector::split_heads(&q, cfg.heads),
                    vector::split_heads(&k, cfg.heads),
                    vector::split_heads(&v, cfg.heads),
                );
                let ctx: Vec<DenseMatrix> = (0..cfg.heads)
                    .map(|h| {
                        let s = matmul(&qh[h], &kh[h].transpose());
                        let (p, _) = vector::softmax_rows(
                            &s,
                            kind == AttentionKind::Causal,
                            cfg.head_dim(),
                            &sim.softmax,
                            &lut,
                        );
                        matmul(&p, &vh[h])
                    })
                    .collect();
                let o = project(&vector::merge_heads(&ctx), weights, block.index, Projection::Output);
                vector::residual_add(&o, &x, true)
            }
        };
        if decoder {
            dec = Some(y);
        } else {
            enc = Some(y);
        }
    }
    vec![if cfg.num_decoders > 0 { dec } else { enc }.unwrap()]
}
