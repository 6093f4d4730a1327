//! Functional models of the fused vector unit and reshuffle network, shared
//! by the executor and the reference pipeline.

use crate::compiler::Activation;
use crate::fixed::{self, FRAC_BITS};
use crate::matrix::DenseMatrix;
use crate::softmax::{softmax_with_lut, ExpLut, SoftmaxConfig};

const LN_EPS: f64 = 1e-5;

/// Rescales 32-bit accumulators of two Q.10 operands back to Q.10.
pub fn requantize_acc(acc: &DenseMatrix) -> DenseMatrix {
    acc.map(|v| fixed::requantize(v as i64, FRAC_BITS))
}

pub fn bias_add(x: &DenseMatrix, bias: &[i32]) -> DenseMatrix {
    assert_eq!(bias.len(), x.cols());
    DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
        fixed::saturate_i16(x.get(i, j) as i64 + bias[j] as i64)
    })
}

pub fn activation(x: &DenseMatrix, act: Activation) -> DenseMatrix {
    x.map(|v| fixed::to_fixed(act.apply(fixed::from_fixed(v, FRAC_BITS)), FRAC_BITS))
}

/// `x + res`, then optional per-row LayerNorm (unit gain, zero shift).
pub fn residual_add(x: &DenseMatrix, res: &DenseMatrix, layer_norm: bool) -> DenseMatrix {
    assert_eq!(x.dims(), res.dims());
    let (rows, cols) = x.dims();
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut row = vec![0f64; cols];
    for i in 0..rows {
        for (j, r) in row.iter_mut().enumerate() {
            *r = fixed::from_fixed(x.get(i, j) + res.get(i, j), FRAC_BITS);
        }
        if layer_norm {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for r in row.iter_mut() {
                *r = (*r - mean) * inv;
            }
        }
        for (j, r) in row.iter().enumerate() {
            out.set(i, j, fixed::to_fixed(*r, FRAC_BITS));
        }
    }
    out
}

/// Row-wise softmax of Q.10 scores scaled by `1/sqrt(head_dim)`. Causal rows
/// only see positions up to their own index; masked outputs are zero.
/// Returns Q.10 probabilities and the unit's cycle count.
pub fn softmax_rows(
    scores: &DenseMatrix,
    causal: bool,
    head_dim: usize,
    cfg: &SoftmaxConfig,
    lut: &ExpLut,
) -> (DenseMatrix, u64) {
    let (rows, cols) = scores.dims();
    let scale = (1.0 / (head_dim as f64).sqrt()) * (cfg.frac_bits as f64 - FRAC_BITS as f64).exp2();
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut cycles = 0;
    let mut x = Vec::with_capacity(cols);
    for i in 0..rows {
        let len = if causal { (i + 1).min(cols) } else { cols };
        x.clear();
        x.extend((0..len).map(|j| fixed::saturate_i16((scores.get(i, j) as f64 * scale).round() as i64)));
        let res = softmax_with_lut(&x, cfg, lut);
        cycles += res.cycles;
        for (j, &v) in res.values.iter().enumerate() {
            let q = if cfg.q_out >= FRAC_BITS {
                v >> (cfg.q_out - FRAC_BITS)
            } else {
                v << (FRAC_BITS - cfg.q_out)
            };
            out.set(i, j, q as i32);
        }
    }
    (out, cycles)
}

/// Splits the columns of `x` into `heads` equal slices.
pub fn split_heads(x: &DenseMatrix, heads: usize) -> Vec<DenseMatrix> {
    let w = x.cols() / heads;
    (0..heads).map(|h| x.col_slice(h * w, w)).collect()
}

/// `J x (heads·d)` to per-head `d x J`.
pub fn transpose_heads(x: &DenseMatrix, heads: usize) -> Vec<DenseMatrix> {
    split_heads(x, heads).iter().map(|m| m.transpose()).collect()
}

/// Per-head `J x d` back to `J x (heads·d)`.
pub fn merge_heads(parts: &[DenseMatrix]) -> DenseMatrix {
    let (rows, w) = parts[0].dims();
    DenseMatrix::from_fn(rows, w * parts.len(), |i, j| parts[j / w].get(i, j % w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_reshuffles_invert() {
        let x = DenseMatrix::from_fn(3, 8, |i, j| (i * 8 + j) as i32);
        assert_eq!(merge_heads(&split_heads(&x, 4)), x);
        let t = transpose_heads(&x, 2);
        assert_eq!(t[1].dims(), (4, 3));
        assert_eq!(t[1].get(0, 2), x.get(2, 4));
    }

    #[test]
    fn layer_norm_centers_rows() {
        let x = DenseMatrix::from_fn(2, 16, |i, j| (i as i32 + 1) * (j as i32) * 64);
        let y = residual_add(&x, &DenseMatrix::zeros(2, 16), true);
        for i in 0..2 {
            let mean: f64 = y.row(i).iter().map(|&v| v as f64).sum::<f64>() / 16.0;
            assert!(mean.abs() < 2.0);
        }
    }

    #[test]
    fn causal_rows_mask_future() {
        let cfg = SoftmaxConfig::default();
        let lut = ExpLut::new(&cfg);
        let s = DenseMatrix::zeros(4, 4);
        let (p, cycles) = softmax_rows(&s, true, 16, &cfg, &lut);
        assert_eq!(p.get(0, 0), 1023);
        assert_eq!(p.get(0, 1), 0);
        assert_eq!(p.get(3, 3), 256);
        assert_eq!(cycles, 4 * (2 + 16));
    }

    #[test]
    fn bias_saturates() {
        let x = DenseMatrix::from_vec(1, 2, vec![32000, -5]).unwrap();
        assert_eq!(bias_add(&x, &[1000, 5]).as_slice(), &[32767, 0]);
    }
}
