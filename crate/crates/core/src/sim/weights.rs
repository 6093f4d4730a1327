use std::collections::HashMap;

use crate::compiler::{Program, TensorKind, WeightId};
use crate::fixed::{self, FRAC_BITS};
use crate::matrix::DenseMatrix;
use crate::nm::{self, CompressedMatrix, NmConfig};
use crate::prune::{apply_mask, group_topn_mask};
use crate::rng;

/// One projection: compressed `K x L` weights and an `L`-element bias, Q.10.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub matrix: CompressedMatrix,
    pub bias: Vec<i32>,
}

#[derive(Debug, Clone, Default)]
pub struct WeightStore {
    layers: HashMap<WeightId, LayerWeights>,
}

fn layer_seed(seed: u64, id: WeightId) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((id.block as u64) << 8 | id.role.code() as u64)
}

/// Uniform weights of scale `2/sqrt(K)`, magnitude-pruned to `nm`.
pub fn synthetic_layer(k: usize, l: usize, nm: NmConfig, seed: u64) -> Result<LayerWeights, nm::NmError> {
    let mut r = rng::seeded(seed);
    let real = rng::random_real(&mut r, k, l, 2.0 / (k as f64).sqrt());
    let mask = group_topn_mask(&real, nm.n(), nm.m());
    let pruned = apply_mask(&real, &mask).expect("mask matches weights");
    let quant: DenseMatrix = pruned.map(|v| fixed::to_fixed(v, FRAC_BITS));
    let bias = rng::random_real(&mut r, 1, l, 0.1).map(|v| fixed::to_fixed(v, FRAC_BITS)).into_vec();
    Ok(LayerWeights {
        matrix: nm::compress(&quant, nm.with_q(16)?)?,
        bias,
    })
}

impl WeightStore {
    /// Seeded weights for every weight tensor of `p`. Each layer draws from
    /// its own stream, so the values do not depend on compilation order.
    pub fn synthetic(p: &Program, seed: u64) -> Result<Self, nm::NmError> {
        let mut layers = HashMap::new();
        for t in &p.tensors {
            if let TensorKind::Weight(id) = t.kind {
                let layer = synthetic_layer(t.shape.rows, t.shape.cols, p.nm, layer_seed(seed, id))?;
                layers.insert(id, layer);
            }
        }
        Ok(Self { layers })
    }

    pub fn insert(&mut self, id: WeightId, w: LayerWeights) {
        self.layers.insert(id, w);
    }

    pub fn get(&self, id: WeightId) -> &LayerWeights {
        self.layers.get(&id).unwrap_or_else(|| panic!("no weights for {id:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&WeightId, &LayerWeights)> {
        self.layers.iter()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Uniform `[-1, 1)` Q.10 activations for each program input.
pub fn synthetic_inputs(p: &Program, seed: u64) -> Vec<DenseMatrix> {
    p.inputs
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let s = p.tensor(id).shape;
            let mut r = rng::seeded(seed ^ (0xA5A5 + i as u64));
            rng::random_real(&mut r, s.rows, s.cols, 1.0).map(|v| fixed::to_fixed(v, FRAC_BITS))
        })
        .collect()
}
