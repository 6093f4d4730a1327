//! Seeded generators for synthetic weights and test operands.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::matrix::{DenseMatrix, Matrix};
use crate::nm::NmConfig;

pub type SimRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SimRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Uniform integers in `[-bound, bound]`.
pub fn random_dense(rng: &mut SimRng, rows: usize, cols: usize, bound: i32) -> DenseMatrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

/// Random matrix that satisfies `nm` along the row (reduction) axis. Each
/// group keeps a uniformly chosen subset of at most `n` positions.
pub fn random_nm_sparse(
    rng: &mut SimRng,
    rows: usize,
    cols: usize,
    nm: NmConfig,
    bound: i32,
) -> DenseMatrix {
    let m = nm.m() as usize;
    let n = nm.n() as usize;
    let mut out = DenseMatrix::zeros(rows, cols);
    for c in 0..cols {
        for g0 in (0..rows).step_by(m) {
            let len = m.min(rows - g0);
            let mut idx: Vec<usize> = (0..len).collect();
            // partial Fisher-Yates for the kept positions
            let keep = n.min(len);
            for i in 0..keep {
                let j = rng.gen_range(i..len);
                idx.swap(i, j);
            }
            for &p in &idx[..keep] {
                out.set(g0 + p, c, rng.gen_range(-bound..=bound));
            }
        }
    }
    out
}

pub fn random_real(rng: &mut SimRng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}
