use super::array::{PeMode, SystolicArray};
use super::timing::{pass_count, steady_steps, COUNT_TRAILING_DRAIN};
use super::trace::{CycleRecord, CycleTrace, TraceLevel};
use super::{DmmeError, EngineGeometry, MatMulMode};
use crate::matrix::DenseMatrix;
use crate::nm::{self, CompressedMatrix, GroupAxis};

/// Right-hand operand of a MatMul.
#[derive(Debug, Clone, Copy)]
pub enum Rhs<'a> {
    /// One `K x L` matrix per head.
    Dense(&'a [DenseMatrix]),
    /// N:M weights, grouped along K.
    Compressed(&'a CompressedMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatMulOutput {
    /// One `J x L` result per head.
    pub results: Vec<DenseMatrix>,
    pub trace: CycleTrace,
}

struct Unit {
    engine: usize,
    head: usize,
    l0: usize,
}

struct Pass {
    j0: usize,
    units: Vec<Unit>,
}

fn plan(mode: MatMulMode, heads: usize, j: usize, l: usize, g: &EngineGeometry) -> Vec<Pass> {
    let (h, r, c) = (g.h(), g.r(), g.c());
    let mut passes = Vec::new();
    for j0 in (0..j).step_by(c) {
        match mode {
            MatMulMode::DenseDense => {
                let tiles: Vec<(usize, usize)> = (0..heads)
                    .flat_map(|hd| (0..l).step_by(r).map(move |l0| (hd, l0)))
                    .collect();
                for chunk in tiles.chunks(h) {
                    let units = chunk
                        .iter()
                        .enumerate()
                        .map(|(e, &(head, l0))| Unit { engine: e, head, l0 })
                        .collect();
                    passes.push(Pass { j0, units });
                }
            }
            MatMulMode::SparseDense => {
                for head in 0..heads {
                    for lg in (0..l).step_by(h * r) {
                        let units = (0..h)
                            .map(|e| Unit { engine: e, head, l0: lg + e * r })
                            .filter(|u| u.l0 < l)
                            .collect();
                        passes.push(Pass { j0, units });
                    }
                }
            }
        }
    }
    passes
}

fn to_i16(m: &DenseMatrix) -> Result<Vec<i16>, DmmeError> {
    m.as_slice()
        .iter()
        .map(|&v| i16::try_from(v).map_err(|_| DmmeError::OperandRange { value: v as i64 }))
        .collect()
}

/// Weight source for the west edge.
enum Weights<'a> {
    Dense { mats: Vec<Vec<i16>>, k: usize, l: usize },
    Sparse { w: &'a CompressedMatrix, values: Vec<i16> },
}

impl Weights<'_> {
    /// Fills `out` with step `s` of output feature `col` and returns the mask.
    fn word(&self, head: usize, col: usize, s: usize, n: usize, out: &mut [i16]) -> u64 {
        match self {
            Weights::Dense { mats, k, l } => {
                for (t, o) in out.iter_mut().enumerate().take(n) {
                    let kk = s * n + t;
                    *o = if kk < *k { mats[head][kk * l + col] } else { 0 };
                }
                0
            }
            Weights::Sparse { w, values } => {
                let idx = col * w.groups_per_line() + s;
                out[..n].copy_from_slice(&values[idx * n..(idx + 1) * n]);
                w.masks()[idx].bits()
            }
        }
    }
}

/// Runs `heads` products `lhs[h] · rhs[h]` on the engine.
///
/// `lhs` holds `J x K` activations per head. Dense mode takes one `K x L`
/// dense matrix per head; sparse mode takes a single head and N:M weights
/// matching the engine's pattern.
pub fn run_matmul(
    mode: MatMulMode,
    lhs: &[DenseMatrix],
    rhs: Rhs<'_>,
    g: &EngineGeometry,
    level: TraceLevel,
) -> Result<MatMulOutput, DmmeError> {
    let mismatch = |s: String| Err(DmmeError::GeometryMismatch(s));
    if lhs.is_empty() {
        return mismatch("no operands".into());
    }
    let (j, k) = lhs[0].dims();
    if lhs.iter().any(|a| a.dims() != (j, k)) {
        return mismatch("left operands differ in shape".into());
    }
    let (n, m) = (g.n(), g.m());
    let (weights, l) = match (mode, rhs) {
        (MatMulMode::DenseDense, Rhs::Dense(b)) => {
            if b.len() != lhs.len() {
                return mismatch(format!("{} left vs {} right heads", lhs.len(), b.len()));
            }
            let l = b[0].cols();
            if b.iter().any(|x| x.dims() != (k, l)) {
                return mismatch(format!("right operand must be {k}x{l} for every head"));
            }
            let mats = b.iter().map(to_i16).collect::<Result<_, _>>()?;
            (Weights::Dense { mats, k, l }, l)
        }
        (MatMulMode::SparseDense, Rhs::Compressed(w)) => {
            if lhs.len() != 1 {
                return mismatch("sparse mode takes a single head".into());
            }
            if (w.config().n() as usize, w.config().m() as usize) != (n, m) {
                return mismatch(format!("weights are {}, engine is {}", w.config(), g.nm()));
            }
            if w.group_axis() != GroupAxis::Rows || w.rows() != k {
                return mismatch(format!("weights {}x{} do not reduce over K={k}", w.rows(), w.cols()));
            }
            let values = w
                .values()
                .iter()
                .map(|&v| i16::try_from(v).map_err(|_| DmmeError::OperandRange { value: v as i64 }))
                .collect::<Result<_, _>>()?;
            (Weights::Sparse { w, values }, w.cols())
        }
        _ => return mismatch(format!("{mode:?} mode with the other operand kind")),
    };
    let acts: Vec<Vec<i16>> = lhs.iter().map(to_i16).collect::<Result<_, _>>()?;

    let heads = lhs.len();
    let (r, c) = (g.r(), g.c());
    let steps = steady_steps(mode, k, g) as usize;
    let fill = g.fill_skew();
    let north_width = if mode == MatMulMode::SparseDense { m } else { n };
    let keep = level == TraceLevel::PerCycle;

    let passes = plan(mode, heads, j, l, g);
    debug_assert_eq!(passes.len() as u64, pass_count(mode, heads, j, l, g));
    let mut arrays: Vec<SystolicArray> = (0..g.h()).map(|_| SystolicArray::new(r, c, n, m)).collect();
    let mut results = vec![DenseMatrix::zeros(j, l); heads];
    let mut trace = CycleTrace::new(mode);
    trace.passes = passes.len() as u64;
    trace.fill_skew = fill as u64;
    trace.steady_per_pass = steps as u64;
    let mut wbuf = vec![0i16; n];
    let mut abuf = vec![0i16; m];

    for (p, pass) in passes.iter().enumerate() {
        for u in &pass.units {
            arrays[u.engine].reset(PeMode::from(mode));
        }
        let cols_used = c.min(j - pass.j0);
        for t in 0..fill + steps {
            let mut rec = CycleRecord {
                cycle: trace.total_cycles,
                ..Default::default()
            };
            for u in &pass.units {
                let arr = &mut arrays[u.engine];
                let rows_used = r.min(l - u.l0);
                for i in 0..rows_used {
                    if let Some(s) = t.checked_sub(i).filter(|&s| s < steps) {
                        let mask = weights.word(u.head, u.l0 + i, s, n, &mut wbuf);
                        arr.drive_west(i, &wbuf, mask);
                    }
                }
                for jj in 0..cols_used {
                    if let Some(s) = t.checked_sub(jj).filter(|&s| s < steps) {
                        let row = &acts[u.head][(pass.j0 + jj) * k..(pass.j0 + jj + 1) * k];
                        for (e, a) in abuf[..north_width].iter_mut().enumerate() {
                            let kk = s * north_width + e;
                            *a = if kk < k { row[kk] } else { 0 };
                        }
                        arr.drive_north(jj, &abuf[..north_width]);
                    }
                }
                let st = arr.step()?;
                rec.active_pes += st.active_pes;
                rec.macs += st.macs;
                rec.selector_ops += st.selector_ops;
                trace.overflow_count += st.overflows;
                trace.max_pe_macs = trace.max_pe_macs.max(st.max_pe_macs);
                if t < steps {
                    rec.weight_reads += (n * rows_used) as u64;
                }
            }
            if t < steps {
                // one m-element word per used bank, shared by all heads
                rec.input_reads += (m * cols_used) as u64;
            }
            trace.push(rec, keep);
            trace.compute_cycles += 1;
        }
        for u in &pass.units {
            let (tile, _) = arrays[u.engine].drain_results();
            let out = &mut results[u.head];
            for i in 0..r.min(l - u.l0) {
                for jj in 0..cols_used {
                    out.set(pass.j0 + jj, u.l0 + i, tile.get(i, jj));
                }
            }
        }
        let last = p + 1 == passes.len();
        if last && !COUNT_TRAILING_DRAIN {
            trace.drain_tail = c as u64;
        } else {
            for _ in 0..c {
                let rec = CycleRecord {
                    cycle: trace.total_cycles,
                    ..Default::default()
                };
                trace.push(rec, keep);
                trace.drain_cycles += 1;
            }
        }
    }
    Ok(MatMulOutput { results, trace })
}

/// Dense x dense over `heads` independent operand pairs.
pub fn run_dense(
    lhs: &[DenseMatrix],
    rhs: &[DenseMatrix],
    g: &EngineGeometry,
    level: TraceLevel,
) -> Result<MatMulOutput, DmmeError> {
    run_matmul(MatMulMode::DenseDense, lhs, Rhs::Dense(rhs), g, level)
}

/// Activations times compressed N:M weights.
pub fn run_sparse(
    lhs: &DenseMatrix,
    w: &CompressedMatrix,
    g: &EngineGeometry,
    level: TraceLevel,
) -> Result<MatMulOutput, DmmeError> {
    run_matmul(
        MatMulMode::SparseDense,
        std::slice::from_ref(lhs),
        Rhs::Compressed(w),
        g,
        level,
    )
}

/// The same weights decompressed and run in dense mode: the baseline a
/// sparsity-unaware engine would pay.
pub fn run_forced_dense(
    lhs: &DenseMatrix,
    w: &CompressedMatrix,
    g: &EngineGeometry,
    level: TraceLevel,
) -> Result<MatMulOutput, DmmeError> {
    let dense = nm::decompress(w).map_err(|e| DmmeError::GeometryMismatch(e.to_string()))?;
    run_dense(std::slice::from_ref(lhs), std::slice::from_ref(&dense), g, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmme::predict_timing;
    use crate::nm::NmConfig;
    use crate::rng;
    use rand::Rng;

    fn figure() -> EngineGeometry {
        EngineGeometry::new(2, 1, 2, NmConfig::pattern(1, 2).unwrap()).unwrap()
    }

    fn reference(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        a.matmul_i64(b).map(|v| v as i32)
    }

    #[test]
    fn figure_example_counts() {
        let g = figure();
        let a = DenseMatrix::from_vec(2, 4, vec![1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let w = DenseMatrix::from_vec(4, 2, vec![3, 0, 0, -1, 0, 2, 5, 0]).unwrap();
        let cw = nm::compress(&w, g.nm()).unwrap();
        let dense = run_dense(std::slice::from_ref(&a), std::slice::from_ref(&w), &g, TraceLevel::PerCycle).unwrap();
        let sparse = run_sparse(&a, &cw, &g, TraceLevel::PerCycle).unwrap();
        let forced = run_forced_dense(&a, &cw, &g, TraceLevel::Summary).unwrap();
        assert_eq!(dense.trace.total_cycles, 5);
        assert_eq!(sparse.trace.total_cycles, 3);
        assert_eq!(forced.trace.total_cycles, 5);
        assert_eq!(dense.results[0], reference(&a, &w));
        assert_eq!(sparse.results[0], reference(&a, &w));
        assert_eq!(sparse.trace.records.len(), 3);
        assert_eq!(dense.trace.drain_tail, 2);
    }

    #[test]
    fn random_sparse_equals_oracle_and_prediction() {
        let nm = NmConfig::pattern(2, 8).unwrap();
        let g = EngineGeometry::new(4, 3, 5, nm).unwrap();
        let mut r = rng::seeded(21);
        for _ in 0..200 {
            let (j, k, l) = (r.gen_range(1..=64), r.gen_range(1..=64), r.gen_range(1..=64));
            let a = rng::random_dense(&mut r, j, k, 2000);
            let w = rng::random_nm_sparse(&mut r, k, l, nm, 2000);
            let cw = nm::compress(&w, nm).unwrap();
            let out = run_sparse(&a, &cw, &g, TraceLevel::Summary).unwrap();
            assert_eq!(out.results[0], reference(&a, &w));
            let t = predict_timing(MatMulMode::SparseDense, 1, j, k, l, &g);
            assert_eq!(out.trace.total_cycles, t.total_cycles);
            assert_eq!(out.trace.passes, t.passes);
            assert!(out.trace.max_pe_macs <= 2);
        }
    }

    #[test]
    fn multi_head_dense_matches_oracle() {
        let g = EngineGeometry::new(2, 2, 3, NmConfig::pattern(2, 4).unwrap()).unwrap();
        let mut r = rng::seeded(22);
        let a: Vec<_> = (0..3).map(|_| rng::random_dense(&mut r, 7, 9, 100)).collect();
        let b: Vec<_> = (0..3).map(|_| rng::random_dense(&mut r, 9, 5, 100)).collect();
        let out = run_dense(&a, &b, &g, TraceLevel::PerCycle).unwrap();
        for h in 0..3 {
            assert_eq!(out.results[h], reference(&a[h], &b[h]));
        }
        assert_eq!(out.trace.selector_ops, 0);
        let t = predict_timing(MatMulMode::DenseDense, 3, 7, 9, 5, &g);
        assert_eq!(out.trace.total_cycles, t.total_cycles);
        assert_eq!(out.trace.records.len() as u64, t.total_cycles);
    }

    #[test]
    fn overflow_wraps_and_counts() {
        let g = EngineGeometry::new(1, 1, 1, NmConfig::pattern(1, 1).unwrap()).unwrap();
        let a = DenseMatrix::from_vec(1, 4, vec![-32768; 4]).unwrap();
        let b = DenseMatrix::from_vec(4, 1, vec![-32768; 4]).unwrap();
        let out = run_dense(&[a], &[b], &g, TraceLevel::Summary).unwrap();
        assert_eq!(out.results[0].get(0, 0), (4i64 << 30) as i32);
        assert_eq!(out.trace.overflow_count, 1);
    }

    #[test]
    fn errors() {
        let g = figure();
        let a = DenseMatrix::zeros(2, 4);
        let w = nm::compress(&DenseMatrix::zeros(4, 2), NmConfig::pattern(2, 4).unwrap()).unwrap();
        assert!(matches!(run_sparse(&a, &w, &g, TraceLevel::Summary), Err(DmmeError::GeometryMismatch(_))));
        let big = DenseMatrix::from_vec(1, 1, vec![40000]).unwrap();
        assert!(matches!(
            run_dense(std::slice::from_ref(&big), std::slice::from_ref(&big), &g, TraceLevel::Summary),
            Err(DmmeError::OperandRange { .. })
        ));
        let b = DenseMatrix::zeros(3, 2);
        assert!(run_dense(&[a], &[b], &g, TraceLevel::Summary).is_err());
    }
}
