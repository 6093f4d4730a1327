use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use sta_core::dmme::{run_dense, run_forced_dense, run_sparse, CycleTrace, EngineGeometry, TraceLevel};
use sta_core::nm::{self, dense_bits, storage_cost, MatrixDims, StorageFormat};
use sta_core::softmax::{ExpLut, SoftmaxConfig};
use sta_core::{DenseMatrix, Exec, NmConfig};

pub const SWEEP_Q: [u8; 4] = [4, 8, 16, 32];
pub const SWEEP_PATTERNS: [(u32, u32); 5] = [(2, 4), (4, 8), (2, 8), (1, 8), (2, 16)];

#[derive(Args, Debug)]
pub struct FiguresArgs {
    #[arg(long, default_value = "figures")]
    pub out: PathBuf,
    /// Rows (reduction axis) of the swept weight matrix.
    #[arg(long, default_value_t = 768)]
    pub rows: u64,
    #[arg(long, default_value_t = 768)]
    pub cols: u64,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub q: u8,
    pub pattern: String,
    pub format: &'static str,
    pub bits: u64,
    pub ratio: f64,
}

/// Storage of a fully populated N:M matrix in every format, at every width.
pub fn cr_sweep(dims: MatrixDims, exec: Exec) -> Vec<SweepRow> {
    let combos: Vec<(u8, (u32, u32))> = SWEEP_Q
        .iter()
        .flat_map(|&q| SWEEP_PATTERNS.iter().map(move |&p| (q, p)))
        .collect();
    exec.map(&combos, |&(q, (n, m))| {
        let cfg = NmConfig::new(n, m, q).expect("sweep patterns are valid");
        let full = dims.rows / m as u64 * n as u64;
        let tail = (dims.rows % m as u64).min(n as u64);
        let nnz = (full + tail) * dims.cols;
        let dense = dense_bits(dims, q);
        StorageFormat::ALL_DEFAULT
            .iter()
            .map(|f| {
                let bits = storage_cost(*f, dims, cfg, nnz);
                SweepRow {
                    q,
                    pattern: cfg.to_string(),
                    format: f.name(),
                    bits,
                    ratio: dense as f64 / bits as f64,
                }
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

pub struct MicroBench {
    pub dense: CycleTrace,
    pub sparse: CycleTrace,
    pub baseline: CycleTrace,
}

/// 1:2 pattern, two 1x2 arrays, a 2x4 activation block times 4x2 weights.
pub fn micro_benchmark() -> anyhow::Result<MicroBench> {
    let nm = NmConfig::pattern(1, 2)?;
    let g = EngineGeometry::new(2, 1, 2, nm)?;
    let a = DenseMatrix::from_vec(2, 4, (1..=8).collect())?;
    let w = DenseMatrix::from_vec(4, 2, vec![3, 0, 0, -1, 0, 2, 5, 0])?;
    let cw = nm::compress(&w, nm)?;
    let dense = run_dense(std::slice::from_ref(&a), std::slice::from_ref(&w), &g, TraceLevel::PerCycle)?;
    let sparse = run_sparse(&a, &cw, &g, TraceLevel::PerCycle)?;
    let baseline = run_forced_dense(&a, &cw, &g, TraceLevel::PerCycle)?;
    Ok(MicroBench {
        dense: dense.trace,
        sparse: sparse.trace,
        baseline: baseline.trace,
    })
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn run(args: &FiguresArgs) -> anyhow::Result<()> {
    let dir = &args.out;
    std::fs::create_dir_all(dir)?;
    let exec = if args.sequential { Exec::Sequential } else { Exec::Parallel };

    let rows = cr_sweep(MatrixDims::new(args.rows, args.cols), exec);
    let mut f = create(dir, "cr_sweep.csv")?;
    writeln!(f, "q,pattern,format,bits,compression_ratio")?;
    for r in &rows {
        writeln!(f, "{},{},{},{},{:.4}", r.q, r.pattern, r.format, r.bits, r.ratio)?;
    }
    f.flush()?;

    let mb = micro_benchmark()?;
    let mut f = create(dir, "dmme_microbench.csv")?;
    writeln!(f, "run,mode,cycles,passes,macs,selector_ops")?;
    for (name, t) in [("dense", &mb.dense), ("sparse", &mb.sparse), ("baseline", &mb.baseline)] {
        writeln!(f, "{name},{:?},{},{},{},{}", t.mode, t.total_cycles, t.passes, t.total_macs, t.selector_ops)?;
        let mut tf = create(dir, &format!("dmme_trace_{name}.csv"))?;
        t.write_csv(&mut tf)?;
        tf.flush()?;
    }
    f.flush()?;

    let mut f = create(dir, "exp_lut.csv")?;
    ExpLut::new(&SoftmaxConfig::default()).write_csv(&mut f)?;
    f.flush()?;

    for r in rows.iter().filter(|r| r.format == "bitmap" && r.q == 16) {
        println!("bitmap q=16 {:>5}  CR {:.3}", r.pattern, r.ratio);
    }
    println!(
        "micro-benchmark cycles: dense {}, sparse {}, baseline {}",
        mb.dense.total_cycles, mb.sparse.total_cycles, mb.baseline.total_cycles
    );
    println!("wrote {}", dir.display());
    Ok(())
}
