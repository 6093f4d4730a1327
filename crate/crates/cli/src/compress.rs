use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::Serialize;
use sta_core::nm::{self, compression_ratio, dense_bits, GroupAxis, MatrixDims};
use sta_core::prune::{apply_mask, group_topn_mask};
use sta_core::{rng, DenseMatrix, NmConfig};

use crate::PatternArgs;

#[derive(Args, Debug)]
pub struct CompressArgs {
    /// Dense weight matrix as CSV of raw integers, one row per line.
    #[arg(conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate a seeded `RxC` matrix instead of reading one.
    #[arg(long, value_name = "RxC")]
    pub synthetic: Option<String>,
    /// Keep the top-n magnitudes of every group before packing.
    #[arg(long)]
    pub prune: bool,
    #[command(flatten)]
    pub pattern: PatternArgs,
    /// NMSP file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Serialize)]
pub struct CompressReport {
    pub source: String,
    pub rows: usize,
    pub cols: usize,
    pub nm: String,
    pub q: u8,
    pub seed: u64,
    pub pruned: bool,
    pub nnz: usize,
    pub dense_bits: u64,
    pub packed_bits: u64,
    pub dense_bytes: u64,
    pub packed_bytes: u64,
    pub file_bytes: Option<u64>,
    pub compression_ratio: f64,
    pub closed_form_ratio: f64,
}

fn parse_dims(s: &str) -> anyhow::Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("expected RxC, got {s:?}"))?;
    let dims = (r.trim().parse()?, c.trim().parse()?);
    if dims.0 == 0 || dims.1 == 0 {
        bail!("matrix dims must be positive, got {s}");
    }
    Ok(dims)
}

pub fn read_csv(path: &Path) -> anyhow::Result<DenseMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<i32> = line
            .split(',')
            .map(|v| v.trim().parse::<i32>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}:{}: not an integer row", path.display(), ln + 1))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                bail!("{}:{}: {} values, expected {c}", path.display(), ln + 1, row.len())
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    let cols = cols.context("empty weight file")?;
    Ok(DenseMatrix::from_vec(rows, cols, data)?)
}

fn synthetic(dims: (usize, usize), nm: NmConfig, seed: u64, dense: bool) -> DenseMatrix {
    let mut r = rng::seeded(seed);
    let bound = nm.value_range().1.min(i32::MAX as i64) as i32;
    if dense {
        rng::random_dense(&mut r, dims.0, dims.1, bound)
    } else {
        rng::random_nm_sparse(&mut r, dims.0, dims.1, nm, bound)
    }
}

pub fn compress_matrix(args: &CompressArgs) -> anyhow::Result<CompressReport> {
    let nm = args.pattern.nm;
    let (mut w, source) = match (&args.input, &args.synthetic) {
        (Some(p), _) => (read_csv(p)?, p.display().to_string()),
        (None, Some(s)) => {
            let dims = parse_dims(s)?;
            (synthetic(dims, nm, args.pattern.seed, args.prune), format!("synthetic {s}"))
        }
        (None, None) => bail!("need an input file or --synthetic RxC"),
    };
    if args.prune {
        let mask = group_topn_mask(&w, nm.n(), nm.m());
        w = apply_mask(&w, &mask)?;
    }
    let packed = nm::compress(&w, nm)?;
    if args.prune {
        let back = nm::decompress(&packed)?;
        if back != w {
            bail!("round trip of the pruned matrix does not reproduce it");
        }
    }

    let (rows, cols) = w.dims();
    let dense = dense_bits(MatrixDims::new(rows as u64, cols as u64), nm.q());
    // every stored slot plus one mask bit per element
    let packed_bits = packed.values().len() as u64 * nm.q() as u64 + (rows * cols) as u64;
    let closed = compression_ratio(nm, GroupAxis::Rows.extents(rows, cols).0 as u64);

    let file_bytes = match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            nm::write_nmsp(&packed, BufWriter::new(f))?;
            Some(std::fs::metadata(path)?.len())
        }
        None => None,
    };

    Ok(CompressReport {
        source,
        rows,
        cols,
        nm: nm.to_string(),
        q: nm.q(),
        seed: args.pattern.seed,
        pruned: args.prune,
        nnz: packed.nnz(),
        dense_bits: dense,
        packed_bits,
        dense_bytes: dense.div_ceil(8),
        packed_bytes: packed_bits.div_ceil(8),
        file_bytes,
        compression_ratio: dense as f64 / packed_bits as f64,
        closed_form_ratio: *closed.numer() as f64 / *closed.denom() as f64,
    })
}

pub fn run(args: &CompressArgs) -> anyhow::Result<()> {
    let r = compress_matrix(args)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!("source            {}", r.source);
    println!("shape             {}x{}", r.rows, r.cols);
    println!("pattern           {} q={}", r.nm, r.q);
    println!("nonzeros          {}", r.nnz);
    println!("dense bytes       {}", r.dense_bytes);
    println!("packed bytes      {}", r.packed_bytes);
    if let Some(b) = r.file_bytes {
        println!("nmsp file bytes   {b}");
    }
    println!("compression ratio {:.2}", r.compression_ratio);
    Ok(())
}
