use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{execute, synthetic_inputs, ExecMode, ExecOutcome, MemoryTraffic, SimConfig, SimError, WeightStore};
use crate::compiler::{build_ir, footprint, lower, mac_count, validate_program, BlockKind, Footprint, MacCounts, ModelConfig};
use crate::nm::{dense_bits, storage_cost, MatrixDims, NmConfig, StorageFormat};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub kind: BlockKind,
    pub cycles: u64,
    pub baseline_cycles: u64,
}

impl BlockReport {
    pub fn speedup(&self) -> f64 {
        self.baseline_cycles as f64 / self.cycles as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub model: String,
    pub config: ModelConfig,
    pub sim: SimConfig,
    pub nm: String,
    pub geometry: String,
    pub mode: ExecMode,
    pub total_cycles: u64,
    /// Same program and geometry with every MatMul in dense mode.
    pub baseline_cycles: u64,
    pub speedup: f64,
    pub macs: MacCounts,
    pub engine_macs: u64,
    pub baseline_engine_macs: u64,
    pub matmul_cycles: u64,
    pub vector_cycles: u64,
    pub softmax_cycles: u64,
    pub overflow_count: u64,
    pub blocks: Vec<BlockReport>,
    pub traffic: MemoryTraffic,
    pub footprint: Footprint,
    pub weight_bits_dense: u64,
    pub weight_bits_compressed: u64,
    pub compression_ratio: f64,
}

impl SimReport {
    pub fn write_blocks_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "block,kind,cycles,baseline_cycles,speedup")?;
        for b in &self.blocks {
            writeln!(w, "{},{:?},{},{},{:.4}", b.name, b.kind, b.cycles, b.baseline_cycles, b.speedup())?;
        }
        Ok(())
    }
}

/// Compiles `cfg`, validates it against the configured memories, and runs
/// it on seeded synthetic weights. In `Auto` mode the dense-mode baseline is
/// run as well (concurrently when `exec` allows).
pub fn simulate(
    name: &str,
    cfg: &ModelConfig,
    nm: NmConfig,
    sim: &SimConfig,
    mode: ExecMode,
    exec: Exec,
) -> Result<SimReport, SimError> {
    sim.validate()?;
    let geometry = sim.engine_geometry(nm)?;
    let ir = build_ir(cfg)?;
    let program = lower(cfg, &ir, nm);
    validate_program(&program, &sim.memory).map_err(SimError::Diagnostics)?;
    let weights = WeightStore::synthetic(&program, sim.seed)?;
    let inputs = synthetic_inputs(&program, sim.seed);

    let modes: Vec<ExecMode> = match mode {
        ExecMode::Auto => vec![ExecMode::Auto, ExecMode::Dense],
        ExecMode::Dense => vec![ExecMode::Dense],
    };
    let runs: Vec<ExecOutcome> = exec.try_map(&modes, |&m| execute(&program, &weights, &inputs, &geometry, sim, m))?;
    let main = &runs[0];
    let base = runs.last().unwrap();

    let block_cycles = |o: &ExecOutcome, s: usize, e: usize| o.instruction_cycles[s..e].iter().sum::<u64>();
    let blocks = program
        .blocks
        .iter()
        .map(|b| BlockReport {
            name: b.name.clone(),
            kind: b.kind,
            cycles: block_cycles(main, b.start, b.end),
            baseline_cycles: block_cycles(base, b.start, b.end),
        })
        .collect();

    let (mut dense_w, mut packed_w) = (0u64, 0u64);
    for (_, w) in weights.iter() {
        let dims = MatrixDims::new(w.matrix.rows() as u64, w.matrix.cols() as u64);
        dense_w += dense_bits(dims, 16);
        packed_w += storage_cost(StorageFormat::Bitmap, dims, w.matrix.config(), w.matrix.nnz() as u64);
    }

    Ok(SimReport {
        model: name.to_string(),
        config: *cfg,
        sim: sim.clone(),
        nm: nm.to_string(),
        geometry: format!("{}x{}x{}", geometry.h(), geometry.r(), geometry.c()),
        mode,
        total_cycles: main.total_cycles,
        baseline_cycles: base.total_cycles,
        speedup: base.total_cycles as f64 / main.total_cycles as f64,
        macs: mac_count(&ir, nm),
        engine_macs: main.engine_macs,
        baseline_engine_macs: base.engine_macs,
        matmul_cycles: main.matmul_cycles,
        vector_cycles: main.vector_cycles,
        softmax_cycles: main.softmax_cycles,
        overflow_count: main.overflow_count,
        blocks,
        traffic: main.traffic,
        footprint: footprint(&program),
        weight_bits_dense: dense_w,
        weight_bits_compressed: packed_w,
        compression_ratio: dense_w as f64 / packed_w as f64,
    })
}
