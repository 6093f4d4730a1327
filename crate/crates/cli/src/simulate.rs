use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use sta_core::compiler::{build_ir, encode_binary, lower, write_jsonl, ModelConfig};
use sta_core::dmme::EngineGeometry;
use sta_core::sim::{simulate, GeometryDims, SimConfig, SimReport};
use sta_core::{Exec, NmConfig};

use crate::ModeArg;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Model configuration (JSON).
    #[arg(conflicts_with = "preset", required_unless_present = "preset")]
    pub model: Option<PathBuf>,
    /// Built-in model instead of a config file.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(ModelConfig::PRESETS))]
    pub preset: Option<String>,
    #[arg(long, default_value = "2:8")]
    pub nm: NmConfig,
    /// Engine shape `HxRxC`; H·n must equal m.
    #[arg(long, value_name = "HxRxC")]
    pub geometry: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
    /// Overrides the seed of the simulator config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulator settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for report.json, blocks.csv and the compiled program.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the per-block CSV instead of the JSON report.
    #[arg(long)]
    pub csv: bool,
    /// Run the main and baseline simulations one after the other.
    #[arg(long)]
    pub sequential: bool,
}

pub fn load(args: &SimulateArgs) -> anyhow::Result<(String, ModelConfig, SimConfig)> {
    let (name, cfg) = match (&args.model, &args.preset) {
        (Some(p), _) => {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (name, ModelConfig::from_file(p).with_context(|| format!("loading {}", p.display()))?)
        }
        (None, Some(n)) => (n.clone(), ModelConfig::preset(n).context("unknown preset")?),
        (None, None) => bail!("need a model config file or --preset"),
    };
    let mut sim = match &args.config {
        Some(p) => SimConfig::from_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => SimConfig::default(),
    };
    if let Some(s) = args.seed {
        sim.seed = s;
    }
    if let Some(g) = &args.geometry {
        let g = EngineGeometry::parse(g, args.nm)?;
        sim.geometry = Some(GeometryDims { h: g.h(), r: g.r(), c: g.c() });
    }
    Ok((name, cfg, sim))
}

pub fn run_report(args: &SimulateArgs) -> anyhow::Result<SimReport> {
    let (name, cfg, sim) = load(args)?;
    let exec = if args.sequential { Exec::Sequential } else { Exec::Parallel };
    log::info!("simulating {name} at {} in {:?} mode", args.nm, args.mode);
    let report = simulate(&name, &cfg, args.nm, &sim, args.mode.into(), exec)?;

    if let Some(dir) = crate::out_dir(&args.out)? {
        let json = BufWriter::new(File::create(dir.join("report.json"))?);
        serde_json::to_writer_pretty(json, &report)?;
        report.write_blocks_csv(BufWriter::new(File::create(dir.join("blocks.csv"))?))?;
        let program = lower(&cfg, &build_ir(&cfg)?, args.nm);
        std::fs::write(dir.join("program.bin"), encode_binary(&program.instructions))?;
        let mut jl = BufWriter::new(File::create(dir.join("program.jsonl"))?);
        write_jsonl(&program.instructions, &mut jl)?;
        jl.flush()?;
    }
    Ok(report)
}

pub fn run(args: &SimulateArgs) -> anyhow::Result<()> {
    let report = run_report(args)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if args.csv {
        report.write_blocks_csv(&mut out)?;
    } else {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    }
    Ok(())
}
