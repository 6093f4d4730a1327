use std::time::Instant;

use sta_core::compiler::{build_ir, lower, ModelConfig};
use sta_core::sim::{execute, reference_forward, simulate, synthetic_inputs, ExecMode, SimConfig, WeightStore};
use sta_core::{Exec, NmConfig};

fn nm(s: &str) -> NmConfig {
    s.parse().unwrap()
}

fn replay(cfg: &ModelConfig, pattern: &str, seed: u64) {
    let sim = SimConfig { seed, ..SimConfig::default() };
    let ir = build_ir(cfg).unwrap();
    let p = lower(cfg, &ir, nm(pattern));
    let w = WeightStore::synthetic(&p, seed).unwrap();
    let x = synthetic_inputs(&p, seed);
    let g = sim.engine_geometry(nm(pattern)).unwrap();
    let want = reference_forward(cfg, &ir, &w, &x, &sim);
    for mode in [ExecMode::Auto, ExecMode::Dense] {
        let got = execute(&p, &w, &x, &g, &sim, mode).unwrap();
        assert_eq!(got.outputs, want, "{pattern} {mode:?}");
        assert_eq!(got.traffic.offchip_intermediate_bytes, 0);
    }
}

#[test]
fn shallow_transformer_matches_reference() {
    let t = Instant::now();
    replay(&ModelConfig::preset("shallow-transformer").unwrap(), "2:8", 3);
    eprintln!("replay took {:?}", t.elapsed());
}

#[test]
fn small_models_match_reference_across_patterns() {
    let cfg = ModelConfig {
        num_encoders: 1,
        num_decoders: 1,
        seq_len: 12,
        heads: 2,
        hidden: 16,
        intermediate: 32,
        activation: Default::default(),
    };
    for pattern in ["1:2", "2:4", "1:8", "2:8", "4:4"] {
        replay(&cfg, pattern, 5);
    }
    let decoder_only = ModelConfig { num_encoders: 0, num_decoders: 2, ..cfg };
    replay(&decoder_only, "2:4", 6);
}

#[test]
fn shallow_speedup_bounded() {
    let cfg = ModelConfig::preset("shallow-transformer").unwrap();
    let r = simulate("shallow-transformer", &cfg, nm("2:8"), &SimConfig::default(), ExecMode::Auto, Exec::Parallel).unwrap();
    eprintln!("shallow 2:8 speedup {:.3}", r.speedup);
    assert!(r.speedup > 1.0 && r.speedup <= 4.0);
    for b in &r.blocks {
        assert!(b.cycles <= b.baseline_cycles);
    }
    assert_eq!(r.blocks.iter().map(|b| b.cycles).sum::<u64>(), r.total_cycles);
}

#[test]
fn dense_mode_is_deterministic() {
    let cfg = ModelConfig::preset("shallow-transformer").unwrap();
    let run = || simulate("s", &cfg, nm("2:8"), &SimConfig::default(), ExecMode::Dense, Exec::Sequential).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.total_cycles, b.total_cycles);
    assert_eq!(a, b);
    assert_eq!(a.speedup, 1.0);
}

#[test]
fn tinybert_sparser_pattern_is_faster() {
    let cfg = ModelConfig::preset("tinybert4").unwrap();
    let t = Instant::now();
    let runs = Exec::Parallel.map(&["1:8", "2:8"], |p| {
        simulate("tinybert4", &cfg, nm(p), &SimConfig::default(), ExecMode::Auto, Exec::Parallel).unwrap()
    });
    eprintln!("tinybert took {:?}", t.elapsed());
    eprintln!("1:8 {} cycles, 2:8 {} cycles", runs[0].total_cycles, runs[1].total_cycles);
    assert!(runs[0].total_cycles < runs[1].total_cycles);
    for r in &runs {
        assert!(r.speedup > 1.0 && r.speedup <= 8.0);
    }
}
