use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use sta_core::fixed;
use sta_core::prune::{run_idp, write_winner_set, IdpSchedule, MaskTensor, PruneError};
use sta_core::{rng, Matrix};

#[derive(Args, Debug)]
pub struct IdpArgs {
    /// Group size M.
    #[arg(long, default_value_t = 8)]
    pub m: u32,
    /// Last (sparsest) N of the schedule.
    #[arg(long, default_value_t = 1)]
    pub n_end: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    #[arg(long, default_value_t = 32)]
    pub cols: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Directory for the winner NMSP files and manifest.jsonl.
    #[arg(long, default_value = "idp_winners")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct WinnerLine {
    n: u32,
    m: u32,
    sparsity: f64,
    /// Largest |W - T| over kept weights.
    max_kept_error: f64,
    path: PathBuf,
}

/// `0.5·||W⊙B - T||²` restricted to the kept entries.
fn masked_quadratic(target: &Matrix<f64>, wm: &Matrix<f64>, mask: &MaskTensor) -> Matrix<f64> {
    Matrix::from_fn(wm.rows(), wm.cols(), |i, j| {
        if mask.is_kept(i, j) {
            wm.get(i, j) - target.get(i, j)
        } else {
            0.0
        }
    })
}

pub fn run(args: &IdpArgs) -> anyhow::Result<()> {
    if !(1 <= args.n_end && args.n_end < args.m) {
        return Err(PruneError::InvalidSchedule(format!("need 1 <= n_end < m, got n_end={} m={}", args.n_end, args.m)).into());
    }
    let mut r = rng::seeded(args.seed);
    let w0 = rng::random_real(&mut r, args.rows, args.cols, 1.0);
    let target = w0.map(|v| 1.5 * v);
    let schedule = IdpSchedule {
        lambda: args.lambda,
        ..IdpSchedule::full(args.m, args.n_end, args.epochs, args.lr)
    };
    let set = run_idp(&w0, &schedule, |wm, mask| Ok(masked_quadratic(&target, wm, mask)))?;
    let entries = write_winner_set(&args.out, &set, fixed::FRAC_BITS)?;
    for (w, e) in set.winners.iter().zip(&entries) {
        let mut err = 0.0f64;
        for i in 0..args.rows {
            for j in 0..args.cols {
                if w.mask.is_kept(i, j) {
                    err = err.max((w.weights.get(i, j) - target.get(i, j)).abs());
                }
            }
        }
        let line = WinnerLine {
            n: e.n,
            m: e.m,
            sparsity: e.sparsity,
            max_kept_error: err,
            path: args.out.join(&e.path),
        };
        println!("{}", serde_json::to_string(&line)?);
    }
    Ok(())
}
