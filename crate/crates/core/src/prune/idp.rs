use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{apply_mask, dynamic_update_step, group_topn_mask, sparsity_of, MaskTensor, PruneError};
use crate::fixed;
use crate::matrix::{DenseMatrix, Matrix};
use crate::nm::{self, NmConfig};

/// Sign applied to the regularizer on pruned weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RegularizerSign {
    /// `+λ((1-B)⊙W)`.
    #[default]
    AsPrinted,
    /// `-λ((1-B)⊙W)`, decaying pruned weights toward zero.
    Decay,
}

impl RegularizerSign {
    pub fn factor(self) -> f64 {
        match self {
            RegularizerSign::AsPrinted => 1.0,
            RegularizerSign::Decay => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdpSchedule {
    pub m: u32,
    pub n_start: u32,
    pub n_end: u32,
    pub epochs_per_step: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    #[serde(default)]
    pub sign: RegularizerSign,
}

impl IdpSchedule {
    /// Full schedule from `m - 1` down to `n_end`.
    pub fn full(m: u32, n_end: u32, epochs_per_step: usize, learning_rate: f64) -> Self {
        Self {
            m,
            n_start: m.saturating_sub(1),
            n_end,
            epochs_per_step,
            learning_rate,
            lambda: 0.0,
            sign: RegularizerSign::AsPrinted,
        }
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        if !(1 <= self.n_end && self.n_end <= self.n_start && self.n_start < self.m) {
            return Err(PruneError::InvalidSchedule(format!(
                "need 1 <= n_end <= n_start < m, got n_end={} n_start={} m={}",
                self.n_end, self.n_start, self.m
            )));
        }
        if self.m > 64 {
            return Err(PruneError::InvalidSchedule(format!("m={} exceeds 64", self.m)));
        }
        if self.epochs_per_step == 0 {
            return Err(PruneError::InvalidSchedule("epochs_per_step must be >= 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.n_start - self.n_end + 1) as usize
    }
}

/// The model retained at the end of one schedule step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub n: u32,
    /// Raw weights after the last update; pruned entries may be nonzero.
    pub weights: Matrix<f64>,
    /// Top-n mask of the final weights.
    pub mask: MaskTensor,
    /// Mask generated on the inherited weights, before any training.
    pub boundary_mask: MaskTensor,
    /// Mask of the model this step inherited from.
    pub inherited_mask: MaskTensor,
}

impl Winner {
    pub fn sparse_weights(&self) -> Matrix<f64> {
        apply_mask(&self.weights, &self.mask).expect("winner dims are consistent")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerSet {
    pub m: u32,
    pub winners: Vec<Winner>,
}

/// Inherited dynamic pruning.
///
/// For every N from `n_start` down to `n_end`, the kept weights of the
/// previous winner seed the step (the dense input seeds the first), then
/// `epochs_per_step` iterations each regenerate the top-N mask and apply one
/// update. `train_step` receives `W ⊙ B` and the mask and returns the
/// gradient at that point.
pub fn run_idp<F>(
    initial_weights: &Matrix<f64>,
    schedule: &IdpSchedule,
    mut train_step: F,
) -> Result<WinnerSet, PruneError>
where
    F: FnMut(&Matrix<f64>, &MaskTensor) -> Result<Matrix<f64>, PruneError>,
{
    schedule.validate()?;
    let m = schedule.m;
    let (rows, cols) = initial_weights.dims();
    let mut prev_weights = initial_weights.clone();
    let mut prev_mask = MaskTensor::filled(rows, cols, m, true);
    let mut winners = Vec::with_capacity(schedule.steps());

    for n in (schedule.n_end..=schedule.n_start).rev() {
        let mut w = apply_mask(&prev_weights, &prev_mask)?;
        let boundary_mask = group_topn_mask(&w, n, m);
        for _ in 0..schedule.epochs_per_step {
            let mask = group_topn_mask(&w, n, m);
            mask.check(n)?;
            let masked = apply_mask(&w, &mask)?;
            let grad = train_step(&masked, &mask)?;
            w = dynamic_update_step(&w, &mask, &grad, schedule.learning_rate, schedule.lambda, schedule.sign)?;
        }
        let mask = group_topn_mask(&w, n, m);
        mask.check(n)?;
        log::debug!("idp step n={n}: sparsity {:.4}", sparsity_of(&mask));
        winners.push(Winner {
            n,
            weights: w.clone(),
            mask: mask.clone(),
            boundary_mask,
            inherited_mask: prev_mask,
        });
        prev_weights = w;
        prev_mask = mask;
    }
    Ok(WinnerSet { m, winners })
}

/// One line of the winner manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub n: u32,
    pub m: u32,
    pub sparsity: f64,
    pub path: PathBuf,
}

/// Writes each winner's sparse weights as `winner_n{N}_m{M}.nmsp` (16-bit,
/// `frac_bits` fractional bits) and a `manifest.jsonl` next to them.
pub fn write_winner_set(
    dir: &Path,
    set: &WinnerSet,
    frac_bits: u32,
) -> Result<Vec<ManifestEntry>, PruneError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(set.winners.len());
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
    for w in &set.winners {
        let sparse = w.sparse_weights();
        let quant: DenseMatrix = sparse.map(|v| fixed::to_fixed(v, frac_bits));
        let cfg = NmConfig::new(w.n, set.m, 16)?;
        let packed = nm::compress(&quant, cfg)?;
        let name = format!("winner_n{}_m{}.nmsp", w.n, set.m);
        nm::write_nmsp(&packed, BufWriter::new(File::create(dir.join(&name))?))?;
        let entry = ManifestEntry {
            n: w.n,
            m: set.m,
            sparsity: sparsity_of(&w.mask),
            path: PathBuf::from(name),
        };
        serde_json::to_writer(&mut manifest, &entry).map_err(std::io::Error::from)?;
        manifest.write_all(b"\n")?;
        entries.push(entry);
    }
    manifest.flush()?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Gradient of `0.5 * ||W⊙B - T||^2`, restricted to kept entries.
    fn quadratic(target: Matrix<f64>) -> impl FnMut(&Matrix<f64>, &MaskTensor) -> Result<Matrix<f64>, PruneError> {
        move |wm, mask| {
            Ok(Matrix::from_fn(wm.rows(), wm.cols(), |i, j| {
                if mask.is_kept(i, j) { wm.get(i, j) - target.get(i, j) } else { 0.0 }
            }))
        }
    }

    fn setup(seed: u64, rows: usize, cols: usize) -> (Matrix<f64>, Matrix<f64>) {
        let mut r = rng::seeded(seed);
        let w0 = rng::random_real(&mut r, rows, cols, 1.0);
        let target = w0.map(|v| 1.5 * v);
        (w0, target)
    }

    #[test]
    fn degenerate_schedule_equals_direct_pruning() {
        let (w0, t) = setup(1, 16, 4);
        let sched = IdpSchedule {
            n_start: 2,
            ..IdpSchedule::full(4, 2, 50, 0.1)
        };
        let set = run_idp(&w0, &sched, quadratic(t.clone())).unwrap();
        assert_eq!(set.winners.len(), 1);

        // direct pruning at N=2 from the dense model
        let mut w = w0.clone();
        for _ in 0..50 {
            let mask = group_topn_mask(&w, 2, 4);
            let g = quadratic(t.clone())(&apply_mask(&w, &mask).unwrap(), &mask).unwrap();
            w = dynamic_update_step(&w, &mask, &g, 0.1, 0.0, RegularizerSign::AsPrinted).unwrap();
        }
        assert_eq!(set.winners[0].weights, w);
    }

    #[test]
    fn three_step_schedule_inherits_support() {
        let (w0, t) = setup(2, 32, 6);
        let set = run_idp(&w0, &IdpSchedule::full(4, 1, 100, 0.1), quadratic(t)).unwrap();
        let ns: Vec<u32> = set.winners.iter().map(|w| w.n).collect();
        assert_eq!(ns, vec![3, 2, 1]);
        for pair in set.winners.windows(2) {
            assert_eq!(pair[1].inherited_mask, pair[0].mask);
            assert!(pair[1].boundary_mask.is_subset_of(&pair[0].mask));
        }
    }

    #[test]
    fn full_m8_schedule_length() {
        let (w0, t) = setup(3, 16, 2);
        let set = run_idp(&w0, &IdpSchedule::full(8, 1, 3, 0.1), quadratic(t)).unwrap();
        assert_eq!(set.winners.len(), 7);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (w0, t) = setup(4, 8, 2);
        let sched = IdpSchedule::full(4, 1, 0, 0.1);
        assert!(matches!(run_idp(&w0, &sched, quadratic(t)), Err(PruneError::InvalidSchedule(_))));
        let bad = IdpSchedule { n_end: 4, ..IdpSchedule::full(4, 1, 1, 0.1) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn callback_errors_propagate() {
        let (w0, _) = setup(5, 8, 2);
        let r = run_idp(&w0, &IdpSchedule::full(4, 2, 2, 0.1), |_, _| {
            Err(PruneError::Callback("boom".into()))
        });
        assert!(matches!(r, Err(PruneError::Callback(_))));
    }

    #[test]
    fn manifest_and_files() {
        let (w0, t) = setup(6, 16, 4);
        let set = run_idp(&w0, &IdpSchedule::full(4, 1, 20, 0.1), quadratic(t)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let entries = write_winner_set(dir.path(), &set, fixed::FRAC_BITS).unwrap();
        assert_eq!(entries.len(), 3);
        let text = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        let parsed: Vec<ManifestEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, entries);
        for e in &entries {
            let c = nm::read_nmsp(File::open(dir.path().join(&e.path)).unwrap()).unwrap();
            assert_eq!((c.config().n(), c.config().m()), (e.n, 4));
        }
    }
}
