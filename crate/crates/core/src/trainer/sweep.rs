//! Grid search over learning rate, weight decay and batch size.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RunRecord, TrainConfig};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub batch_size: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            lr: vec![1e-3, 1e-4],
            weight_decay: vec![1e-2, 1e-3],
            batch_size: vec![64, 256],
        }
    }
}

impl SweepGrid {
    /// Every grid point times every trial, each with its own seed.
    pub fn expand(&self, base: &TrainConfig, trials: usize) -> Vec<(usize, TrainConfig)> {
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &weight_decay in &self.weight_decay {
                for &batch_size in &self.batch_size {
                    for trial in 0..trials {
                        let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
                        rng.set_stream(1 << 32 | out.len() as u64);
                        let cfg = TrainConfig {
                            lr,
                            weight_decay,
                            batch_size,
                            seed: rng.next_u64(),
                            ..base.clone()
                        };
                        out.push((trial, cfg));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepStatus {
    Completed,
    Diverged { reason: String },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub run: usize,
    pub trial: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub status: SweepStatus,
    /// Mean 8-step validation energy MSE of the final model.
    pub val_score: Option<f64>,
    pub final_train_loss: Option<f64>,
}

/// Runs ordered by ascending validation score; runs without a score last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub entries: Vec<SweepEntry>,
}

impl Leaderboard {
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().filter_map(|e| e.val_score).collect()
    }

    /// One row per run for box plots.
    pub fn csv(&self) -> String {
        let mut s = String::from("rank,run,trial,seed,lr,weight_decay,batch_size,status,val_score,final_train_loss\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for (rank, e) in self.entries.iter().enumerate() {
            let status = match &e.status {
                SweepStatus::Completed => "completed",
                SweepStatus::Diverged { .. } => "diverged",
                SweepStatus::Failed { .. } => "failed",
            };
            s.push_str(&format!(
                "{},{},{},{},{:e},{:e},{},{},{},{}\n",
                rank + 1,
                e.run,
                e.trial,
                e.seed,
                e.lr,
                e.weight_decay,
                e.batch_size,
                status,
                opt(e.val_score),
                opt(e.final_train_loss)
            ));
        }
        s
    }
}

/// Runs every configuration of `grid x trials` through `run`, recording
/// failures and continuing.
pub fn grid_search(base: &TrainConfig, grid: &SweepGrid, trials: usize, run: &mut dyn FnMut(usize, &TrainConfig) -> Result<RunRecord>) -> Leaderboard {
    let mut entries: Vec<SweepEntry> = grid
        .expand(base, trials)
        .into_iter()
        .enumerate()
        .map(|(i, (trial, cfg))| {
            let (status, val_score, final_train_loss) = match run(i, &cfg) {
                Ok(r) => {
                    let status = match &r.outcome {
                        super::Outcome::Completed => SweepStatus::Completed,
                        super::Outcome::Diverged { reason, .. } => SweepStatus::Diverged { reason: reason.clone() },
                    };
                    (status, r.val_score(), r.epochs.last().map(|e| e.train_loss))
                }
                Err(e) => (SweepStatus::Failed { error: e.to_string() }, None, None),
            };
            SweepEntry {
                run: i,
                trial,
                seed: cfg.seed,
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                batch_size: cfg.batch_size,
                status,
                val_score: val_score.filter(|v| v.is_finite()),
                final_train_loss,
            }
        })
        .collect();
    entries.sort_by(|a, b| match (a.val_score, b.val_score) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.run.cmp(&b.run)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.run.cmp(&b.run),
    });
    Leaderboard { entries }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub mean: f64,
    pub q75: f64,
    pub max: f64,
}

/// Box-plot summary with linearly interpolated quantiles.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some(Quartiles {
        min: v[0],
        q25: q(0.25),
        median: q(0.5),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        q75: q(0.75),
        max: v[v.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_with_three_trials_has_24_runs_with_distinct_seeds() {
        let runs = SweepGrid::default().expand(&TrainConfig::default(), 3);
        assert_eq!(runs.len(), 24);
        let mut seeds: Vec<u64> = runs.iter().map(|r| r.1.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 24);
    }

    #[test]
    fn quartiles_of_one_to_five() {
        let q = quartiles(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((q.min, q.q25, q.median, q.mean, q.q75, q.max), (1.0, 2.0, 3.0, 3.0, 4.0, 5.0));
        assert!(quartiles(&[]).is_none());
    }
}
