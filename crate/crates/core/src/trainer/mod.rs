//! Losses, training regimes, validation rollouts and the hyperparameter sweep.

pub mod eval;
pub mod loss;
pub mod regimes;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::data::DpStats;
use crate::error::{Error, Result};
use crate::nn::JNetConfig;

pub use eval::{rollout_metrics, validation_curve, RolloutMetrics};
pub use loss::{
    chain_forward_backward, chain_in_space, component_loss, energy_loss_cotangent, multi_step_loss, single_step_loss,
    ChainOutput, ChainSample, LossSpace,
};
pub use regimes::{epoch_samples, train, weighted_mu};
pub use sweep::{grid_search, quartiles, Leaderboard, Quartiles, SweepEntry, SweepGrid, SweepStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Consecutive pairs, loss on the reconstructed state.
    Single,
    /// Consecutive pairs, loss on the raw network output (network trained
    /// apart from `Λ†`).
    Modular,
    /// Uniform unroll depth.
    Multi,
    /// Truncated-normal unroll depth with a rising mean.
    WeightedMulti,
    /// Losses summed over the sweeps of a Parareal solve.
    PararealTrain,
    /// Single steps on pairs harvested from Parareal runs of a pretrained model.
    PararealRefine,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Single => "single",
            Regime::Modular => "modular",
            Regime::Multi => "multi",
            Regime::WeightedMulti => "weighted_multi",
            Regime::PararealTrain => "parareal_train",
            Regime::PararealRefine => "parareal_refine",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PararealTrainConfig {
    /// Parareal iterations.
    pub k: usize,
    /// Fraction of the training shards used by `parareal_train`.
    pub subset: f64,
    /// Shards per optimiser step in `parareal_train`.
    pub batch_size: usize,
    /// Fraction of the training shards whose Parareal runs supply refinement pairs.
    pub refine_fraction: f64,
    /// Fraction of the training shards used for pretraining before refinement.
    pub pretrain_subset: f64,
    /// Single-step epochs before harvesting; 0 for a warm-started model.
    pub pretrain_epochs: usize,
}

impl Default for PararealTrainConfig {
    fn default() -> Self {
        PararealTrainConfig {
            k: 4,
            subset: 0.25,
            batch_size: 8,
            refine_fraction: 0.125,
            pretrain_subset: 0.5,
            pretrain_epochs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Samples per forward/backward pass; batch statistics are taken per micro-batch.
    pub micro_batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs between increments of the truncated-normal mean.
    pub mu_period: usize,
    pub sigma: f64,
    /// Samples whose state seminorm exceeds this multiple of the largest
    /// reference seminorm are dropped.
    pub guard_factor: f64,
    pub val_steps: usize,
    /// Validate every this many epochs (the last epoch always).
    pub val_every: usize,
    pub jnet: JNetConfig,
    pub parareal: PararealTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Single,
            lr: 1e-3,
            weight_decay: 1e-3,
            batch_size: 64,
            micro_batch: 16,
            epochs: 200,
            seed: 0,
            mu_period: 3,
            sigma: 1.0,
            guard_factor: 1e3,
            val_steps: 8,
            val_every: 1,
            jnet: JNetConfig::default(),
            parareal: PararealTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        let p = &self.parareal;
        let checks = [
            (self.lr >= 0.0 && self.lr.is_finite(), "lr must be finite and non-negative"),
            (self.weight_decay >= 0.0, "weight decay must be non-negative"),
            (self.batch_size > 0 && self.micro_batch > 0, "batch sizes must be positive"),
            (self.mu_period > 0, "mu period must be positive"),
            (self.sigma > 0.0, "sigma must be positive"),
            (self.guard_factor > 0.0, "guard factor must be positive"),
            (self.val_every > 0, "val_every must be positive"),
            (p.batch_size > 0, "parareal batch size must be positive"),
            (frac(p.subset) && frac(p.refine_fraction) && frac(p.pretrain_subset), "subset fractions must lie in (0, 1]"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        self.jnet.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the samples that were not dropped.
    pub train_loss: f64,
    /// The same losses averaged per unrolled application, comparable
    /// across unroll depths.
    pub step_loss: f64,
    pub samples: usize,
    pub aborted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Validation energy MSE after each rollout step; empty when skipped.
    pub val_mse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pretrain: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpStats>,
    pub outcome: Outcome,
    pub parameter_count: usize,
    pub wall_seconds: f64,
}

impl RunRecord {
    /// Mean over rollout steps of the last validation curve.
    pub fn val_score(&self) -> Option<f64> {
        let v = &self.epochs.iter().rev().find(|e| !e.val_mse.is_empty())?.val_mse;
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.outcome, Outcome::Diverged { .. })
    }

    /// `epoch,train_loss,step_loss,val_mse_step1..` rows.
    pub fn loss_csv(&self) -> String {
        let steps = self.config.val_steps;
        let mut s = String::from("epoch,train_loss,step_loss");
        for j in 1..=steps {
            s.push_str(&format!(",val_mse_step{j}"));
        }
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!("{},{:e},{:e}", e.epoch, e.train_loss, e.step_loss));
            for j in 0..steps {
                match e.val_mse.get(j) {
                    Some(v) => s.push_str(&format!(",{v:e}")),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}
