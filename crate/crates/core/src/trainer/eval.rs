//! Autoregressive rollouts scored against stored fine trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrajectoryShard;
use crate::error::{Error, Result};
use crate::grid::{energy_mse, relative_energy_mse};
use crate::propagator::{Propagator, VelocityPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    /// Mean over shards of the energy MSE after each step.
    pub energy_mse: Vec<f64>,
    /// Mean over shards of the relative energy MSE after each step.
    pub relative: Vec<f64>,
    /// `[shard][step]` energy MSE.
    pub per_shard: Vec<Vec<f64>>,
}

/// Applies `model` `steps` times from each shard's first state. Non-finite
/// errors, and every step after a non-finite state, are reported as infinity.
pub fn rollout_metrics(model: &dyn Propagator, shards: &[TrajectoryShard], cs: &[VelocityPair], steps: usize) -> Result<RolloutMetrics> {
    if shards.len() != cs.len() {
        return Err(Error::Contract(format!("{} shards with {} velocity pairs", shards.len(), cs.len())));
    }
    if let Some(sh) = shards.iter().find(|s| s.horizon() < steps) {
        return Err(Error::Config(format!("shard {} has {} intervals, rollout needs {steps}", sh.id, sh.horizon())));
    }
    let per: Vec<(Vec<f64>, Vec<f64>)> = shards
        .par_iter()
        .zip(cs)
        .map(|(sh, c)| {
            let mut s = sh.states[0].clone();
            let (mut abs, mut rel) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
            for j in 1..=steps {
                s = model.propagate(&s, c)?;
                if !s.is_finite() {
                    abs.resize(steps, f64::INFINITY);
                    rel.resize(steps, f64::INFINITY);
                    break;
                }
                let clean = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
                abs.push(clean(energy_mse(&s, &sh.states[j], &c.fine)?));
                rel.push(match relative_energy_mse(&s, &sh.states[j], &c.fine) {
                    Ok(v) => clean(v),
                    Err(Error::DegenerateReference) => f64::NAN,
                    Err(e) => return Err(e),
                });
            }
            Ok((abs, rel))
        })
        .collect::<Result<_>>()?;
    let mean = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        (0..steps)
            .map(|j| per.iter().map(|p| pick(p)[j]).sum::<f64>() / per.len().max(1) as f64)
            .collect()
    };
    Ok(RolloutMetrics {
        energy_mse: mean(&|p| &p.0),
        relative: mean(&|p| &p.1),
        per_shard: per.iter().map(|p| p.0.clone()).collect(),
    })
}

/// Per-step mean energy MSE of an autoregressive rollout.
pub fn validation_curve(model: &dyn Propagator, shards: &[TrajectoryShard], cs: &[VelocityPair], steps: usize) -> Result<Vec<f64>> {
    Ok(rollout_metrics(model, shards, cs, steps)?.energy_mse)
}
