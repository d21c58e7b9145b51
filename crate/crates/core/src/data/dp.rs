//! Training pairs drawn from the states Parareal actually visits.

use serde::{Deserialize, Serialize};

use super::shard::TrajectoryShard;
use crate::error::{Error, Result};
use crate::grid::WaveState;
use crate::parareal::{fine_images_of_last, parareal_solve, Executor, PararealPlan};
use crate::propagator::{Propagator, VelocityPair};
use crate::transfer::TransferConfig;

/// `(u[n][k], F u[n][k])` for one lattice point of one shard.
#[derive(Clone, Debug, PartialEq)]
pub struct DpPair {
    pub shard: usize,
    pub n: usize,
    pub iteration: usize,
    pub input: WaveState,
    pub target: WaveState,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DpStats {
    pub shards: usize,
    pub pairs: usize,
    /// Lattice points lost to guard violations.
    pub dropped: usize,
}

pub struct DpDataset {
    pub pairs: Vec<DpPair>,
    pub velocities: Vec<VelocityPair>,
    pub stats: DpStats,
}

/// Runs Parareal with `model` over every shard's horizon for up to `k`
/// iterations and records every `(n, k)` pair visited. Positions in
/// `shards` are used as shard indices into `velocities`.
pub fn build_dataset_dp(
    shards: &[TrajectoryShard],
    model: &dyn Propagator,
    fine: &dyn Propagator,
    k: usize,
    transfer: &TransferConfig,
    exec: &dyn Executor,
) -> Result<DpDataset> {
    let mut out = DpDataset {
        pairs: Vec::new(),
        velocities: Vec::with_capacity(shards.len()),
        stats: DpStats {
            shards: shards.len(),
            ..DpStats::default()
        },
    };
    for (s, sh) in shards.iter().enumerate() {
        let c = VelocityPair::new(sh.velocity.clone(), transfer)?;
        let n_int = sh.horizon();
        let plan = PararealPlan::new(n_int, k.min(n_int))?;
        let lattice = n_int * (plan.k + 1);
        match parareal_solve(&sh.states[0], &c, model, fine, exec, &plan) {
            Ok(mut trace) => {
                fine_images_of_last(&mut trace, &c, fine, exec)?;
                let before = out.pairs.len();
                for (it, (states, images)) in trace.iterates.iter().zip(&trace.fine).enumerate() {
                    for n in 0..n_int {
                        out.pairs.push(DpPair {
                            shard: s,
                            n,
                            iteration: it,
                            input: states[n].clone(),
                            target: images[n].clone(),
                        });
                    }
                }
                out.stats.dropped += lattice - (out.pairs.len() - before);
            }
            Err(Error::Diverged(_)) => out.stats.dropped += lattice,
            Err(e) => return Err(e),
        }
        out.velocities.push(c);
    }
    out.stats.pairs = out.pairs.len();
    Ok(out)
}
