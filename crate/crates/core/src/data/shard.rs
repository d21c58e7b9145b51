//! Fine-solver trajectories, the unit every dataset is built from.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pulse::PulseParams;
use super::velocity::VelocityMeta;
use crate::error::{Error, Result};
use crate::fine::{FineSolver, FineSolverConfig};
use crate::grid::{Field, GridSpec, VelocityModel, WaveState};

/// Where a shard came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardProvenance {
    pub seed: u64,
    pub pulse: PulseParams,
    pub velocity: VelocityMeta,
}

/// `N + 1` consecutive fine states `u[n+1] = F u[n]` for one velocity model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryShard {
    pub id: usize,
    pub states: Vec<WaveState>,
    pub velocity: VelocityModel,
    pub provenance: Option<ShardProvenance>,
}

impl TrajectoryShard {
    /// Number of macro intervals.
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn grid(&self) -> GridSpec {
        self.states[0].grid
    }

    /// Largest deviation of a recomputed step from the stored successor.
    pub fn verify(&self, cfg: &FineSolverConfig) -> Result<f64> {
        let mut solver = FineSolver::new(&self.velocity, cfg)?;
        let mut worst: f64 = 0.0;
        for w in self.states.windows(2) {
            worst = worst.max(solver.propagate(&w[0])?.max_abs_diff(&w[1])?);
        }
        Ok(worst)
    }

    /// Little-endian doubles: `u`, `ut` of every state, then `c`.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity((2 * self.states.len() + 1) * self.velocity.field().len() * 8);
        let mut put = |f: &Field| f.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for s in &self.states {
            put(&s.u);
            put(&s.ut);
        }
        put(self.velocity.field());
        out
    }

    pub fn from_blob(bytes: &[u8], id: usize, grid: GridSpec, horizon: usize, provenance: Option<ShardProvenance>) -> Result<Self> {
        let plane = grid.len();
        let want = (2 * (horizon + 1) + 1) * plane * 8;
        if bytes.len() != want {
            return Err(Error::Format(format!("shard {id}: expected {want} bytes, found {}", bytes.len())));
        }
        let mut planes = bytes.chunks_exact(plane * 8).map(|chunk| {
            let v = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            Field::from_vec(grid.nx, grid.ny, v)
        });
        let mut next = || planes.next().expect("length checked");
        let states = (0..=horizon)
            .map(|_| WaveState::new(next()?, next()?, grid))
            .collect::<Result<Vec<_>>>()?;
        let velocity = VelocityModel::new(next()?).map_err(|e| Error::Format(format!("shard {id}: {e}")))?;
        Ok(TrajectoryShard {
            id,
            states,
            velocity,
            provenance,
        })
    }

    /// Writes the blob and returns its SHA-256 digest.
    pub fn write(&self, path: &Path) -> Result<String> {
        let blob = self.to_blob();
        fs::write(path, &blob)?;
        Ok(hex::encode(Sha256::digest(&blob)))
    }
}

/// `N` sequential fine solves from `s0`.
pub fn make_trajectory(s0: &WaveState, c: &VelocityModel, horizon: usize, cfg: &FineSolverConfig) -> Result<TrajectoryShard> {
    if s0.grid.dims() != cfg.grid.dims() {
        return Err(crate::error::shape_err("initial state vs fine grid", s0.dims(), cfg.grid.dims()));
    }
    let mut states = vec![s0.clone()];
    if horizon > 0 {
        let mut solver = FineSolver::new(c, cfg)?;
        for n in 0..horizon {
            let next = solver.propagate(&states[n])?;
            if !next.is_finite() {
                return Err(Error::Diverged(format!("non-finite fine state at step {}", n + 1)));
            }
            states.push(next);
        }
    }
    Ok(TrajectoryShard {
        id: 0,
        states,
        velocity: c.clone(),
        provenance: None,
    })
}
