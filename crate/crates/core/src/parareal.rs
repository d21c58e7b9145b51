//! Parareal: serial sweeps of a cheap propagator corrected by fine-solver
//! residuals that are computed in parallel.
//!
//! `u[n+1][k+1] = Ψ u[n][k+1] + F u[n][k] - Ψ u[n][k]`, with
//! `u[n+1][0] = Ψ u[n][0]` and `u[0][k] = u0`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{energy_seminorm_sq, WaveState};
use crate::propagator::{Propagator, VelocityPair};

pub const DEFAULT_GUARD_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PararealPlan {
    /// Number of macro intervals.
    pub n: usize,
    /// Correction iterations.
    pub k: usize,
    /// States whose energy seminorm exceeds this multiple of the initial
    /// seminorm stop the run.
    pub guard_factor: f64,
}

impl PararealPlan {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        let p = PararealPlan {
            n,
            k,
            guard_factor: DEFAULT_GUARD_FACTOR,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k > self.n {
            return Err(Error::Config(format!("K = {} exceeds N = {}", self.k, self.n)));
        }
        if !(self.guard_factor > 0.0) {
            return Err(Error::Config("guard factor must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic indexed parallel map used for the fine solves.
pub trait Executor: Sync {
    fn map(&self, inputs: &[&WaveState], f: &(dyn Fn(&WaveState) -> Result<WaveState> + Sync)) -> Vec<Result<WaveState>>;
}

pub struct SerialExecutor;

impl Executor for SerialExecutor {
    fn map(&self, inputs: &[&WaveState], f: &(dyn Fn(&WaveState) -> Result<WaveState> + Sync)) -> Vec<Result<WaveState>> {
        inputs.iter().map(|s| f(s)).collect()
    }
}

/// Runs the map on the current rayon pool (see `--threads`).
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map(&self, inputs: &[&WaveState], f: &(dyn Fn(&WaveState) -> Result<WaveState> + Sync)) -> Vec<Result<WaveState>> {
        inputs.par_iter().map(|s| f(s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub iteration: usize,
    pub interval: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct PararealTrace {
    /// `iterates[k][n] = u[n][k]`, `n = 0..=N`.
    pub iterates: Vec<Vec<WaveState>>,
    /// `psi[k][n] = Ψ u[n][k]`, `n = 0..N`.
    pub psi: Vec<Vec<WaveState>>,
    /// `fine[k][n] = F u[n][k]`, `n = 0..N`.
    pub fine: Vec<Vec<WaveState>>,
    /// `residuals[k][n] = |u[n][k+1] - u[n][k]|_E`.
    pub residuals: Vec<Vec<f64>>,
    /// Wall-clock seconds of each parallel fine batch.
    pub fine_seconds: Vec<f64>,
    pub truncated: Option<Truncation>,
}

impl PararealTrace {
    /// Index of the last complete iterate.
    pub fn last_iteration(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    pub fn final_states(&self) -> &[WaveState] {
        self.iterates.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn max_residuals(&self) -> Vec<f64> {
        self.residuals.iter().map(|r| r.iter().cloned().fold(0.0, f64::max)).collect()
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            iterations: self.last_iteration(),
            max_residuals: self.max_residuals(),
            residuals: self.residuals.clone(),
            fine_seconds: self.fine_seconds.clone(),
            truncated: self.truncated.clone(),
        }
    }
}

/// JSON export of a trace without the states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub max_residuals: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
    pub fine_seconds: Vec<f64>,
    pub truncated: Option<Truncation>,
}

struct Guard {
    limit_sq: f64,
}

impl Guard {
    fn new(u0: &WaveState, c: &VelocityPair, factor: f64) -> Result<Self> {
        let e0 = energy_seminorm_sq(u0, &c.fine)?;
        Ok(Guard {
            limit_sq: factor * factor * e0,
        })
    }

    fn check(&self, s: &WaveState, c: &VelocityPair) -> Result<Option<String>> {
        let e = energy_seminorm_sq(s, &c.fine)?;
        if !e.is_finite() || (self.limit_sq > 0.0 && e > self.limit_sq) {
            return Ok(Some(format!("energy seminorm^2 {e:e} exceeds guard {:e}", self.limit_sq)));
        }
        Ok(None)
    }
}

/// Zeroth iterate: `u[n+1][0] = Ψ u[n][0]`. Returns the states and the Ψ images.
pub fn parareal_init(
    u0: &WaveState,
    c: &VelocityPair,
    model: &dyn Propagator,
    plan: &PararealPlan,
) -> Result<(Vec<WaveState>, Vec<WaveState>)> {
    plan.validate()?;
    let guard = Guard::new(u0, c, plan.guard_factor)?;
    let mut states = vec![u0.clone()];
    let mut psi = Vec::with_capacity(plan.n);
    for n in 0..plan.n {
        let next = model.propagate(&states[n], c)?;
        if let Some(reason) = guard.check(&next, c)? {
            return Err(Error::Diverged(format!("initial sweep, interval {n}: {reason}")));
        }
        psi.push(next.clone());
        states.push(next);
    }
    Ok((states, psi))
}

/// Fine images `F u[n][k]` of the latest iterate, through `exec`.
fn fine_batch(
    states: &[WaveState],
    c: &VelocityPair,
    fine: &dyn Propagator,
    exec: &dyn Executor,
) -> Result<Vec<WaveState>> {
    let inputs: Vec<&WaveState> = states[..states.len() - 1].iter().collect();
    exec.map(&inputs, &|s| fine.propagate(s, c)).into_iter().collect()
}

/// One correction iteration; appends `u[·][k+1]` to `trace`.
pub fn parareal_iterate(
    trace: &mut PararealTrace,
    c: &VelocityPair,
    model: &dyn Propagator,
    fine: &dyn Propagator,
    exec: &dyn Executor,
    plan: &PararealPlan,
) -> Result<()> {
    let k = trace.iterates.len() - 1;
    let prev = &trace.iterates[k];
    let guard = Guard::new(&prev[0], c, plan.guard_factor)?;
    let t = Instant::now();
    let f = fine_batch(prev, c, fine, exec)?;
    trace.fine_seconds.push(t.elapsed().as_secs_f64());
    let mut next = vec![prev[0].clone()];
    let mut psi = Vec::with_capacity(plan.n);
    for n in 0..plan.n {
        let p = model.propagate(&next[n], c)?;
        let mut u = p.clone();
        u.axpy(1.0, &f[n])?;
        u.axpy(-1.0, &trace.psi[k][n])?;
        if let Some(reason) = guard.check(&u, c)? {
            trace.fine.push(f);
            trace.truncated = Some(Truncation {
                iteration: k + 1,
                interval: n,
                reason,
            });
            return Ok(());
        }
        psi.push(p);
        next.push(u);
    }
    let res = next
        .iter()
        .zip(prev)
        .map(|(a, b)| Ok(energy_seminorm_sq(&a.sub(b)?, &c.fine)?.sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    trace.fine.push(f);
    trace.residuals.push(res);
    trace.psi.push(psi);
    trace.iterates.push(next);
    Ok(())
}

/// Initial sweep followed by up to `plan.k` corrections.
pub fn parareal_solve(
    u0: &WaveState,
    c: &VelocityPair,
    model: &dyn Propagator,
    fine: &dyn Propagator,
    exec: &dyn Executor,
    plan: &PararealPlan,
) -> Result<PararealTrace> {
    let (states, psi) = parareal_init(u0, c, model, plan)?;
    let mut trace = PararealTrace {
        iterates: vec![states],
        psi: vec![psi],
        ..Default::default()
    };
    for _ in 0..plan.k {
        parareal_iterate(&mut trace, c, model, fine, exec, plan)?;
        if trace.truncated.is_some() {
            break;
        }
    }
    Ok(trace)
}

/// `F u[n][K]` for the last iterate, completing the `(n, k)` lattice of fine images.
pub fn fine_images_of_last(
    trace: &mut PararealTrace,
    c: &VelocityPair,
    fine: &dyn Propagator,
    exec: &dyn Executor,
) -> Result<()> {
    if trace.fine.len() < trace.iterates.len() {
        let f = fine_batch(trace.iterates.last().expect("non-empty trace"), c, fine, exec)?;
        trace.fine.push(f);
    }
    Ok(())
}
