//! Sample indices into trajectory shards and the unroll-depth distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::shard::TrajectoryShard;
use crate::error::{Error, Result};

/// Start step `n` and unroll depth `k` inside one shard, `1 <= k <= N - n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleIndex {
    pub shard: usize,
    pub n: usize,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

impl SampleIndex {
    pub fn new(shard: usize, n: usize, k: usize) -> Self {
        SampleIndex {
            shard,
            n,
            k,
            weight: None,
            iteration: None,
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.k == 0 || self.n + self.k > horizon {
            return Err(Error::Contract(format!(
                "sample (n = {}, k = {}) outside a horizon of {horizon}",
                self.n, self.k
            )));
        }
        Ok(())
    }
}

/// How the unroll depth is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DepthMode {
    Uniform,
    /// Integer-discretised normal `N(mu, sigma)` truncated to `[1, N - n]`.
    Weighted { mu: f64, sigma: f64 },
}

/// Every consecutive pair `(n, k = 1)` of every shard. Positions in
/// `shards` are used as shard indices.
pub fn build_dataset_d(shards: &[TrajectoryShard]) -> Vec<SampleIndex> {
    shards
        .iter()
        .enumerate()
        .flat_map(|(s, sh)| (0..sh.horizon()).map(move |n| SampleIndex::new(s, n, 1)))
        .collect()
}

/// Every start step `n < N` of every shard, with `k` left at 1.
pub fn start_positions(shards: &[TrajectoryShard]) -> Vec<(usize, usize)> {
    shards
        .iter()
        .enumerate()
        .flat_map(|(s, sh)| (0..sh.horizon()).map(move |n| (s, n)))
        .collect()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Mass of `k = lo..=hi` under `N(mu, sigma)` restricted to `[lo - 1/2, hi + 1/2]`,
/// each integer taking the probability of its unit bin.
pub fn truncated_normal_masses(mu: f64, sigma: f64, lo: usize, hi: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && mu.is_finite()) || lo > hi {
        return Err(Error::Config(format!(
            "truncated normal needs sigma > 0 and lo <= hi (mu {mu}, sigma {sigma}, [{lo}, {hi}])"
        )));
    }
    let bin = |k: usize| {
        let a = (k as f64 - 0.5 - mu) / sigma;
        let b = (k as f64 + 0.5 - mu) / sigma;
        if a > 0.0 {
            std_normal_sf(a) - std_normal_sf(b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        }
    };
    let mut m: Vec<f64> = (lo..=hi).map(bin).collect();
    let total: f64 = m.iter().sum();
    if total > 0.0 {
        m.iter_mut().for_each(|v| *v /= total);
    } else {
        // every bin underflows: the support point nearest the mean
        m.iter_mut().for_each(|v| *v = 0.0);
        let nearest = (mu.round().clamp(lo as f64, hi as f64) as usize) - lo;
        m[nearest] = 1.0;
    }
    Ok(m)
}

/// Unroll depth for start step `n` of a horizon-`N` shard.
pub fn draw_depth(n: usize, horizon: usize, mode: DepthMode, rng: &mut impl Rng) -> Result<usize> {
    if n >= horizon {
        return Err(Error::Contract(format!("start step {n} leaves no interval in a horizon of {horizon}")));
    }
    let hi = horizon - n;
    match mode {
        DepthMode::Uniform => Ok(rng.gen_range(1..=hi)),
        DepthMode::Weighted { mu, sigma } => {
            let masses = truncated_normal_masses(mu, sigma, 1, hi)?;
            let r: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, m) in masses.iter().enumerate() {
                acc += m;
                if r < acc {
                    return Ok(i + 1);
                }
            }
            Ok(masses.iter().rposition(|&m| m > 0.0).expect("some mass") + 1)
        }
    }
}

/// Draws `n` uniformly, then `k` by `mode`.
pub fn draw_multistep_index(shard_id: usize, shard: &TrajectoryShard, rng: &mut impl Rng, mode: DepthMode) -> Result<SampleIndex> {
    let horizon = shard.horizon();
    if horizon == 0 {
        return Err(Error::Contract(format!("shard {shard_id} has no intervals")));
    }
    let n = rng.gen_range(0..horizon);
    let k = draw_depth(n, horizon, mode, rng)?;
    Ok(SampleIndex::new(shard_id, n, k))
}
