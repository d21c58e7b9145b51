use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec, WaveState};

pub const INV_SIGMA_SQ_MEAN: f64 = 250.0;
pub const INV_SIGMA_SQ_SD: f64 = 10.0;
pub const TAU_BOUND: f64 = 0.5;

/// Gaussian pulse `u = exp(-|x + tau|^2 * inv_sigma_sq)` at rest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub tau: [f64; 2],
    pub inv_sigma_sq: f64,
}

impl PulseParams {
    /// `tau ~ U[-0.5, 0.5]^2`, `inv_sigma_sq ~ N(250, 10)` redrawn until positive.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let tau = [rng.gen_range(-TAU_BOUND..=TAU_BOUND), rng.gen_range(-TAU_BOUND..=TAU_BOUND)];
        let normal = Normal::new(INV_SIGMA_SQ_MEAN, INV_SIGMA_SQ_SD).expect("valid normal");
        let inv_sigma_sq = loop {
            let v = normal.sample(rng);
            if v > 0.0 {
                break v;
            }
        };
        PulseParams { tau, inv_sigma_sq }
    }

    pub fn state(&self, g: &GridSpec) -> WaveState {
        let u = g.field_from_fn(|x, y| {
            let (a, b) = (x + self.tau[0], y + self.tau[1]);
            (-(a * a + b * b) * self.inv_sigma_sq).exp()
        });
        WaveState::new(u, Field::zeros(g.nx, g.ny), *g).expect("grid-shaped fields")
    }
}

pub fn sample_initial(rng: &mut impl Rng, g: &GridSpec) -> (WaveState, PulseParams) {
    let p = PulseParams::sample(rng);
    (p.state(g), p)
}
