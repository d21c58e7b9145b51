//! One-macro-step propagators on the fine grid: the learned end-to-end map
//! `Λ† net Λ G R`, the bilinear baseline `I⁰ G R`, and the fine solver itself.

use serde::{Deserialize, Serialize};

use crate::coarse::{coarse_adjoint, coarse_propagate, Boundary, CoarseSolverConfig};
use crate::error::{shape_err, Error, Result};
use crate::fine::{fine_propagate, FineSolverConfig};
use crate::grid::{EnergyComponents, Field, GridSpec, VelocityModel, WaveState};
use crate::nn::{BnMode, JNet, JNetConfig, NodeId, Tape, Tensor4};
use crate::transfer::{
    from_energy_components, from_energy_components_adjoint, prolong_bilinear, prolong_field, restrict, restrict_adjoint,
    restrict_velocity, to_energy_components, to_energy_components_adjoint, TransferConfig,
};

/// Solver and transfer configuration shared by every propagator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    pub fine: FineSolverConfig,
    pub coarse: CoarseSolverConfig,
    pub transfer: TransferConfig,
}

impl ModelSetup {
    pub fn new(fine: FineSolverConfig, coarse_substeps: usize, boundary: Boundary, transfer: TransferConfig) -> Result<Self> {
        let dt_star = fine.macro_dt();
        let grid = transfer.coarse_grid(&fine.grid, dt_star / coarse_substeps.max(1) as f64)?;
        let setup = ModelSetup {
            fine,
            coarse: CoarseSolverConfig::new(grid, coarse_substeps, boundary)?,
            transfer,
        };
        setup.validate()?;
        Ok(setup)
    }

    /// 64x64 fine / 32x32 coarse grids on `[-1,1)^2`, macro step 0.06.
    pub fn desk() -> Self {
        let fine = FineSolverConfig::for_macro_step(64, 0.06, 40, 2).expect("valid fine config");
        Self::new(
            fine,
            10,
            Boundary::Sponge {
                width: 5,
                rate: crate::coarse::DEFAULT_SPONGE_RATE,
            },
            TransferConfig::default(),
        )
        .expect("valid desk setup")
    }

    /// 128x128 fine / 64x64 coarse grids, 77 RK4 and 36 Verlet steps per 0.06.
    pub fn canonical() -> Self {
        Self::new(FineSolverConfig::canonical(), 36, Boundary::default(), TransferConfig::default())
            .expect("valid canonical setup")
    }

    pub fn validate(&self) -> Result<()> {
        self.fine.validate()?;
        self.coarse.validate()?;
        let want = self.transfer.coarse_grid(&self.fine.grid, self.coarse.grid.dt)?;
        if want.dims() != self.coarse.grid.dims() || (want.dx - self.coarse.grid.dx).abs() > 1e-12 * want.dx {
            return Err(Error::Config(format!(
                "coarse grid {:?} (dx {}) does not match the restricted fine grid {:?} (dx {})",
                self.coarse.grid.dims(),
                self.coarse.grid.dx,
                want.dims(),
                want.dx
            )));
        }
        self.coarse.check_macro_step(self.macro_dt())
    }

    pub fn macro_dt(&self) -> f64 {
        self.fine.macro_dt()
    }

    pub fn fine_grid(&self) -> GridSpec {
        self.fine.grid
    }

    pub fn coarse_grid(&self) -> GridSpec {
        self.coarse.grid
    }
}

/// A fine-grid velocity and its restriction to the coarse grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityPair {
    pub fine: VelocityModel,
    pub coarse: VelocityModel,
}

impl VelocityPair {
    pub fn new(fine: VelocityModel, transfer: &TransferConfig) -> Result<Self> {
        let coarse = restrict_velocity(&fine, transfer)?;
        Ok(VelocityPair { fine, coarse })
    }
}

/// A map advancing a fine-grid state by one macro step.
pub trait Propagator: Sync {
    fn name(&self) -> &str;

    fn propagate(&self, s: &WaveState, c: &VelocityPair) -> Result<WaveState>;

    /// The prediction in fine-grid energy components, where losses are measured.
    fn predict_components(&self, s: &WaveState, c: &VelocityPair) -> Result<EnergyComponents> {
        to_energy_components(&self.propagate(s, c)?, &c.fine)
    }
}

/// The fine solver as a propagator; the reference every model is scored against.
pub struct FineReference {
    pub cfg: FineSolverConfig,
}

impl Propagator for FineReference {
    fn name(&self) -> &str {
        "fine"
    }

    fn propagate(&self, s: &WaveState, c: &VelocityPair) -> Result<WaveState> {
        fine_propagate(s, &c.fine, &self.cfg)
    }
}

/// E2E-V: bilinear interpolation of the coarse solution, `I⁰ G R`.
pub struct BilinearBaseline {
    pub setup: ModelSetup,
}

impl Propagator for BilinearBaseline {
    fn name(&self) -> &str {
        "e2e-v"
    }

    fn propagate(&self, s: &WaveState, c: &VelocityPair) -> Result<WaveState> {
        let g = coarse_step(&self.setup, s, c)?;
        prolong_bilinear(&g, &self.setup.fine.grid, &self.setup.transfer)
    }
}

/// Coarse-to-fine map used inside the end-to-end propagator.
pub enum Upsampler {
    Net(JNet),
    /// Bilinear interpolation of the energy components.
    Bilinear,
}

/// `Ψ = Λ† I Λ G R` with `I` a network or bilinear interpolation.
pub struct NeuralPropagator {
    pub setup: ModelSetup,
    pub upsampler: Upsampler,
}

/// Network input and `mean u` of each sample of a batch.
pub struct Encoded {
    pub x: Tensor4,
    pub means: Vec<f64>,
}

fn coarse_step(setup: &ModelSetup, s: &WaveState, c: &VelocityPair) -> Result<WaveState> {
    check_fine(setup, s, c)?;
    let sc = restrict(s, &setup.transfer)?;
    let sc = WaveState::new(sc.u, sc.ut, setup.coarse.grid)?;
    coarse_propagate(&sc, &c.coarse, &setup.coarse)
}

fn check_fine(setup: &ModelSetup, s: &WaveState, c: &VelocityPair) -> Result<()> {
    let dims = setup.fine.grid.dims();
    if s.dims() != dims {
        return Err(shape_err("state vs fine grid", s.dims(), dims));
    }
    if c.fine.dims() != dims {
        return Err(shape_err("velocity vs fine grid", c.fine.dims(), dims));
    }
    if c.coarse.dims() != setup.coarse.grid.dims() {
        return Err(shape_err("coarse velocity vs coarse grid", c.coarse.dims(), setup.coarse.grid.dims()));
    }
    Ok(())
}

fn planes(fields: &[&Field]) -> Vec<f64> {
    fields.iter().flat_map(|f| f.as_slice().iter().copied()).collect()
}

fn split_planes(data: &[f64], nx: usize, ny: usize, count: usize) -> Result<Vec<Field>> {
    (0..count)
        .map(|i| Field::from_vec(nx, ny, data[i * nx * ny..(i + 1) * nx * ny].to_vec()))
        .collect()
}

impl NeuralPropagator {
    pub fn new(setup: ModelSetup, jnet: JNetConfig, seed: u64) -> Result<Self> {
        setup.validate()?;
        if jnet.in_channels != 4 || jnet.out_channels != 3 {
            return Err(Error::Config("the correction network maps 4 coarse channels to 3 fine channels".into()));
        }
        Ok(NeuralPropagator {
            setup,
            upsampler: Upsampler::Net(JNet::new(jnet, seed)?),
        })
    }

    pub fn bilinear(setup: ModelSetup) -> Result<Self> {
        setup.validate()?;
        Ok(NeuralPropagator {
            setup,
            upsampler: Upsampler::Bilinear,
        })
    }

    pub fn net(&self) -> Option<&JNet> {
        match &self.upsampler {
            Upsampler::Net(n) => Some(n),
            Upsampler::Bilinear => None,
        }
    }

    pub fn net_mut(&mut self) -> Option<&mut JNet> {
        match &mut self.upsampler {
            Upsampler::Net(n) => Some(n),
            Upsampler::Bilinear => None,
        }
    }

    /// `Λ G R` of each state, stacked with the coarse velocity.
    pub fn encode(&self, states: &[&WaveState], cs: &[&VelocityPair]) -> Result<Encoded> {
        let (cx, cy) = self.setup.coarse.grid.dims();
        let mut data = Vec::with_capacity(states.len() * 4 * cx * cy);
        let mut means = Vec::with_capacity(states.len());
        for (s, c) in states.iter().zip(cs) {
            let g = coarse_step(&self.setup, s, c)?;
            let e = to_energy_components(&g, &c.coarse)?;
            data.extend(planes(&[&e.ux, &e.uy, &e.w, c.coarse.field()]));
            means.push(e.mean_u);
        }
        Ok(Encoded {
            x: Tensor4::from_vec([states.len(), 4, cy, cx], data)?,
            means,
        })
    }

    /// Transpose of [`NeuralPropagator::encode`] for one sample: the cotangent
    /// of the first three input channels and of `mean u` mapped back to the
    /// fine input state. The velocity channel carries no state dependence.
    pub fn encode_adjoint(&self, xbar: &[f64], mean_bar: f64, c: &VelocityPair) -> Result<WaveState> {
        let cg = self.setup.coarse.grid;
        let p = split_planes(xbar, cg.nx, cg.ny, 3)?;
        let mut it = p.into_iter();
        let (ux, uy, w) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        let ebar = EnergyComponents::new(ux, uy, w, mean_bar)?;
        let gbar = to_energy_components_adjoint(&ebar, &c.coarse, &cg)?;
        let scbar = coarse_adjoint(&gbar, &c.coarse, &self.setup.coarse)?;
        restrict_adjoint(&scbar, &self.setup.fine.grid, &self.setup.transfer)
    }

    /// Fine-grid energy components from the three output channels of one sample.
    pub fn components(&self, y: &[f64], mean: f64) -> Result<EnergyComponents> {
        let fg = self.setup.fine.grid;
        let mut it = split_planes(y, fg.nx, fg.ny, 3)?.into_iter();
        EnergyComponents::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), mean)
    }

    /// `Λ†` of one sample's output channels.
    pub fn decode(&self, y: &[f64], mean: f64, c: &VelocityPair) -> Result<WaveState> {
        from_energy_components(&self.components(y, mean)?, &c.fine, &self.setup.fine.grid)
    }

    /// Transpose of [`NeuralPropagator::decode`]: output-channel and `mean u` cotangents.
    pub fn decode_adjoint(&self, sbar: &WaveState, c: &VelocityPair) -> Result<(Vec<f64>, f64)> {
        let e = from_energy_components_adjoint(sbar, &c.fine)?;
        Ok((planes(&[&e.ux, &e.uy, &e.w]), e.mean_u))
    }

    /// Records the network on `tape` for an encoded batch.
    pub fn forward_net(&self, tape: &mut Tape, x: Tensor4, mode: BnMode) -> Result<(NodeId, NodeId)> {
        let net = self.net().ok_or_else(|| Error::Usage("the bilinear variant has no network".into()))?;
        let xi = tape.leaf(x);
        let out = net.forward(tape, xi, mode)?;
        Ok((xi, out))
    }

    /// Upsampled output channels for an encoded batch without recording.
    pub fn upsample(&self, x: Tensor4) -> Result<Tensor4> {
        match &self.upsampler {
            Upsampler::Net(net) => net.infer(x),
            Upsampler::Bilinear => {
                let [n, _, h, w] = x.dims();
                let mut data = Vec::with_capacity(n * 3 * 4 * h * w);
                for b in 0..n {
                    for ch in 0..3 {
                        let f = Field::from_vec(w, h, x.channel_plane(b, ch).to_vec())?;
                        data.extend_from_slice(prolong_field(&f, 2).as_slice());
                    }
                }
                Tensor4::from_vec([n, 3, 2 * h, 2 * w], data)
            }
        }
    }

    fn predict_batch(&self, states: &[&WaveState], cs: &[&VelocityPair]) -> Result<(Tensor4, Vec<f64>)> {
        if self.setup.transfer.scale != 2 {
            return Err(Error::Config("the end-to-end propagator upsamples by exactly 2".into()));
        }
        let enc = self.encode(states, cs)?;
        Ok((self.upsample(enc.x)?, enc.means))
    }

    /// Applies the propagator to a batch (running batch-norm statistics).
    pub fn propagate_batch(&self, states: &[&WaveState], cs: &[&VelocityPair]) -> Result<Vec<WaveState>> {
        let (y, means) = self.predict_batch(states, cs)?;
        (0..states.len()).map(|b| self.decode(y.sample(b), means[b], cs[b])).collect()
    }
}

impl Propagator for NeuralPropagator {
    fn name(&self) -> &str {
        match self.upsampler {
            Upsampler::Net(_) => "e2e-jnet3",
            Upsampler::Bilinear => "e2e-bilinear-components",
        }
    }

    fn propagate(&self, s: &WaveState, c: &VelocityPair) -> Result<WaveState> {
        Ok(self.propagate_batch(&[s], &[c])?.remove(0))
    }

    fn predict_components(&self, s: &WaveState, c: &VelocityPair) -> Result<EnergyComponents> {
        let (y, means) = self.predict_batch(&[s], &[c])?;
        self.components(y.sample(0), means[0])
    }
}
