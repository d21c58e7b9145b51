//! Unrolled energy losses and their reverse pass through the network,
//! `Λ†`, `Λ`, the coarse solver and the restriction.

use crate::error::{Error, Result};
use crate::grid::{energy_seminorm_sq, EnergyComponents, VelocityModel, WaveState};
use crate::nn::{BnMode, NodeId, PendingStats, Tape};
use crate::propagator::{NeuralPropagator, VelocityPair};
use crate::transfer::{to_energy_components, to_energy_components_adjoint};

/// `sum (dux^2 + duy^2 + c^2 dw^2) dx^2` between two component sets.
pub fn component_loss(pred: &EnergyComponents, target: &EnergyComponents, c: &VelocityModel, dx: f64) -> Result<f64> {
    if pred.dims() != target.dims() || pred.dims() != c.dims() {
        return Err(crate::error::shape_err("energy components", pred.dims(), target.dims()));
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let kin: f64 = pred
        .w
        .as_slice()
        .iter()
        .zip(target.w.as_slice())
        .zip(c.field().as_slice())
        .map(|((p, t), c)| c * c * (p - t) * (p - t))
        .sum();
    Ok((sq(pred.ux.as_slice(), target.ux.as_slice()) + sq(pred.uy.as_slice(), target.uy.as_slice()) + kin) * dx * dx)
}

/// `∂/∂pred` of `scale * energy_mse(pred, target)` given `d = pred - target`.
pub fn energy_loss_cotangent(d: &WaveState, c: &VelocityModel, scale: f64) -> Result<WaveState> {
    let e = to_energy_components(d, c)?;
    let f = 2.0 * scale * d.grid.cell_area();
    let w = e.w.zip_map(c.field(), |w, c| f * c * c * w)?;
    let mut ux = e.ux;
    ux.scale(f);
    let mut uy = e.uy;
    uy.scale(f);
    to_energy_components_adjoint(&EnergyComponents::new(ux, uy, w, 0.0)?, c, &d.grid)
}

/// Where the loss is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    /// Energy seminorm of the reconstructed fine state, `|Λ†y - u|_E^2`.
    #[default]
    State,
    /// Weighted squared difference of the raw network output and `Λ u`;
    /// single steps only.
    Components,
}

/// One unrolled sample: `k = targets.len()` applications of `Ψ` from
/// `start`, with `offsets[j]` (held constant) added after application `j`.
pub struct ChainSample<'a> {
    pub start: &'a WaveState,
    pub c: &'a VelocityPair,
    pub targets: Vec<&'a WaveState>,
    pub offsets: Option<&'a [WaveState]>,
    /// Squared-seminorm ceiling for every intermediate state.
    pub guard_sq: f64,
}

impl ChainSample<'_> {
    pub fn depth(&self) -> usize {
        self.targets.len()
    }
}

pub struct ChainOutput {
    /// Summed per-step loss of each sample; `None` when the guard aborted it.
    pub losses: Vec<Option<f64>>,
    /// `Ψ` images before the offset, per sample and step.
    pub psi: Vec<Vec<WaveState>>,
    /// Chain states after the offset, per sample and step.
    pub states: Vec<Vec<WaveState>>,
    /// Running-statistic updates from the first application.
    pub pending: PendingStats,
}

impl ChainOutput {
    pub fn aborted(&self) -> usize {
        self.losses.iter().filter(|l| l.is_none()).count()
    }
}

struct Step {
    tape: Tape,
    xi: NodeId,
    out: NodeId,
    members: Vec<usize>,
}

/// Unrolls every sample in lock-step and, when `grad_scale != 0`,
/// accumulates `grad_scale * d(sum of losses)/d(theta)` into the network's
/// gradient slots. The first application normalises with batch statistics
/// (and gathers running-statistic updates), later ones with the running
/// statistics.
pub fn chain_forward_backward(model: &mut NeuralPropagator, samples: &[ChainSample], grad_scale: f64) -> Result<ChainOutput> {
    chain_in_space(model, samples, grad_scale, LossSpace::State)
}

pub fn chain_in_space(model: &mut NeuralPropagator, samples: &[ChainSample], grad_scale: f64, space: LossSpace) -> Result<ChainOutput> {
    if model.net().is_none() {
        return Err(Error::Usage("training needs a network upsampler".into()));
    }
    for s in samples {
        if space == LossSpace::Components && s.depth() > 1 {
            return Err(Error::Contract("component-space losses are single-step only".into()));
        }
        if let Some(off) = s.offsets {
            if off.len() < s.depth() {
                return Err(Error::Contract(format!("{} offsets for an unroll of {}", off.len(), s.depth())));
            }
        }
    }
    let b = samples.len();
    let kmax = samples.iter().map(|s| s.depth()).max().unwrap_or(0);
    let mut cur: Vec<WaveState> = samples.iter().map(|s| s.start.clone()).collect();
    let mut alive = vec![true; b];
    let mut loss = vec![0.0; b];
    let mut psi_out: Vec<Vec<WaveState>> = vec![Vec::new(); b];
    let mut state_out: Vec<Vec<WaveState>> = vec![Vec::new(); b];
    let mut cot: Vec<Vec<Option<WaveState>>> = samples.iter().map(|s| vec![None; s.depth()]).collect();
    let mut out_seed: Vec<Option<Vec<f64>>> = vec![None; b];
    let mut steps: Vec<Step> = Vec::with_capacity(kmax);
    let mut pending = PendingStats::default();
    let backward = grad_scale != 0.0;

    for j in 0..kmax {
        let members: Vec<usize> = (0..b).filter(|&i| alive[i] && samples[i].depth() > j).collect();
        if members.is_empty() {
            break;
        }
        let states: Vec<&WaveState> = members.iter().map(|&i| &cur[i]).collect();
        let cs: Vec<&VelocityPair> = members.iter().map(|&i| samples[i].c).collect();
        let enc = model.encode(&states, &cs)?;
        let mode = if j == 0 { BnMode::Batch { update: true } } else { BnMode::Running };
        let mut tape = Tape::new();
        let (xi, out) = model.forward_net(&mut tape, enc.x, mode)?;
        if j == 0 {
            pending = tape.take_running_stats();
        }
        for (slot, &i) in members.iter().enumerate() {
            let s = &samples[i];
            let psi = model.decode(tape.value(out).sample(slot), enc.means[slot], s.c)?;
            let mut next = psi.clone();
            if let Some(off) = s.offsets {
                next.axpy(1.0, &off[j])?;
            }
            let e = energy_seminorm_sq(&next, &s.c.fine)?;
            if !e.is_finite() || e > s.guard_sq {
                alive[i] = false;
                continue;
            }
            match space {
                LossSpace::State => {
                    let d = next.sub(s.targets[j])?;
                    loss[i] += energy_seminorm_sq(&d, &s.c.fine)?;
                    if backward {
                        cot[i][j] = Some(energy_loss_cotangent(&d, &s.c.fine, grad_scale)?);
                    }
                }
                LossSpace::Components => {
                    let y = tape.value(out).sample(slot);
                    let pred = model.components(y, enc.means[slot])?;
                    let target = to_energy_components(s.targets[j], &s.c.fine)?;
                    let dx = model.setup.fine.grid.dx;
                    loss[i] += component_loss(&pred, &target, &s.c.fine, dx)?;
                    if backward {
                        out_seed[i] = Some(component_seed(y, &target, &s.c.fine, 2.0 * grad_scale * dx * dx));
                    }
                }
            }
            psi_out[i].push(psi);
            state_out[i].push(next.clone());
            cur[i] = next;
        }
        if backward {
            steps.push(Step { tape, xi, out, members });
        }
    }

    let mut carry: Vec<Option<WaveState>> = vec![None; b];
    for (j, step) in steps.iter_mut().enumerate().rev() {
        let plane = step.tape.value(step.out).plane() * 3;
        let mut seed = vec![0.0; plane * step.members.len()];
        let mut mean_bar = vec![0.0; step.members.len()];
        for (slot, &i) in step.members.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            if let Some(y) = out_seed[i].take() {
                seed[slot * plane..(slot + 1) * plane].copy_from_slice(&y);
                continue;
            }
            let g = match (cot[i][j].take(), carry[i].take()) {
                (Some(mut a), Some(b)) => {
                    a.axpy(1.0, &b)?;
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => continue,
            };
            let (ybar, mb) = model.decode_adjoint(&g, samples[i].c)?;
            seed[slot * plane..(slot + 1) * plane].copy_from_slice(&ybar);
            mean_bar[slot] = mb;
        }
        let params = &mut model.net_mut().expect("checked above").params;
        step.tape.backward(step.out, &seed, params)?;
        if j == 0 {
            continue;
        }
        let xg = step.tape.grad(step.xi).ok_or_else(|| Error::Contract("input cotangent missing".into()))?;
        let in_plane = xg.len() / step.members.len();
        for (slot, &i) in step.members.iter().enumerate() {
            if alive[i] {
                let xbar = &xg[slot * in_plane..(slot + 1) * in_plane];
                carry[i] = Some(model.encode_adjoint(xbar, mean_bar[slot], samples[i].c)?);
            }
        }
    }

    Ok(ChainOutput {
        losses: (0..b).map(|i| alive[i].then_some(loss[i])).collect(),
        psi: psi_out,
        states: state_out,
        pending,
    })
}

fn component_seed(y: &[f64], t: &EnergyComponents, c: &VelocityModel, f: f64) -> Vec<f64> {
    let n = t.ux.len();
    let mut g = Vec::with_capacity(3 * n);
    g.extend(y[..n].iter().zip(t.ux.as_slice()).map(|(a, b)| f * (a - b)));
    g.extend(y[n..2 * n].iter().zip(t.uy.as_slice()).map(|(a, b)| f * (a - b)));
    g.extend(
        y[2 * n..3 * n]
            .iter()
            .zip(t.w.as_slice())
            .zip(c.field().as_slice())
            .map(|((a, b), c)| f * c * c * (a - b)),
    );
    g
}

/// Squared guard level: `(factor * max_n |u_n|_E)^2` over a reference trajectory.
pub fn guard_sq(reference: &[WaveState], c: &VelocityModel, factor: f64) -> Result<f64> {
    let mut m: f64 = 0.0;
    for s in reference {
        m = m.max(energy_seminorm_sq(s, c)?);
    }
    Ok(factor * factor * m)
}

/// `Ψ u` against `target` for a batch of single steps; mean loss, gradients
/// of the mean accumulated into the network.
pub fn single_step_loss(model: &mut NeuralPropagator, pairs: &[(&WaveState, &WaveState, &VelocityPair)]) -> Result<f64> {
    let samples: Vec<ChainSample> = pairs
        .iter()
        .map(|(u, t, c)| ChainSample {
            start: u,
            c,
            targets: vec![*t],
            offsets: None,
            guard_sq: f64::INFINITY,
        })
        .collect();
    let out = chain_forward_backward(model, &samples, 1.0 / pairs.len().max(1) as f64)?;
    finish(model, out)
}

/// `sum_{j=1..k} |Ψ^j u_n - u_{n+j}|^2` over one trajectory, gradients accumulated.
pub fn multi_step_loss(model: &mut NeuralPropagator, states: &[WaveState], c: &VelocityPair, n: usize, k: usize) -> Result<f64> {
    if k == 0 || n + k >= states.len() {
        return Err(Error::Contract(format!("unroll n = {n}, k = {k} needs 1 <= k and n + k <= {}", states.len().saturating_sub(1))));
    }
    let sample = ChainSample {
        start: &states[n],
        c,
        targets: states[n + 1..=n + k].iter().collect(),
        offsets: None,
        guard_sq: f64::INFINITY,
    };
    let out = chain_forward_backward(model, &[sample], 1.0)?;
    finish(model, out)
}

fn finish(model: &mut NeuralPropagator, out: ChainOutput) -> Result<f64> {
    let n = out.losses.len().max(1) as f64;
    let total = out.losses.iter().map(|l| l.unwrap_or(f64::NAN)).sum::<f64>() / n;
    if !total.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss {total}")));
    }
    out.pending.commit(&mut model.net_mut().expect("trained model has a network").params);
    Ok(total)
}
