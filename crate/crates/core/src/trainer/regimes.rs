//! Epoch loops of the training regimes.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::eval::validation_curve;
use super::loss::{chain_forward_backward, chain_in_space, guard_sq, ChainSample, LossSpace};
use super::{EpochRecord, Outcome, Regime, RunRecord, TrainConfig};
use crate::data::samples::{draw_depth, start_positions};
use crate::data::{build_dataset_d, build_dataset_dp, DepthMode, SampleIndex, TrajectoryShard};
use crate::error::{Error, Result};
use crate::grid::WaveState;
use crate::nn::{AdamConfig, AdamState};
use crate::parareal::RayonExecutor;
use crate::propagator::{FineReference, NeuralPropagator, Propagator, VelocityPair};

/// Mean of the truncated normal in epoch `epoch`: `1 + floor(epoch / period)`.
pub fn weighted_mu(epoch: usize, period: usize) -> f64 {
    1.0 + (epoch / period.max(1)) as f64
}

/// The shuffled sample list of one epoch of a pair-based regime.
pub fn epoch_samples(cfg: &TrainConfig, shards: &[TrajectoryShard], epoch: usize, rng: &mut impl Rng) -> Result<Vec<SampleIndex>> {
    match cfg.regime {
        Regime::Single | Regime::Modular => {
            let mut v = build_dataset_d(shards);
            v.shuffle(rng);
            Ok(v)
        }
        Regime::Multi | Regime::WeightedMulti => {
            let mode = match cfg.regime {
                Regime::Multi => DepthMode::Uniform,
                _ => DepthMode::Weighted {
                    mu: weighted_mu(epoch, cfg.mu_period),
                    sigma: cfg.sigma,
                },
            };
            let mut pos = start_positions(shards);
            pos.shuffle(rng);
            pos.into_iter()
                .map(|(s, n)| Ok(SampleIndex::new(s, n, draw_depth(n, shards[s].horizon(), mode, rng)?)))
                .collect()
        }
        other => Err(Error::Usage(format!("{} does not draw pair samples", other.name()))),
    }
}

#[derive(Default)]
struct EpochStats {
    loss_sum: f64,
    /// Loss terms (network applications compared to a target) behind `loss_sum`.
    terms: usize,
    samples: usize,
    aborted: usize,
}

fn velocity_pairs(shards: &[TrajectoryShard], model: &NeuralPropagator) -> Result<Vec<VelocityPair>> {
    shards.iter().map(|s| VelocityPair::new(s.velocity.clone(), &model.setup.transfer)).collect()
}

fn shard_guards(shards: &[TrajectoryShard], factor: f64) -> Result<Vec<f64>> {
    shards.iter().map(|s| guard_sq(&s.states, &s.velocity, factor)).collect()
}

fn adam_for(cfg: &TrainConfig, model: &NeuralPropagator) -> AdamState {
    let ac = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    AdamState::new(ac, &model.net().expect("checked by train").params)
}

fn params_finite(model: &NeuralPropagator) -> bool {
    model.net().expect("checked by train").params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
}

/// One pass over `items` in batches, one optimiser step per batch.
fn step_batches(model: &mut NeuralPropagator, adam: &mut AdamState, cfg: &TrainConfig, items: &[ChainSample], space: LossSpace) -> Result<EpochStats> {
    let mut st = EpochStats::default();
    for batch in items.chunks(cfg.batch_size) {
        model.net_mut().expect("checked by train").params.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        for micro in batch.chunks(cfg.micro_batch) {
            let out = chain_in_space(model, micro, scale, space)?;
            let params = &mut model.net_mut().expect("checked by train").params;
            out.pending.commit(params);
            st.samples += micro.len();
            for (l, item) in out.losses.iter().zip(micro) {
                match l {
                    Some(v) => {
                        st.loss_sum += v;
                        st.terms += item.depth();
                    }
                    None => st.aborted += 1,
                }
            }
        }
        adam.step(&mut model.net_mut().expect("checked by train").params);
        if !params_finite(model) {
            return Err(Error::Diverged("non-finite parameters after an optimiser step".into()));
        }
    }
    Ok(st)
}

fn chain_items<'a>(idx: &[SampleIndex], shards: &'a [TrajectoryShard], cs: &'a [VelocityPair], guards: &[f64]) -> Vec<ChainSample<'a>> {
    idx.iter()
        .map(|s| {
            let states = &shards[s.shard].states;
            ChainSample {
                start: &states[s.n],
                c: &cs[s.shard],
                targets: states[s.n + 1..=s.n + s.k].iter().collect(),
                offsets: None,
                guard_sq: guards[s.shard],
            }
        })
        .collect()
}

struct Validation<'a> {
    shards: &'a [TrajectoryShard],
    cs: Vec<VelocityPair>,
    steps: usize,
    every: usize,
}

impl Validation<'_> {
    fn run(&self, model: &NeuralPropagator, epoch: usize, last: bool) -> Result<Vec<f64>> {
        if self.shards.is_empty() || self.steps == 0 || !(last || (epoch + 1) % self.every == 0) {
            return Ok(Vec::new());
        }
        validation_curve(model, self.shards, &self.cs, self.steps)
    }
}

/// Runs `epochs` epochs of `body`, validating and recording each one.
/// Returns the divergence outcome, if any.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    model: &mut NeuralPropagator,
    epochs: usize,
    val: &Validation,
    records: &mut Vec<EpochRecord>,
    observer: &mut dyn FnMut(&EpochRecord),
    mut mu: impl FnMut(usize) -> Option<f64>,
    mut body: impl FnMut(&mut NeuralPropagator, usize) -> Result<EpochStats>,
) -> Result<Option<Outcome>> {
    for epoch in 0..epochs {
        let st = match body(model, epoch) {
            Ok(st) => st,
            Err(Error::Diverged(reason)) => return Ok(Some(Outcome::Diverged { epoch, reason })),
            Err(e) => return Err(e),
        };
        let kept = st.samples - st.aborted;
        let train_loss = if kept > 0 { st.loss_sum / kept as f64 } else { f64::NAN };
        let step_loss = if st.terms > 0 { st.loss_sum / st.terms as f64 } else { f64::NAN };
        let rec = EpochRecord {
            epoch,
            train_loss,
            step_loss,
            samples: st.samples,
            aborted: st.aborted,
            mu: mu(epoch),
            val_mse: val.run(model, epoch, epoch + 1 == epochs)?,
        };
        observer(&rec);
        records.push(rec);
        if !train_loss.is_finite() {
            let reason = if kept == 0 {
                format!("all {} samples exceeded the divergence guard", st.samples)
            } else {
                format!("non-finite training loss {train_loss}")
            };
            return Ok(Some(Outcome::Diverged { epoch, reason }));
        }
    }
    Ok(None)
}

fn choose_subset(n: usize, frac: f64, rng: &mut impl Rng) -> Vec<usize> {
    let count = ((frac * n as f64).round() as usize).clamp(n.min(1), n);
    let mut v = rand::seq::index::sample(rng, n, count).into_vec();
    v.sort_unstable();
    v
}

/// Trains `model` under `cfg.regime`; `observer` sees each epoch as it ends.
pub fn train(
    model: &mut NeuralPropagator,
    cfg: &TrainConfig,
    train: &[TrajectoryShard],
    val: &[TrajectoryShard],
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    cfg.validate()?;
    let parameter_count = model
        .net()
        .ok_or_else(|| Error::Usage("training needs a network upsampler".into()))?
        .parameter_count();
    if train.iter().any(|s| s.horizon() == 0) {
        return Err(Error::Config("training shards need at least one interval".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let validation = Validation {
        shards: val,
        cs: velocity_pairs(val, model)?,
        steps: cfg.val_steps,
        every: cfg.val_every,
    };
    let mut record = RunRecord {
        config: cfg.clone(),
        epochs: Vec::new(),
        pretrain: Vec::new(),
        dp: None,
        outcome: Outcome::Completed,
        parameter_count,
        wall_seconds: 0.0,
    };
    let outcome = match cfg.regime {
        Regime::Single | Regime::Modular | Regime::Multi | Regime::WeightedMulti => {
            pair_regime(model, cfg, cfg.regime, cfg.epochs, train, &validation, &mut rng, &mut record.epochs, observer)?
        }
        Regime::PararealTrain => {
            let subset: Vec<TrajectoryShard> = choose_subset(train.len(), cfg.parareal.subset, &mut rng)
                .into_iter()
                .map(|i| train[i].clone())
                .collect();
            parareal_regime(model, cfg, &subset, &validation, &mut rng, &mut record.epochs, observer)?
        }
        Regime::PararealRefine => refine_regime(model, cfg, train, &validation, &mut rng, &mut record, observer)?,
    };
    if let Some(o) = outcome {
        record.outcome = o;
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn pair_regime(
    model: &mut NeuralPropagator,
    cfg: &TrainConfig,
    regime: Regime,
    epochs: usize,
    shards: &[TrajectoryShard],
    val: &Validation,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<EpochRecord>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Option<Outcome>> {
    let cs = velocity_pairs(shards, model)?;
    let guards = shard_guards(shards, cfg.guard_factor)?;
    let mut adam = adam_for(cfg, model);
    let space = if regime == Regime::Modular { LossSpace::Components } else { LossSpace::State };
    let ecfg = TrainConfig { regime, ..cfg.clone() };
    let mu = |e: usize| (regime == Regime::WeightedMulti).then(|| weighted_mu(e, cfg.mu_period));
    run_epochs(model, epochs, val, records, observer, mu, |model, epoch| {
        let idx = epoch_samples(&ecfg, shards, epoch, rng)?;
        let items = chain_items(&idx, shards, &cs, &guards);
        step_batches(model, &mut adam, cfg, &items, space)
    })
}

fn parareal_regime(
    model: &mut NeuralPropagator,
    cfg: &TrainConfig,
    shards: &[TrajectoryShard],
    val: &Validation,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<EpochRecord>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Option<Outcome>> {
    let cs = velocity_pairs(shards, model)?;
    let guards = shard_guards(shards, cfg.guard_factor)?;
    let mut adam = adam_for(cfg, model);
    let fine = FineReference { cfg: model.setup.fine };
    run_epochs(model, cfg.epochs, val, records, observer, |_| None, |model, _| {
        let mut order: Vec<usize> = (0..shards.len()).collect();
        order.shuffle(rng);
        let mut st = EpochStats::default();
        for batch in order.chunks(cfg.parareal.batch_size) {
            let (sum, terms, aborted) = parareal_batch(model, cfg, batch, shards, &cs, &guards, &fine)?;
            st.loss_sum += sum;
            st.terms += terms;
            st.aborted += aborted;
            st.samples += batch.len();
            adam.step(&mut model.net_mut().expect("checked by train").params);
            if !params_finite(model) {
                return Err(Error::Diverged("non-finite parameters after an optimiser step".into()));
            }
        }
        Ok(st)
    })
}

/// Gradients of the summed sweep losses of one batch of Parareal solves.
/// Sweep `k` unrolls `u[n+1] = Ψ u[n] + F u[n][k-1] - Ψ u[n][k-1]` with the
/// correction held constant; sweep 0 is a plain rollout.
fn parareal_batch(
    model: &mut NeuralPropagator,
    cfg: &TrainConfig,
    batch: &[usize],
    shards: &[TrajectoryShard],
    cs: &[VelocityPair],
    guards: &[f64],
    fine: &FineReference,
) -> Result<(f64, usize, usize)> {
    model.net_mut().expect("checked by train").params.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut alive = vec![true; batch.len()];
    let mut loss = vec![0.0; batch.len()];
    let mut terms = vec![0; batch.len()];
    let mut prev_states: Vec<Vec<WaveState>> = vec![Vec::new(); batch.len()];
    let mut prev_psi: Vec<Vec<WaveState>> = vec![Vec::new(); batch.len()];
    let mut pending = None;
    let kmax = batch.iter().map(|&s| cfg.parareal.k.min(shards[s].horizon())).max().unwrap_or(0);
    for k in 0..=kmax {
        let active: Vec<usize> = (0..batch.len())
            .filter(|&b| alive[b] && k <= cfg.parareal.k.min(shards[batch[b]].horizon()))
            .collect();
        if active.is_empty() {
            break;
        }
        let offsets: Vec<Option<Vec<WaveState>>> = if k == 0 {
            vec![None; active.len()]
        } else {
            let jobs: Vec<(usize, usize)> = active
                .iter()
                .flat_map(|&b| (0..shards[batch[b]].horizon()).map(move |n| (b, n)))
                .collect();
            let images: Vec<WaveState> = jobs
                .par_iter()
                .map(|&(b, n)| fine.propagate(&prev_states[b][n], &cs[batch[b]]))
                .collect::<Result<_>>()?;
            let mut it = jobs.iter().zip(images);
            active
                .iter()
                .map(|&b| {
                    (0..shards[batch[b]].horizon())
                        .map(|n| {
                            let (_, mut f) = it.next().expect("one image per job");
                            f.axpy(-1.0, &prev_psi[b][n])?;
                            Ok(f)
                        })
                        .collect::<Result<Vec<_>>>()
                        .map(Some)
                })
                .collect::<Result<_>>()?
        };
        let samples: Vec<ChainSample> = active
            .iter()
            .zip(&offsets)
            .map(|(&b, off)| {
                let sh = &shards[batch[b]];
                ChainSample {
                    start: &sh.states[0],
                    c: &cs[batch[b]],
                    targets: sh.states[1..].iter().collect(),
                    offsets: off.as_deref(),
                    guard_sq: guards[batch[b]],
                }
            })
            .collect();
        let mut out = chain_forward_backward(model, &samples, scale)?;
        if k == 0 {
            pending = Some(std::mem::take(&mut out.pending));
        }
        for (slot, &b) in active.iter().enumerate() {
            match out.losses[slot] {
                None => alive[b] = false,
                Some(l) => {
                    loss[b] += l;
                    terms[b] += shards[batch[b]].horizon();
                    let mut states = vec![shards[batch[b]].states[0].clone()];
                    states.append(&mut out.states[slot]);
                    prev_states[b] = states;
                    prev_psi[b] = std::mem::take(&mut out.psi[slot]);
                }
            }
        }
    }
    if let Some(p) = pending {
        p.commit(&mut model.net_mut().expect("checked by train").params);
    }
    let kept = (0..batch.len()).filter(|&b| alive[b]);
    let sum = kept.clone().map(|b| loss[b]).sum();
    let count = kept.map(|b| terms[b]).sum();
    Ok((sum, count, alive.iter().filter(|a| !**a).count()))
}

fn refine_regime(
    model: &mut NeuralPropagator,
    cfg: &TrainConfig,
    train: &[TrajectoryShard],
    val: &Validation,
    rng: &mut ChaCha8Rng,
    record: &mut RunRecord,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Option<Outcome>> {
    let p = cfg.parareal;
    if p.pretrain_epochs > 0 {
        let subset: Vec<TrajectoryShard> = choose_subset(train.len(), p.pretrain_subset, rng)
            .into_iter()
            .map(|i| train[i].clone())
            .collect();
        let quiet = Validation {
            shards: val.shards,
            cs: val.cs.clone(),
            steps: val.steps,
            every: usize::MAX,
        };
        if let Some(o) = pair_regime(model, cfg, Regime::Single, p.pretrain_epochs, &subset, &quiet, rng, &mut record.pretrain, observer)? {
            return Ok(Some(o));
        }
    }
    let chosen: Vec<TrajectoryShard> = choose_subset(train.len(), p.refine_fraction, rng)
        .into_iter()
        .map(|i| train[i].clone())
        .collect();
    let fine = FineReference { cfg: model.setup.fine };
    let dp = build_dataset_dp(&chosen, model, &fine, p.k, &model.setup.transfer, &RayonExecutor)?;
    record.dp = Some(dp.stats.clone());
    let guards: Vec<f64> = dp
        .pairs
        .iter()
        .map(|q| guard_sq(&[q.input.clone(), q.target.clone()], &dp.velocities[q.shard].fine, cfg.guard_factor))
        .collect::<Result<_>>()?;
    let mut adam = adam_for(cfg, model);
    run_epochs(model, cfg.epochs, val, &mut record.epochs, observer, |_| None, |model, _| {
        let mut order: Vec<usize> = (0..dp.pairs.len()).collect();
        order.shuffle(rng);
        let items: Vec<ChainSample> = order
            .iter()
            .map(|&i| {
                let q = &dp.pairs[i];
                ChainSample {
                    start: &q.input,
                    c: &dp.velocities[q.shard],
                    targets: vec![&q.target],
                    offsets: None,
                    guard_sq: guards[i],
                }
            })
            .collect();
        step_batches(model, &mut adam, cfg, &items, LossSpace::State)
    })
}
