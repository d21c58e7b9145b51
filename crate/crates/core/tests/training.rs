mod common;

use common::checks::*;
use common::*;
use rand::Rng;
use wavecorr::data::samples::truncated_normal_masses;
use wavecorr::data::{build_dataset_dp, draw_depth, DepthMode};
use wavecorr::grid::energy_mse;
use wavecorr::io::{load_checkpoint, save_checkpoint};
use wavecorr::parareal::SerialExecutor;
use wavecorr::propagator::{BilinearBaseline, FineReference, NeuralPropagator, Propagator, VelocityPair};
use wavecorr::trainer::loss::component_loss;
use wavecorr::trainer::regimes::{epoch_samples, weighted_mu};
use wavecorr::trainer::{train, Regime, TrainConfig};
use wavecorr::transfer::to_energy_components;

fn toy_config(regime: Regime) -> TrainConfig {
    TrainConfig {
        regime,
        batch_size: 4,
        micro_batch: 4,
        epochs: 2,
        val_steps: 2,
        jnet: small_net(),
        ..TrainConfig::default()
    }
}

#[test]
fn one_step_unroll_matches_the_single_step_loss() {
    let gap = unroll_one_gap();
    assert!(gap <= 1e-12, "{gap:e}");
}

#[test]
fn component_loss_equals_energy_mse_of_the_reconstruction() {
    let s = toy_setup();
    let sh = &toy_shards(&s, 1, 2, 2)[0];
    let c = VelocityPair::new(sh.velocity.clone(), &s.transfer).unwrap();
    let model = NeuralPropagator::new(s, small_net(), 3).unwrap();
    let mut r = rng(4);
    for n in 0..2 {
        let pred = model.propagate(&sh.states[n], &c).unwrap();
        let others = [(pred, sh.states[n + 1].clone()), (random_state(s.fine.grid, &mut r), random_state(s.fine.grid, &mut r))];
        for (a, b) in &others {
            let (ea, eb) = (to_energy_components(a, &c.fine).unwrap(), to_energy_components(b, &c.fine).unwrap());
            let lc = component_loss(&ea, &eb, &c.fine, s.fine.grid.dx).unwrap();
            let le = energy_mse(a, b, &c.fine).unwrap();
            assert!((lc - le).abs() <= 1e-8 * le, "{lc} vs {le}");
        }
    }
}

#[test]
fn zero_learning_rate_keeps_every_trainable_parameter() {
    let s = toy_setup();
    let data = toy_shards(&s, 3, 3, 3);
    for regime in [Regime::Single, Regime::WeightedMulti] {
        let cfg = TrainConfig {
            lr: 0.0,
            micro_batch: 9,
            batch_size: 9,
            ..toy_config(regime)
        };
        let mut model = NeuralPropagator::new(s, small_net(), 4).unwrap();
        let before = model.net().unwrap().params.checksum(true);
        let rec = train(&mut model, &cfg, &data, &data[..1], &mut |_| {}).unwrap();
        assert_eq!(model.net().unwrap().params.checksum(true), before, "{}", regime.name());
        if regime == Regime::Single {
            let (a, b) = (rec.epochs[0].train_loss, rec.epochs[1].train_loss);
            assert!((a - b).abs() <= 1e-9 * a, "loss moved {a} -> {b}");
        }
    }
}

#[test]
fn mean_depth_rises_after_every_third_epoch() {
    let mus: Vec<f64> = (0..9).map(|e| weighted_mu(e, 3)).collect();
    assert_eq!(mus, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]);
    let s = toy_setup();
    let data = toy_shards(&s, 2, 4, 5);
    let cfg = TrainConfig {
        epochs: 6,
        val_every: 100,
        ..toy_config(Regime::WeightedMulti)
    };
    let mut model = NeuralPropagator::new(s, small_net(), 5).unwrap();
    let rec = train(&mut model, &cfg, &data, &data[..1], &mut |_| {}).unwrap();
    let logged: Vec<f64> = rec.epochs.iter().map(|e| e.mu.unwrap()).collect();
    assert_eq!(logged, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
}

#[test]
fn vanishing_sigma_at_unit_mean_always_draws_one_step() {
    let mut r = rng(6);
    for sigma in [1e-3, 1e-8, 1e-30] {
        let m = truncated_normal_masses(1.0, sigma, 1, 8).unwrap();
        assert_eq!(m[0], 1.0);
        for _ in 0..2000 {
            let n = r.gen_range(0..8);
            assert_eq!(draw_depth(n, 8, DepthMode::Weighted { mu: 1.0, sigma }, &mut r).unwrap(), 1);
        }
    }
    assert!(truncated_normal_masses(1.0, 0.0, 1, 8).is_err());
}

#[test]
fn truncated_normal_peaks_at_its_mean() {
    let m = truncated_normal_masses(4.0, 1.0, 1, 8).unwrap();
    let mode = m.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
    assert_eq!(mode, 4);
    assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // symmetric about the mean inside the support
    for d in 1..=3 {
        assert!((m[3 - d] - m[3 + d]).abs() < 1e-12);
    }
}

#[test]
fn multi_step_epochs_visit_every_start_once() {
    let s = toy_setup();
    let data = toy_shards(&s, 3, 4, 7);
    let cfg = toy_config(Regime::WeightedMulti);
    let mut r = rng(8);
    let mut v = epoch_samples(&cfg, &data, 7, &mut r).unwrap();
    assert!(v.iter().all(|x| x.k >= 1 && x.n + x.k <= 4));
    v.sort_by_key(|x| (x.shard, x.n));
    let starts: Vec<(usize, usize)> = v.iter().map(|x| (x.shard, x.n)).collect();
    let expected: Vec<(usize, usize)> = (0..3).flat_map(|s| (0..4).map(move |n| (s, n))).collect();
    assert_eq!(starts, expected);
}

#[test]
fn parareal_lattice_yields_forty_pairs_per_shard() {
    let s = toy_setup();
    let data = toy_shards(&s, 2, 8, 9);
    let dp = build_dataset_dp(&data, &BilinearBaseline { setup: s }, &FineReference { cfg: s.fine }, 4, &s.transfer, &SerialExecutor).unwrap();
    assert_eq!(dp.stats.dropped, 0);
    assert_eq!(dp.pairs.len(), 2 * 8 * (4 + 1));
    let fine = FineReference { cfg: s.fine };
    for p in dp.pairs.iter().step_by(7) {
        assert_eq!(p.target, fine.propagate(&p.input, &dp.velocities[p.shard]).unwrap());
    }
}

#[test]
fn identical_runs_give_identical_loss_curves() {
    let s = toy_setup();
    let data = toy_shards(&s, 3, 3, 10);
    let cfg = toy_config(Regime::Multi);
    let run = || {
        let mut model = NeuralPropagator::new(s, small_net(), 11).unwrap();
        let rec = train(&mut model, &cfg, &data, &data[..1], &mut |_| {}).unwrap();
        (rec.loss_csv(), model.net().unwrap().params.checksum(false))
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let s = toy_setup();
    let sh = &toy_shards(&s, 1, 1, 12)[0];
    let c = VelocityPair::new(sh.velocity.clone(), &s.transfer).unwrap();
    let mut model = NeuralPropagator::new(s, small_net(), 13).unwrap();
    let mut r = rng(14);
    for p in model.net_mut().unwrap().params.iter_mut() {
        p.data.iter_mut().for_each(|v| *v += r.gen_range(-0.01..0.01));
    }
    let dir = tempfile::tempdir().unwrap();
    let m = save_checkpoint(dir.path(), &model, 13, serde_json::json!({})).unwrap();
    let (back, m2) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(m, m2);
    assert_eq!(back.net().unwrap().params.checksum(false), model.net().unwrap().params.checksum(false));
    assert_eq!(back.propagate(&sh.states[0], &c).unwrap(), model.propagate(&sh.states[0], &c).unwrap());

    std::fs::write(dir.path().join("params.bin"), vec![0u8; 16]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn fine_double_has_zero_rollout_error() {
    let s = toy_setup();
    let sh = &toy_shards(&s, 1, 3, 15)[0];
    let c = VelocityPair::new(sh.velocity.clone(), &s.transfer).unwrap();
    let fine = FineReference { cfg: s.fine };
    let mut x = sh.states[0].clone();
    for n in 1..=3 {
        x = fine.propagate(&x, &c).unwrap();
        assert_eq!(energy_mse(&x, &sh.states[n], &c.fine).unwrap(), 0.0);
    }
}
