//! Measurements shared by the unit-level tests and the acceptance run.
//! Every function returns the measured quantity; callers pick the bound.

use std::f64::consts::PI;

use rand::Rng;
use wavecorr::coarse::{coarse_adjoint, coarse_propagate, Boundary, CoarseSolverConfig};
use wavecorr::fine::{fine_adjoint, fine_propagate, spectral_energy, spectral_laplacian, FineSolverConfig, SpectralLaplacian};
use wavecorr::grid::{energy_seminorm_sq, Field, GridSpec, VelocityModel, WaveState};
use wavecorr::nn::tape::{BlockIds, BnIds};
use wavecorr::nn::{BnMode, ConvBlockSpec, ConvSpec, JNet, JNetConfig, ParamId, ParameterStore, Tape, Tensor4};
use wavecorr::data::{make_trajectory, TrajectoryShard};
use wavecorr::parareal::{parareal_solve, PararealPlan, PararealTrace, RayonExecutor, SerialExecutor};
use wavecorr::propagator::{BilinearBaseline, FineReference, ModelSetup, NeuralPropagator, Propagator, VelocityPair};
use wavecorr::trainer::{chain_forward_backward, multi_step_loss, single_step_loss, ChainSample};
use wavecorr::transfer::{
    from_energy_components, from_energy_components_adjoint, prolong_bilinear, prolong_bilinear_adjoint, restrict,
    restrict_adjoint, to_energy_components, to_energy_components_adjoint, TransferConfig,
};

use super::*;

// ---------------------------------------------------------------- solvers

pub fn standing_mode(g: &GridSpec) -> WaveState {
    let u = g.field_from_fn(|x, y| (PI * x).sin() * (PI * y).sin());
    WaveState::new(u, Field::zeros(g.nx, g.ny), *g).unwrap()
}

pub fn pulse(g: &GridSpec, inv_sigma_sq: f64) -> WaveState {
    let u = g.field_from_fn(|x, y| (-inv_sigma_sq * (x * x + y * y)).exp());
    WaveState::new(u, Field::zeros(g.nx, g.ny), *g).unwrap()
}

fn diff_norm(a: &WaveState, b: &WaveState) -> f64 {
    norm(&state_vec(&a.sub(b).unwrap()))
}

/// Coarse solve to `t_end` with `substeps_per_unit` Verlet steps per time unit.
pub fn coarse_at(substeps_per_unit: usize, t_end: f64, s: &WaveState, c: &VelocityModel, boundary: Boundary) -> WaveState {
    let steps = (t_end * substeps_per_unit as f64).round() as usize;
    let g = s.grid.with_dt(1.0 / substeps_per_unit as f64);
    let cfg = CoarseSolverConfig::new(g, steps, boundary).unwrap();
    let s = WaveState::new(s.u.clone(), s.ut.clone(), g).unwrap();
    coarse_propagate(&s, c, &cfg).unwrap()
}

/// Temporal self-convergence factor of the periodic coarse solver on 64², t = 0.48.
pub fn verlet_ratio(c: &VelocityModel) -> f64 {
    let g = GridSpec::unit_square(64, 0.0).unwrap();
    let s0 = standing_mode(&g);
    let [a, b, d] = [600, 1200, 2400].map(|m| coarse_at(m, 0.48, &s0, c, Boundary::Periodic));
    diff_norm(&a, &b) / diff_norm(&b, &d)
}

/// Temporal self-convergence factor of the periodic fine solver on 64², t = 2.
pub fn rk4_ratio(c: &VelocityModel) -> f64 {
    let g = GridSpec::unit_square(64, 0.0).unwrap();
    let s0 = standing_mode(&g);
    let run = |n: usize| {
        let cfg = FineSolverConfig::new(g.with_dt(2.0 / n as f64), n, 2.0 / n as f64, 1).unwrap();
        fine_propagate(&s0, c, &cfg).unwrap()
    };
    let [a, b, d] = [160, 320, 640].map(run);
    diff_norm(&a, &b) / diff_norm(&b, &d)
}

/// Max error of the spectral Laplacian on five Fourier modes of a 48×32 box.
pub fn laplacian_mode_errors() -> Vec<((usize, usize), f64)> {
    let g = GridSpec::new(48, 32, 2.0 / 32.0, 0.0, [-1.5, -1.0]).unwrap();
    let (lx, ly) = (g.width(), g.height());
    [(0, 1), (1, 0), (2, 3), (5, 1), (7, 6)]
        .into_iter()
        .map(|(m, n)| {
            let (kx, ky) = (2.0 * PI * m as f64 / lx, 2.0 * PI * n as f64 / ly);
            let f = g.field_from_fn(|x, y| (kx * x + ky * y + 0.3).cos());
            let lap = spectral_laplacian(&f, &g).unwrap();
            let lambda = -(kx * kx + ky * ky);
            let err = lap.as_slice().iter().zip(f.as_slice()).map(|(l, v)| (l - lambda * v).abs()).fold(0.0, f64::max);
            ((m, n), err)
        })
        .collect()
}

pub fn fft_round_trip_error() -> f64 {
    let g = GridSpec::new(40, 24, 0.05, 0.0, [0.0, 0.0]).unwrap();
    let f = random_field(g.nx, g.ny, &mut rng(2));
    let back = SpectralLaplacian::new(&g).round_trip(f.as_slice());
    back.iter().zip(f.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Largest relative energy drift over 8 periodic fine macro steps.
pub fn fine_energy_drift() -> f64 {
    let cfg = FineSolverConfig::for_macro_step(64, 0.06, 40, 1).unwrap();
    let c = VelocityModel::constant(64, 64, 1.0).unwrap();
    let mut s = gaussian(&cfg.grid, 0.2);
    let e0 = spectral_energy(&s, &c).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        s = fine_propagate(&s, &c, &cfg).unwrap();
        worst = worst.max(((spectral_energy(&s, &c).unwrap() - e0) / e0).abs());
    }
    worst
}

/// Energy fraction of a centred pulse left in the canonical coarse domain at t = 0, 0.25, ..., 2.
pub fn sponge_energy_history() -> Vec<f64> {
    let cfg = CoarseSolverConfig::canonical();
    let g = cfg.grid;
    let c = VelocityModel::constant(g.nx, g.ny, 1.0).unwrap();
    let mut s = pulse(&g, 250.0);
    let e0 = energy_seminorm_sq(&s, &c).unwrap();
    let mut history = vec![1.0];
    for _ in 0..8 {
        s = coarse_at(600, 0.25, &s, &c, cfg.boundary);
        history.push(energy_seminorm_sq(&s, &c).unwrap() / e0);
    }
    history
}

fn inner_energy(s: &WaveState, c: &VelocityModel, half: f64) -> f64 {
    let g = s.grid;
    let idx: Vec<usize> = (0..g.nx).filter(|&i| g.x(i).abs() < half).collect();
    let jdx: Vec<usize> = (0..g.ny).filter(|&j| g.y(j).abs() < half).collect();
    let (i0, j0) = (idx[0], jdx[0]);
    let pick = |f: &Field| Field::from_fn(idx.len(), jdx.len(), |i, j| f.get(i + i0, j + j0));
    let sub = GridSpec::new(idx.len(), jdx.len(), g.dx, g.dt, [g.x(i0), g.y(j0)]).unwrap();
    let inner = WaveState::new(pick(&s.u), pick(&s.ut), sub).unwrap();
    energy_seminorm_sq(&inner, &VelocityModel::new(pick(c.field())).unwrap()).unwrap()
}

/// Worst fraction of the incident energy found back in the inner half-domain,
/// against an unbounded reference three times wider.
pub fn sponge_reflection() -> f64 {
    let g = GridSpec::unit_square(64, 0.0).unwrap();
    let c = VelocityModel::constant(64, 64, 1.0).unwrap();
    let big = GridSpec::new(192, 192, g.dx, 0.0, [-3.0, -3.0]).unwrap();
    let cb = VelocityModel::constant(192, 192, 1.0).unwrap();
    let mut s = pulse(&g, 250.0);
    let mut r = pulse(&big, 250.0);
    let incident = energy_seminorm_sq(&s, &c).unwrap();
    let ox = (0..big.nx).position(|i| (big.x(i) - g.x(0)).abs() < 1e-9).unwrap();
    let mut t = 0.0;
    let mut worst: f64 = 0.0;
    while t < 2.75 - 1e-9 {
        s = coarse_at(600, 0.25, &s, &c, Boundary::default());
        r = coarse_at(600, 0.25, &r, &cb, Boundary::Periodic);
        t += 0.25;
        if t >= 1.5 - 1e-9 {
            let crop = |f: &Field| Field::from_fn(g.nx, g.ny, |i, j| f.get(i + ox, j + ox));
            let rc = WaveState::new(crop(&r.u), crop(&r.ut), g).unwrap();
            worst = worst.max(inner_energy(&s.sub(&rc).unwrap(), &c, 0.5) / incident);
        }
    }
    worst
}

// --------------------------------------------------------------- adjoints

/// Worst of the dense-oracle deviation and three random pairing gaps.
pub fn adjoint_error(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>, adjoint: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let (m, cols) = dense(n, &apply);
    let mut worst = transpose_deviation(&cols, m, &adjoint);
    for seed in 0..3 {
        worst = worst.max(pairing_gap(n, m, seed, &apply, &adjoint));
    }
    worst
}

pub fn coarse_adjoint_error(n: usize, dt: f64, substeps: usize, boundary: Boundary) -> f64 {
    let g = GridSpec::unit_square(n, dt).unwrap();
    let cfg = CoarseSolverConfig::new(g, substeps, boundary).unwrap();
    let c = smooth_velocity(&g, 0.5, 1.5);
    adjoint_error(
        2 * g.len(),
        |x| state_vec(&coarse_propagate(&state_from(x, g), &c, &cfg).unwrap()),
        |y| state_vec(&coarse_adjoint(&state_from(y, g), &c, &cfg).unwrap()),
    )
}

pub fn fine_adjoint_error() -> f64 {
    let cfg = FineSolverConfig::for_macro_step(8, 0.06, 4, 2).unwrap();
    let g = cfg.grid;
    let c = smooth_velocity(&g, 0.5, 1.5);
    adjoint_error(
        2 * g.len(),
        |x| state_vec(&fine_propagate(&state_from(x, g), &c, &cfg).unwrap()),
        |y| state_vec(&fine_adjoint(&state_from(y, g), &c, &cfg).unwrap()),
    )
}

pub fn restrict_adjoint_error() -> f64 {
    let t = TransferConfig::default();
    let fine = GridSpec::unit_square(16, 0.0).unwrap();
    let coarse = t.coarse_grid(&fine, 0.0).unwrap();
    adjoint_error(
        2 * fine.len(),
        |x| state_vec(&restrict(&state_from(x, fine), &t).unwrap()),
        |y| state_vec(&restrict_adjoint(&state_from(y, coarse), &fine, &t).unwrap()),
    )
}

pub fn prolong_adjoint_error() -> f64 {
    let t = TransferConfig::default();
    let fine = GridSpec::unit_square(16, 0.0).unwrap();
    let coarse = t.coarse_grid(&fine, 0.0).unwrap();
    adjoint_error(
        2 * coarse.len(),
        |x| state_vec(&prolong_bilinear(&state_from(x, coarse), &fine, &t).unwrap()),
        |y| state_vec(&prolong_bilinear_adjoint(&state_from(y, fine), &coarse, &t).unwrap()),
    )
}

/// Errors of Λ and of Λ† on 10×10.
pub fn energy_transform_adjoint_errors() -> (f64, f64) {
    let g = GridSpec::unit_square(10, 0.0).unwrap();
    let c = smooth_velocity(&g, 0.5, 2.0);
    let (nx, ny) = g.dims();
    let lambda = adjoint_error(
        2 * g.len(),
        |x| comp_vec(&to_energy_components(&state_from(x, g), &c).unwrap()),
        |y| state_vec(&to_energy_components_adjoint(&comp_from(y, nx, ny), &c, &g).unwrap()),
    );
    let pinv = adjoint_error(
        3 * g.len() + 1,
        |x| state_vec(&from_energy_components(&comp_from(x, nx, ny), &c, &g).unwrap()),
        |y| comp_vec(&from_energy_components_adjoint(&state_from(y, g), &c).unwrap()),
    );
    (lambda, pinv)
}

// -------------------------------------------------------------- gradients

const H: f64 = 1e-5;
/// Network losses are piecewise smooth; a short step keeps central differences off the kinks.
const H_NET: f64 = 1e-7;

fn random_tensor(dims: [usize; 4], r: &mut impl Rng) -> Tensor4 {
    let n = dims.iter().product();
    Tensor4::from_vec(dims, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum (r y + y^2 / 2)`; its cotangent is `r + y`.
fn objective(y: &[f64], r: &[f64]) -> (f64, Vec<f64>) {
    let l = y.iter().zip(r).map(|(y, r)| r * y + 0.5 * y * y).sum();
    (l, y.iter().zip(r).map(|(y, r)| r + y).collect())
}

pub fn rel_err(fd: &[f64], ad: &[f64]) -> f64 {
    let diff: Vec<f64> = fd.iter().zip(ad).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(ad).max(1e-300)
}

/// `(param, index)` pairs: every entry of small tensors, a strided sample of large ones.
fn coordinates(params: &ParameterStore, per_tensor: usize) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for (i, p) in params.iter().enumerate() {
        if !p.trainable {
            continue;
        }
        let n = p.data.len();
        let stride = (n / per_tensor).max(1);
        out.extend((0..n).step_by(stride).take(per_tensor).map(|j| (ParamId(i), j)));
    }
    out
}

fn block_store(spec: ConvBlockSpec, r: &mut impl Rng) -> (ParameterStore, BlockIds) {
    let mut p = ParameterStore::new();
    let shape = spec.conv.weight_shape();
    let n = shape.iter().product();
    let weight = p.add("w", shape, (0..n).map(|_| r.gen_range(-0.5..0.5)).collect(), true).unwrap();
    let co = spec.conv.out_channels;
    let bias = spec
        .bias
        .then(|| p.add("b", vec![co], (0..co).map(|_| r.gen_range(-0.2..0.2)).collect(), true).unwrap());
    let bn = spec.has_batchnorm.then(|| BnIds {
        gamma: p.add("g", vec![co], (0..co).map(|_| r.gen_range(0.5..1.5)).collect(), true).unwrap(),
        beta: p.add("beta", vec![co], (0..co).map(|_| r.gen_range(-0.2..0.2)).collect(), true).unwrap(),
        running_mean: p.add("rm", vec![co], vec![0.0; co], false).unwrap(),
        running_var: p.add("rv", vec![co], vec![1.0; co], false).unwrap(),
    });
    (p, BlockIds { weight, bias, bn })
}

pub fn grouped_block() -> ConvBlockSpec {
    ConvBlockSpec {
        conv: ConvSpec {
            in_channels: 6,
            out_channels: 6,
            stride: 2,
            groups: 3,
        },
        has_batchnorm: true,
        relu: true,
        bias: false,
    }
}

pub fn plain_block() -> ConvBlockSpec {
    ConvBlockSpec {
        conv: ConvSpec {
            in_channels: 4,
            out_channels: 5,
            stride: 1,
            groups: 1,
        },
        has_batchnorm: false,
        relu: true,
        bias: true,
    }
}

/// Relative gradient error of one conv block over all parameters and inputs.
pub fn conv_block_error(spec: ConvBlockSpec, dims: [usize; 4], seed: u64) -> f64 {
    let mut r = rng(seed);
    let (mut params, ids) = block_store(spec, &mut r);
    let x = random_tensor(dims, &mut r);
    let mode = BnMode::Batch { update: false };
    let eval = |params: &ParameterStore, x: &Tensor4| {
        let mut t = Tape::new();
        let xi = t.leaf(x.clone());
        let y = t.conv_block(xi, spec, ids, params, mode).unwrap();
        t.value(y).as_slice().to_vec()
    };
    let y0 = eval(&params, &x);
    let weights: Vec<f64> = (0..y0.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let y = tape.conv_block(xi, spec, ids, &params, mode).unwrap();
    let (_, seed_v) = objective(tape.value(y).as_slice(), &weights);
    params.zero_grad();
    tape.backward(y, &seed_v, &mut params).unwrap();
    let x_grad = tape.grad(xi).unwrap().to_vec();

    let (mut fd, mut ad) = (Vec::new(), Vec::new());
    for (id, j) in coordinates(&params, 1000) {
        let base = params.get(id).data[j];
        let mut p = params.clone();
        p.get_mut(id).data[j] = base + H;
        let lp = objective(&eval(&p, &x), &weights).0;
        p.get_mut(id).data[j] = base - H;
        let lm = objective(&eval(&p, &x), &weights).0;
        fd.push((lp - lm) / (2.0 * H));
        ad.push(params.get(id).grad[j]);
    }
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp.as_mut_slice()[j] += H;
        let lp = objective(&eval(&params, &xp), &weights).0;
        xp.as_mut_slice()[j] -= 2.0 * H;
        let lm = objective(&eval(&params, &xp), &weights).0;
        fd.push((lp - lm) / (2.0 * H));
        ad.push(x_grad[j]);
    }
    rel_err(&fd, &ad)
}

/// Relative gradient errors of the default JNet3: (parameters, input).
pub fn jnet3_errors() -> (f64, f64) {
    let mut r = rng(3);
    let mut net = JNet::new(JNetConfig::default(), 7).unwrap();
    for p in net.params.iter_mut().filter(|p| p.trainable && p.name.contains(".bn.")) {
        p.data.iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
    }
    let x = random_tensor([2, 4, 8, 8], &mut r);
    let mode = BnMode::Batch { update: false };
    let eval = |net: &JNet, x: &Tensor4| {
        let mut t = Tape::new();
        let xi = t.leaf(x.clone());
        let y = net.forward(&mut t, xi, mode).unwrap();
        t.value(y).as_slice().to_vec()
    };
    let y0 = eval(&net, &x);
    let weights: Vec<f64> = (0..y0.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let y = net.forward(&mut tape, xi, mode).unwrap();
    let (_, seed_v) = objective(tape.value(y).as_slice(), &weights);
    net.params.zero_grad();
    tape.backward(y, &seed_v, &mut net.params).unwrap();

    let (mut fd, mut ad) = (Vec::new(), Vec::new());
    for (id, j) in coordinates(&net.params, 6) {
        let base = net.params.get(id).data[j];
        net.params.get_mut(id).data[j] = base + H_NET;
        let lp = objective(&eval(&net, &x), &weights).0;
        net.params.get_mut(id).data[j] = base - H_NET;
        let lm = objective(&eval(&net, &x), &weights).0;
        net.params.get_mut(id).data[j] = base;
        fd.push((lp - lm) / (2.0 * H_NET));
        ad.push(net.params.get(id).grad[j]);
    }
    let params = rel_err(&fd, &ad);

    let xg = tape.grad(xi).unwrap().to_vec();
    let (mut fd, mut ad) = (Vec::new(), Vec::new());
    for j in (0..x.len()).step_by(7) {
        let mut xp = x.clone();
        xp.as_mut_slice()[j] += H_NET;
        let lp = objective(&eval(&net, &xp), &weights).0;
        xp.as_mut_slice()[j] -= 2.0 * H_NET;
        let lm = objective(&eval(&net, &xp), &weights).0;
        fd.push((lp - lm) / (2.0 * H_NET));
        ad.push(xg[j]);
    }
    (params, rel_err(&fd, &ad))
}

type Toy = (NeuralPropagator, Vec<VelocityPair>, Vec<Vec<WaveState>>);

/// Small JNet propagator on 16² with two velocities and two 2-step targets each.
fn toy() -> Toy {
    let setup = toy_setup();
    let mut model = NeuralPropagator::new(setup, small_net(), 11).unwrap();
    let g = setup.fine.grid;
    let mut r = rng(5);
    // off the ReLU kinks that zero beta and unit running statistics create
    for p in model.net_mut().unwrap().params.iter_mut().filter(|p| p.name.contains(".bn.")) {
        let (lo, hi) = if p.name.ends_with("running_var") { (0.5, 2.0) } else { (-0.3, 0.3) };
        p.data.iter_mut().for_each(|v| *v += r.gen_range(lo..hi));
    }
    let cs: Vec<VelocityPair> = [(0.6, 1.4), (0.9, 1.8)]
        .iter()
        .map(|&(lo, hi)| VelocityPair::new(smooth_velocity(&g, lo, hi), &setup.transfer).unwrap())
        .collect();
    let trajs = (0..2)
        .map(|i| {
            let mut s0 = gaussian(&g, 0.3 + 0.1 * i as f64);
            s0.ut = random_field(16, 16, &mut r);
            vec![s0, random_state(g, &mut r), random_state(g, &mut r)]
        })
        .collect();
    (model, cs, trajs)
}

/// Relative gradient error of a 2-step unrolled loss through G, R, Λ and their transposes.
pub fn two_step_chain_error() -> f64 {
    let (mut model, cs, trajs) = toy();
    let loss = |model: &mut NeuralPropagator, scale: f64| -> f64 {
        let s: Vec<ChainSample> = (0..trajs.len())
            .map(|i| ChainSample {
                start: &trajs[i][0],
                c: &cs[i],
                targets: vec![&trajs[i][1], &trajs[i][2]],
                offsets: None,
                guard_sq: f64::INFINITY,
            })
            .collect();
        let out = chain_forward_backward(model, &s, scale).unwrap();
        assert_eq!(out.aborted(), 0);
        out.losses.iter().map(|l| l.unwrap()).sum()
    };
    model.net_mut().unwrap().params.zero_grad();
    loss(&mut model, 1.0);
    let params = model.net().unwrap().params.clone();
    let (mut fd, mut ad) = (Vec::new(), Vec::new());
    for (id, j) in coordinates(&params, 8) {
        let base = params.get(id).data[j];
        model.net_mut().unwrap().params.get_mut(id).data[j] = base + H_NET;
        let lp = loss(&mut model, 0.0);
        model.net_mut().unwrap().params.get_mut(id).data[j] = base - H_NET;
        let lm = loss(&mut model, 0.0);
        model.net_mut().unwrap().params.get_mut(id).data[j] = base;
        fd.push((lp - lm) / (2.0 * H_NET));
        ad.push(params.get(id).grad[j]);
    }
    rel_err(&fd, &ad)
}

// --------------------------------------------------------------- parareal

/// Fine 16², M = 4 coarse substeps on 8², narrow sponge.
pub fn toy_setup() -> ModelSetup {
    let fine = FineSolverConfig::for_macro_step(16, 0.06, 8, 2).unwrap();
    ModelSetup::new(fine, 4, Boundary::Sponge { width: 2, rate: 20.0 }, TransferConfig::default()).unwrap()
}

pub fn small_net() -> JNetConfig {
    JNetConfig {
        widths: [6, 12, 24],
        ..JNetConfig::default()
    }
}

/// A deliberately poor, nonlinear propagator.
pub struct Squash;

impl Propagator for Squash {
    fn name(&self) -> &str {
        "squash"
    }

    fn propagate(&self, s: &WaveState, _c: &VelocityPair) -> wavecorr::Result<WaveState> {
        let f = |a: &Field, b: &Field| Field::from_fn(a.nx(), a.ny(), |i, j| 0.8 * a.get(i, j) + 0.1 * b.get(i, j).sin());
        WaveState::new(f(&s.u, &s.ut), f(&s.ut, &s.u), s.grid)
    }
}

/// Bilinear baseline, an untrained JNet propagator and [`Squash`].
pub fn parareal_models(s: ModelSetup) -> Vec<Box<dyn Propagator>> {
    vec![
        Box::new(BilinearBaseline { setup: s }),
        Box::new(NeuralPropagator::new(s, small_net(), 3).unwrap()),
        Box::new(Squash),
    ]
}

pub fn parareal_problem(s: &ModelSetup, seed: u64) -> (WaveState, VelocityPair) {
    let g = s.fine.grid;
    let mut r = rng(seed);
    let mut u0 = gaussian(&g, 0.35);
    u0.ut = Field::from_fn(g.nx, g.ny, |_, _| r.gen_range(-0.1..0.1));
    let c = VelocityPair::new(smooth_velocity(&g, 0.7, 1.3), &s.transfer).unwrap();
    (u0, c)
}

pub fn fine_rollout(u0: &WaveState, c: &VelocityPair, fine: &FineReference, n: usize) -> Vec<WaveState> {
    let mut out = vec![u0.clone()];
    for i in 0..n {
        let next = fine.propagate(&out[i], c).unwrap();
        out.push(next);
    }
    out
}

pub fn state_rel_err(a: &WaveState, b: &WaveState) -> f64 {
    norm(&state_vec(&a.sub(b).unwrap())) / norm(&state_vec(b)).max(1e-300)
}

/// Serial Parareal with K = N and an effectively disabled guard.
pub fn parareal_full(model: &dyn Propagator, n: usize, u0: &WaveState, c: &VelocityPair, fine: &FineReference) -> PararealTrace {
    let mut plan = PararealPlan::new(n, n).unwrap();
    plan.guard_factor = 1e12;
    parareal_solve(u0, c, model, fine, &SerialExecutor, &plan).unwrap()
}

/// Largest relative error, over all iterations k, of the first k + 1 states against the fine rollout.
pub fn frontier_error(model: &dyn Propagator, n: usize, seed: u64) -> f64 {
    let s = toy_setup();
    let fine = FineReference { cfg: s.fine };
    let (u0, c) = parareal_problem(&s, seed);
    let reference = fine_rollout(&u0, &c, &fine, n);
    let trace = parareal_full(model, n, &u0, &c, &fine);
    assert!(trace.truncated.is_none(), "{}: {:?}", model.name(), trace.truncated);
    let mut worst: f64 = 0.0;
    for (k, iterate) in trace.iterates.iter().enumerate() {
        for i in 0..=k.min(n) {
            worst = worst.max(state_rel_err(&iterate[i], &reference[i]));
        }
    }
    worst
}

/// Thread counts whose Rayon run differs in any bit from the serial one.
pub fn worker_mismatches(model: &dyn Propagator, n: usize, k: usize, seed: u64) -> Vec<usize> {
    let s = toy_setup();
    let fine = FineReference { cfg: s.fine };
    let (u0, c) = parareal_problem(&s, seed);
    let plan = PararealPlan::new(n, k).unwrap();
    let serial = parareal_solve(&u0, &c, model, &fine, &SerialExecutor, &plan).unwrap();
    [1, 2, 4]
        .into_iter()
        .filter(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let par = pool.install(|| parareal_solve(&u0, &c, model, &fine, &RayonExecutor, &plan).unwrap());
            par.iterates != serial.iterates || par.residuals != serial.residuals
        })
        .collect()
}

// --------------------------------------------------------------- training

pub fn toy_shards(s: &ModelSetup, count: usize, horizon: usize, seed: u64) -> Vec<TrajectoryShard> {
    let g = s.fine.grid;
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let w = r.gen_range(0.25..0.4);
            let c = smooth_velocity(&g, r.gen_range(0.6..0.9), r.gen_range(1.1..1.5));
            let mut sh = make_trajectory(&gaussian(&g, w), &c, horizon, &s.fine).unwrap();
            sh.id = i;
            sh
        })
        .collect()
}

/// Largest relative gap between the one-step unrolled loss and the single-step
/// loss, over the loss values and every parameter gradient, for each start.
pub fn unroll_one_gap() -> f64 {
    let s = toy_setup();
    let sh = &toy_shards(&s, 1, 3, 1)[0];
    let c = VelocityPair::new(sh.velocity.clone(), &s.transfer).unwrap();
    let gap = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst: f64 = 0.0;
    for n in 0..3 {
        let mut a = NeuralPropagator::new(s, small_net(), 7).unwrap();
        let mut b = NeuralPropagator::new(s, small_net(), 7).unwrap();
        let la = multi_step_loss(&mut a, &sh.states, &c, n, 1).unwrap();
        let lb = single_step_loss(&mut b, &[(&sh.states[n], &sh.states[n + 1], &c)]).unwrap();
        worst = worst.max(gap(la, lb));
        let (pa, pb) = (&a.net().unwrap().params, &b.net().unwrap().params);
        for (x, y) in pa.iter().zip(pb.iter()) {
            for (g, h) in x.grad.iter().zip(&y.grad) {
                worst = worst.max(gap(*g, *h));
            }
        }
    }
    worst
}
