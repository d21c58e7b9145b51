#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecorr::grid::{EnergyComponents, Field, GridSpec, VelocityModel, WaveState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(nx: usize, ny: usize, r: &mut impl Rng) -> Field {
    Field::from_fn(nx, ny, |_, _| r.gen_range(-1.0..1.0))
}

pub fn random_state(g: GridSpec, r: &mut impl Rng) -> WaveState {
    WaveState::new(random_field(g.nx, g.ny, r), random_field(g.nx, g.ny, r), g).unwrap()
}

/// Smoothly varying velocity in `[lo, hi]`.
pub fn smooth_velocity(g: &GridSpec, lo: f64, hi: f64) -> VelocityModel {
    let f = g.field_from_fn(|x, y| lo + (hi - lo) * 0.5 * (1.0 + (2.0 * x + 0.5).sin() * (1.5 * y).cos()));
    VelocityModel::new(f).unwrap()
}

pub fn gaussian(g: &GridSpec, width: f64) -> WaveState {
    let u = g.field_from_fn(|x, y| (-(x * x + y * y) / (width * width)).exp());
    WaveState::new(u, Field::zeros(g.nx, g.ny), *g).unwrap()
}

pub fn state_vec(s: &WaveState) -> Vec<f64> {
    s.u.as_slice().iter().chain(s.ut.as_slice()).copied().collect()
}

pub fn state_from(v: &[f64], g: GridSpec) -> WaveState {
    let n = g.len();
    WaveState::new(
        Field::from_vec(g.nx, g.ny, v[..n].to_vec()).unwrap(),
        Field::from_vec(g.nx, g.ny, v[n..].to_vec()).unwrap(),
        g,
    )
    .unwrap()
}

pub fn comp_vec(e: &EnergyComponents) -> Vec<f64> {
    let mut v: Vec<f64> = e.ux.as_slice().iter().chain(e.uy.as_slice()).chain(e.w.as_slice()).copied().collect();
    v.push(e.mean_u);
    v
}

pub fn comp_from(v: &[f64], nx: usize, ny: usize) -> EnergyComponents {
    let n = nx * ny;
    let f = |i: usize| Field::from_vec(nx, ny, v[i * n..(i + 1) * n].to_vec()).unwrap();
    EnergyComponents::new(f(0), f(1), f(2), v[3 * n]).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Columns `A e_j` of a linear map on `R^n`, stored column-major.
pub fn dense(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> (usize, Vec<Vec<f64>>) {
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            apply(&e)
        })
        .collect();
    (cols[0].len(), cols)
}

/// `A^T y` from the dense columns: entry `j` is `<A e_j, y>`.
pub fn dense_transpose_apply(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    cols.iter().map(|c| dot(c, y)).collect()
}

/// Largest deviation between a hand-written transpose and the dense
/// oracle over the unit vectors of the output space, scaled by the largest
/// matrix entry.
pub fn transpose_deviation(cols: &[Vec<f64>], m: usize, adjoint: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let amax = cols.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut worst = 0.0f64;
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        let got = adjoint(&e);
        let want = dense_transpose_apply(cols, &e);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / amax);
        }
    }
    worst
}

/// `|<Ax, y> - <x, A^T y>| / (|Ax| |y|)` for one random pair.
pub fn pairing_gap(n: usize, m: usize, seed: u64, apply: impl Fn(&[f64]) -> Vec<f64>, adjoint: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..m).map(|_| r.gen_range(-1.0..1.0)).collect();
    let ax = apply(&x);
    let aty = adjoint(&y);
    (dot(&ax, &y) - dot(&x, &aty)).abs() / (norm(&ax) * norm(&y)).max(norm(&x) * norm(&aty)).max(1e-300)
}
