//! Fourier pseudo-spectral Laplacian with classical RK4 time stepping.
//!
//! The solve runs on a periodic grid `pad_factor` times larger than the
//! physical one: the state is zero-padded into the centre, the velocity is
//! extended by edge replication, and the central window is cropped back out
//! after the macro step.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid::{Field, GridSpec, VelocityModel, WaveState};

/// Largest `c_max * dt * |k|_max` accepted for RK4 (stability bound is `2 sqrt 2`).
pub const RK4_STABILITY_LIMIT: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineSolverConfig {
    pub grid: GridSpec,
    pub substeps: usize,
    pub dt: f64,
    #[serde(default = "default_pad")]
    pub pad_factor: usize,
}

fn default_pad() -> usize {
    2
}

impl FineSolverConfig {
    pub fn new(grid: GridSpec, substeps: usize, dt: f64, pad_factor: usize) -> Result<Self> {
        let cfg = FineSolverConfig {
            grid,
            substeps,
            dt,
            pad_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fine grid of `n x n` nodes on `[-1,1)^2` advancing `dt_star` in
    /// `substeps` equal RK4 steps.
    pub fn for_macro_step(n: usize, dt_star: f64, substeps: usize, pad_factor: usize) -> Result<Self> {
        let dt = dt_star / substeps as f64;
        Self::new(GridSpec::unit_square(n, dt)?, substeps, dt, pad_factor)
    }

    /// `dx = 2/128` with 77 steps of `0.06 / 77`.
    pub fn canonical() -> Self {
        Self::for_macro_step(128, 0.06, 77, 2).expect("valid config")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.substeps == 0 {
            return Err(Error::Config("fine solver needs at least one substep".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("fine time step must be positive, got {}", self.dt)));
        }
        if self.pad_factor == 0 {
            return Err(Error::Config("pad_factor must be at least 1".into()));
        }
        if self.pad_factor > 1 && ((self.pad_factor - 1) * self.grid.nx % 2 != 0 || (self.pad_factor - 1) * self.grid.ny % 2 != 0) {
            return Err(Error::Config("padding must split evenly on both sides".into()));
        }
        Ok(())
    }

    pub fn macro_dt(&self) -> f64 {
        self.substeps as f64 * self.dt
    }

    pub fn check_macro_step(&self, dt_star: f64) -> Result<()> {
        if (self.macro_dt() - dt_star).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "fine macro step {} differs from {dt_star}",
                self.macro_dt()
            )));
        }
        Ok(())
    }

    /// Offset (in nodes) of the physical window inside the extended grid.
    pub fn offsets(&self) -> (usize, usize) {
        (
            (self.pad_factor - 1) * self.grid.nx / 2,
            (self.pad_factor - 1) * self.grid.ny / 2,
        )
    }

    pub fn extended_grid(&self) -> GridSpec {
        let (ox, oy) = self.offsets();
        GridSpec {
            nx: self.pad_factor * self.grid.nx,
            ny: self.pad_factor * self.grid.ny,
            dx: self.grid.dx,
            dt: self.dt,
            origin: [
                self.grid.origin[0] - ox as f64 * self.grid.dx,
                self.grid.origin[1] - oy as f64 * self.grid.dx,
            ],
        }
    }

    /// Rejects velocities that could carry energy around the periodic
    /// extension within one macro step, and RK4-unstable time steps.
    /// `pad_factor == 1` is the purely periodic mode and skips the wrap check.
    pub fn check_velocity(&self, c: &VelocityModel) -> Result<()> {
        if self.pad_factor > 1 {
            let (ox, oy) = self.offsets();
            let pad_width = ox.min(oy) as f64 * self.grid.dx;
            if c.c_max() * self.macro_dt() >= pad_width {
                return Err(Error::Config(format!(
                    "padding width {pad_width} too small: c_max * dt* = {}",
                    c.c_max() * self.macro_dt()
                )));
            }
        }
        let k_max = std::f64::consts::PI * std::f64::consts::SQRT_2 / self.grid.dx;
        let ratio = c.c_max() * self.dt * k_max;
        if ratio > RK4_STABILITY_LIMIT {
            return Err(Error::Unstable {
                ratio,
                limit: RK4_STABILITY_LIMIT,
            });
        }
        Ok(())
    }
}

/// Periodic Fourier Laplacian on a fixed grid size with cached FFT plans.
pub struct SpectralLaplacian {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    /// `-(kx^2 + ky^2) / (nx ny)` in transposed (column-major) layout.
    symbol: Vec<f64>,
}

fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let f = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            2.0 * std::f64::consts::PI * f / length
        })
        .collect()
}

impl SpectralLaplacian {
    pub fn new(grid: &GridSpec) -> Self {
        let (nx, ny) = grid.dims();
        let mut planner = FftPlanner::new();
        let kx = wavenumbers(nx, grid.width());
        let ky = wavenumbers(ny, grid.height());
        let scale = 1.0 / (nx * ny) as f64;
        let mut symbol = Vec::with_capacity(nx * ny);
        for k in &kx {
            for l in &ky {
                symbol.push(-(k * k + l * l) * scale);
            }
        }
        SpectralLaplacian {
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(nx),
            row_inv: planner.plan_fft_inverse(nx),
            col_fwd: planner.plan_fft_forward(ny),
            col_inv: planner.plan_fft_inverse(ny),
            symbol,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Forward 2-D FFT (unscaled) into transposed layout `[i * ny + j]`.
    fn forward(&self, f: &[f64], buf: &mut Vec<Complex<f64>>, tr: &mut Vec<Complex<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        buf.clear();
        buf.extend(f.iter().map(|&v| Complex::new(v, 0.0)));
        self.row_fwd.process(buf);
        transpose(buf, tr, nx, ny);
        self.col_fwd.process(tr);
    }

    /// Inverse of [`SpectralLaplacian::forward`] without the `1/(nx ny)` factor.
    fn inverse(&self, tr: &mut Vec<Complex<f64>>, buf: &mut Vec<Complex<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        self.col_inv.process(tr);
        transpose(tr, buf, ny, nx);
        self.row_inv.process(buf);
    }

    pub fn apply(&self, f: &[f64], out: &mut [f64], scratch: &mut FftScratch) {
        let FftScratch { buf, tr } = scratch;
        self.forward(f, buf, tr);
        for (z, s) in tr.iter_mut().zip(&self.symbol) {
            *z *= *s;
        }
        self.inverse(tr, buf);
        for (o, z) in out.iter_mut().zip(buf.iter()) {
            *o = z.re;
        }
    }

    /// FFT followed by the scaled inverse FFT; used to check the transform pair.
    pub fn round_trip(&self, f: &[f64]) -> Vec<f64> {
        let mut s = FftScratch::default();
        self.forward(f, &mut s.buf, &mut s.tr);
        self.inverse(&mut s.tr, &mut s.buf);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        s.buf.iter().map(|z| z.re * scale).collect()
    }
}

#[derive(Default)]
pub struct FftScratch {
    buf: Vec<Complex<f64>>,
    tr: Vec<Complex<f64>>,
}

/// `src` is `rows x cols` row-major; `dst` becomes `cols x rows`.
fn transpose(src: &[Complex<f64>], dst: &mut Vec<Complex<f64>>, cols: usize, rows: usize) {
    dst.clear();
    dst.resize(src.len(), Complex::new(0.0, 0.0));
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Spectral Laplacian of a periodic field on `g`.
pub fn spectral_laplacian(f: &Field, g: &GridSpec) -> Result<Field> {
    if f.dims() != g.dims() {
        return Err(shape_err("field vs grid", f.dims(), g.dims()));
    }
    let lap = SpectralLaplacian::new(g);
    let mut out = vec![0.0; f.len()];
    lap.apply(f.as_slice(), &mut out, &mut FftScratch::default());
    Field::from_vec(g.nx, g.ny, out)
}

/// RK4 integrator for `(u, v)' = (v, c^2 L u)` and its transpose
/// `(u, v)' = (L (c^2 v), u)` on a periodic grid.
pub struct Rk4Stepper {
    lap: SpectralLaplacian,
    c2: Vec<f64>,
    fft: FftScratch,
    k: [Vec<f64>; 4],
    kv: [Vec<f64>; 4],
    tmp_u: Vec<f64>,
    tmp_v: Vec<f64>,
    work: Vec<f64>,
}

impl Rk4Stepper {
    pub fn new(grid: &GridSpec, c: &VelocityModel) -> Result<Self> {
        if c.dims() != grid.dims() {
            return Err(shape_err("velocity vs grid", c.dims(), grid.dims()));
        }
        let n = grid.len();
        let z = || vec![0.0; n];
        Ok(Rk4Stepper {
            lap: SpectralLaplacian::new(grid),
            c2: c.field().as_slice().iter().map(|v| v * v).collect(),
            fft: FftScratch::default(),
            k: [z(), z(), z(), z()],
            kv: [z(), z(), z(), z()],
            tmp_u: z(),
            tmp_v: z(),
            work: z(),
        })
    }

    /// Right-hand side; forward: `(v, c^2 L u)`, adjoint: `(L(c^2 v), u)`.
    fn rhs(&mut self, u: &[f64], v: &[f64], stage: usize, adjoint: bool) {
        if adjoint {
            for ((w, vv), c2) in self.work.iter_mut().zip(v).zip(&self.c2) {
                *w = vv * c2;
            }
            self.lap.apply(&self.work, &mut self.k[stage], &mut self.fft);
            self.kv[stage].copy_from_slice(u);
        } else {
            self.k[stage].copy_from_slice(v);
            self.lap.apply(u, &mut self.kv[stage], &mut self.fft);
            for (a, c2) in self.kv[stage].iter_mut().zip(&self.c2) {
                *a *= c2;
            }
        }
    }

    pub fn step(&mut self, u: &mut [f64], v: &mut [f64], dt: f64, adjoint: bool) {
        self.rhs(u, v, 0, adjoint);
        for (stage, h) in [(1usize, 0.5 * dt), (2, 0.5 * dt), (3, dt)] {
            let mut tu = std::mem::take(&mut self.tmp_u);
            let mut tv = std::mem::take(&mut self.tmp_v);
            for i in 0..u.len() {
                tu[i] = u[i] + h * self.k[stage - 1][i];
                tv[i] = v[i] + h * self.kv[stage - 1][i];
            }
            self.rhs(&tu, &tv, stage, adjoint);
            self.tmp_u = tu;
            self.tmp_v = tv;
        }
        let w = dt / 6.0;
        for i in 0..u.len() {
            u[i] += w * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
            v[i] += w * (self.kv[0][i] + 2.0 * self.kv[1][i] + 2.0 * self.kv[2][i] + self.kv[3][i]);
        }
    }
}

/// One classical RK4 step on the periodic grid of `s`.
pub fn rk4_step(s: &WaveState, c: &VelocityModel, dt: f64) -> Result<WaveState> {
    s.check_finite("rk4 input")?;
    let mut st = Rk4Stepper::new(&s.grid, c)?;
    let mut u = s.u.as_slice().to_vec();
    let mut v = s.ut.as_slice().to_vec();
    st.step(&mut u, &mut v, dt, false);
    let out = WaveState::new(
        Field::from_vec(s.grid.nx, s.grid.ny, u)?,
        Field::from_vec(s.grid.nx, s.grid.ny, v)?,
        s.grid,
    )?;
    out.check_finite("rk4 output")?;
    Ok(out)
}

/// Zero-pads a physical field into the centre of the extended grid.
pub fn embed(f: &Field, cfg: &FineSolverConfig) -> Field {
    let ext = cfg.extended_grid();
    let (ox, oy) = cfg.offsets();
    let mut out = Field::zeros(ext.nx, ext.ny);
    for j in 0..f.ny() {
        for i in 0..f.nx() {
            out.set(i + ox, j + oy, f.get(i, j));
        }
    }
    out
}

/// Cuts the physical window out of an extended field.
pub fn crop(f: &Field, cfg: &FineSolverConfig) -> Field {
    let (ox, oy) = cfg.offsets();
    Field::from_fn(cfg.grid.nx, cfg.grid.ny, |i, j| f.get(i + ox, j + oy))
}

/// Extends a velocity by replicating its edge values.
pub fn extend_velocity(c: &VelocityModel, cfg: &FineSolverConfig) -> Result<VelocityModel> {
    let ext = cfg.extended_grid();
    let (ox, oy) = cfg.offsets();
    let (nx, ny) = c.dims();
    let src = c.field();
    VelocityModel::new(Field::from_fn(ext.nx, ext.ny, |i, j| {
        let si = i.saturating_sub(ox).min(nx - 1);
        let sj = j.saturating_sub(oy).min(ny - 1);
        src.get(si, sj)
    }))
}

/// Reusable fine solver for one velocity model.
pub struct FineSolver {
    cfg: FineSolverConfig,
    stepper: Rk4Stepper,
}

impl FineSolver {
    pub fn new(c: &VelocityModel, cfg: &FineSolverConfig) -> Result<Self> {
        cfg.validate()?;
        if c.dims() != cfg.grid.dims() {
            return Err(shape_err("velocity vs fine grid", c.dims(), cfg.grid.dims()));
        }
        cfg.check_velocity(c)?;
        let ext_c = extend_velocity(c, cfg)?;
        Ok(FineSolver {
            cfg: *cfg,
            stepper: Rk4Stepper::new(&cfg.extended_grid(), &ext_c)?,
        })
    }

    fn run(&mut self, s: &WaveState, adjoint: bool) -> Result<WaveState> {
        if s.dims() != self.cfg.grid.dims() {
            return Err(shape_err("state vs fine grid", s.dims(), self.cfg.grid.dims()));
        }
        s.check_finite("fine solver input")?;
        let mut u = embed(&s.u, &self.cfg).into_vec();
        let mut v = embed(&s.ut, &self.cfg).into_vec();
        for _ in 0..self.cfg.substeps {
            self.stepper.step(&mut u, &mut v, self.cfg.dt, adjoint);
        }
        let ext = self.cfg.extended_grid();
        let u = crop(&Field::from_vec(ext.nx, ext.ny, u)?, &self.cfg);
        let v = crop(&Field::from_vec(ext.nx, ext.ny, v)?, &self.cfg);
        let out = WaveState::new(u, v, s.grid)?;
        out.check_finite("fine solver output")?;
        Ok(out)
    }

    pub fn propagate(&mut self, s: &WaveState) -> Result<WaveState> {
        self.run(s, false)
    }

    pub fn adjoint(&mut self, sbar: &WaveState) -> Result<WaveState> {
        self.run(sbar, true)
    }
}

/// The fine macro step on the extended periodic domain, cropped back.
pub fn fine_propagate(s: &WaveState, c: &VelocityModel, cfg: &FineSolverConfig) -> Result<WaveState> {
    FineSolver::new(c, cfg)?.propagate(s)
}

/// Transpose of [`fine_propagate`] in the plain l2 inner product.
pub fn fine_adjoint(sbar: &WaveState, c: &VelocityModel, cfg: &FineSolverConfig) -> Result<WaveState> {
    FineSolver::new(c, cfg)?.adjoint(sbar)
}

/// Energy conserved by the periodic semi-discrete system:
/// `(<-L u, u> + <ut / c^2, ut>) dx^2`.
pub fn spectral_energy(s: &WaveState, c: &VelocityModel) -> Result<f64> {
    let lu = spectral_laplacian(&s.u, &s.grid)?;
    let pot = -lu.dot(&s.u)?;
    let kin: f64 = s
        .ut
        .as_slice()
        .iter()
        .zip(c.field().as_slice())
        .map(|(v, c)| v * v / (c * c))
        .sum();
    Ok((pot + kin) * s.grid.cell_area())
}
