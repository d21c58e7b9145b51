//! Uniform grids, wave states, velocity models and the discrete energy metrics.
//!
//! Fields are stored row-major: index `j * nx + i` holds the node at
//! `(origin[0] + i * dx, origin[1] + j * dx)`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// CFL ratio above which an explicit coarse solve is rejected.
pub const CFL_LIMIT: f64 = 0.5;

/// A dense scalar field on an `nx x ny` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::constant(nx, ny, 0.0)
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        Field {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "field data length {} does not match {}x{}",
                data.len(),
                nx,
                ny
            )));
        }
        Ok(Field { nx, ny, data })
    }

    /// Builds a field from `f(i, j)` evaluated at every node.
    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                data.push(f(i, j));
            }
        }
        Field { nx, ny, data }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.nx + i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same(other, "zip_map")?;
        Ok(Field {
            nx: self.nx,
            ny: self.ny,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Field) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, other: &Field, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err(what, self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Uniform Cartesian grid with an attached time-step length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dt: f64,
    #[serde(default = "default_origin")]
    pub origin: [f64; 2],
}

fn default_origin() -> [f64; 2] {
    [-1.0, -1.0]
}

impl GridSpec {
    /// `dt` may be zero for grids that carry no time stepping of their own.
    pub fn new(nx: usize, ny: usize, dx: f64, dt: f64, origin: [f64; 2]) -> Result<Self> {
        let g = GridSpec {
            nx,
            ny,
            dx,
            dt,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n x n` nodes covering `[-1, 1)^2` with spacing `2 / n`.
    pub fn unit_square(n: usize, dt: f64) -> Result<Self> {
        Self::new(n, n, 2.0 / n as f64, dt, default_origin())
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::Config(format!(
                "grid must have at least 3 nodes per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be positive, got {}", self.dx)));
        }
        if !(self.dt >= 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be non-negative, got {}", self.dt)));
        }
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.dx
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.dx
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dx
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn field_from_fn(&self, mut f: impl FnMut(f64, f64) -> f64) -> Field {
        Field::from_fn(self.nx, self.ny, |i, j| f(self.x(i), self.y(j)))
    }
}

/// Displacement and its time derivative sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub u: Field,
    pub ut: Field,
    pub grid: GridSpec,
}

impl WaveState {
    pub fn new(u: Field, ut: Field, grid: GridSpec) -> Result<Self> {
        if u.dims() != grid.dims() {
            return Err(shape_err("state u vs grid", u.dims(), grid.dims()));
        }
        if ut.dims() != grid.dims() {
            return Err(shape_err("state ut vs grid", ut.dims(), grid.dims()));
        }
        Ok(WaveState { u, ut, grid })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        WaveState {
            u: Field::zeros(grid.nx, grid.ny),
            ut: Field::zeros(grid.nx, grid.ny),
            grid,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.ut.is_finite()
    }

    pub(crate) fn check_finite(&self, what: &str) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Contract(format!("{what}: non-finite entries in state")));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> WaveState {
        let mut out = self.clone();
        out.u.scale(alpha);
        out.ut.scale(alpha);
        out
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &WaveState) -> Result<()> {
        self.u.axpy(alpha, &other.u)?;
        self.ut.axpy(alpha, &other.ut)
    }

    pub fn sub(&self, other: &WaveState) -> Result<WaveState> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Plain l2 inner product over both components.
    pub fn dot(&self, other: &WaveState) -> Result<f64> {
        Ok(self.u.dot(&other.u)? + self.ut.dot(&other.ut)?)
    }

    pub fn max_abs_diff(&self, other: &WaveState) -> Result<f64> {
        let d = self.sub(other)?;
        Ok(d.u.max_abs().max(d.ut.max_abs()))
    }
}

/// Positive wave speed field with cached extrema.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    c: Field,
    c_min: f64,
    c_max: f64,
}

impl VelocityModel {
    pub fn new(c: Field) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::Contract("velocity contains non-finite values".into()));
        }
        let (c_min, c_max) = c.min_max();
        if c_min <= 0.0 {
            return Err(Error::Contract(format!("velocity must be positive, min = {c_min}")));
        }
        Ok(VelocityModel { c, c_min, c_max })
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Result<Self> {
        Self::new(Field::constant(nx, ny, value))
    }

    pub fn field(&self) -> &Field {
        &self.c
    }

    pub fn c_min(&self) -> f64 {
        self.c_min
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn dims(&self) -> (usize, usize) {
        self.c.dims()
    }

    pub fn squared(&self) -> Field {
        self.c.map(|v| v * v)
    }

    pub fn inv_squared(&self) -> Field {
        self.c.map(|v| 1.0 / (v * v))
    }
}

/// Energy-component representation of a wave state: `(du/dx, du/dy, ut / c^2)`
/// plus the mean of `u`, which the gradient alone cannot recover.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyComponents {
    pub ux: Field,
    pub uy: Field,
    pub w: Field,
    pub mean_u: f64,
}

impl EnergyComponents {
    pub fn new(ux: Field, uy: Field, w: Field, mean_u: f64) -> Result<Self> {
        if ux.dims() != uy.dims() || ux.dims() != w.dims() {
            return Err(Error::ShapeMismatch(
                "energy components must share one shape".into(),
            ));
        }
        Ok(EnergyComponents { ux, uy, w, mean_u })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        EnergyComponents {
            ux: Field::zeros(nx, ny),
            uy: Field::zeros(nx, ny),
            w: Field::zeros(nx, ny),
            mean_u: 0.0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.ux.dims()
    }
}

pub mod stencil {
    //! Second-order gradient: central differences in the interior and
    //! one-sided three-point differences on the first and last node.

    use super::Field;

    /// Derivative of every row (`axis == 0`, along x) or column (`axis == 1`, along y).
    pub fn diff(u: &Field, dx: f64, axis: usize) -> Field {
        let (nx, ny) = u.dims();
        let src = u.as_slice();
        let mut out = vec![0.0; src.len()];
        let h = 0.5 / dx;
        let (n, stride, lines, line_stride) = if axis == 0 {
            (nx, 1, ny, nx)
        } else {
            (ny, nx, nx, 1)
        };
        for l in 0..lines {
            let base = l * line_stride;
            let at = |k: usize| src[base + k * stride];
            out[base] = h * (-3.0 * at(0) + 4.0 * at(1) - at(2));
            for k in 1..n - 1 {
                out[base + k * stride] = h * (at(k + 1) - at(k - 1));
            }
            out[base + (n - 1) * stride] = h * (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3));
        }
        Field::from_vec(nx, ny, out).expect("shape preserved")
    }

    /// Transpose of [`diff`] along the same axis.
    pub fn diff_adjoint(g: &Field, dx: f64, axis: usize) -> Field {
        let (nx, ny) = g.dims();
        let src = g.as_slice();
        let mut out = vec![0.0; src.len()];
        let h = 0.5 / dx;
        let (n, stride, lines, line_stride) = if axis == 0 {
            (nx, 1, ny, nx)
        } else {
            (ny, nx, nx, 1)
        };
        for l in 0..lines {
            let base = l * line_stride;
            let idx = |k: usize| base + k * stride;
            let g0 = src[idx(0)];
            out[idx(0)] -= 3.0 * h * g0;
            out[idx(1)] += 4.0 * h * g0;
            out[idx(2)] -= h * g0;
            for k in 1..n - 1 {
                let gk = src[idx(k)];
                out[idx(k + 1)] += h * gk;
                out[idx(k - 1)] -= h * gk;
            }
            let gl = src[idx(n - 1)];
            out[idx(n - 1)] += 3.0 * h * gl;
            out[idx(n - 2)] -= 4.0 * h * gl;
            out[idx(n - 3)] += h * gl;
        }
        Field::from_vec(nx, ny, out).expect("shape preserved")
    }

    pub fn gradient(u: &Field, dx: f64) -> (Field, Field) {
        (diff(u, dx, 0), diff(u, dx, 1))
    }

    /// `D^T (gx, gy)` for the stacked gradient operator `D`.
    pub fn gradient_adjoint(gx: &Field, gy: &Field, dx: f64) -> Field {
        let mut out = diff_adjoint(gx, dx, 0);
        out.axpy(1.0, &diff_adjoint(gy, dx, 1)).expect("same shape");
        out
    }
}

fn check_velocity(s: &WaveState, c: &VelocityModel) -> Result<()> {
    if s.dims() != c.dims() {
        return Err(shape_err("state vs velocity", s.dims(), c.dims()));
    }
    Ok(())
}

/// Discrete energy seminorm `sum (|grad_h u|^2 + ut^2 / c^2) dx^2`.
pub fn energy_seminorm_sq(s: &WaveState, c: &VelocityModel) -> Result<f64> {
    check_velocity(s, c)?;
    let (gx, gy) = stencil::gradient(&s.u, s.grid.dx);
    let grad: f64 = gx
        .as_slice()
        .iter()
        .zip(gy.as_slice())
        .map(|(a, b)| a * a + b * b)
        .sum();
    let kin: f64 = s
        .ut
        .as_slice()
        .iter()
        .zip(c.field().as_slice())
        .map(|(v, cc)| v * v / (cc * cc))
        .sum();
    Ok((grad + kin) * s.grid.cell_area())
}

pub fn energy_mse(a: &WaveState, b: &WaveState, c: &VelocityModel) -> Result<f64> {
    energy_seminorm_sq(&a.sub(b)?, c)
}

pub fn relative_energy_mse(pred: &WaveState, reference: &WaveState, c: &VelocityModel) -> Result<f64> {
    let denom = energy_seminorm_sq(reference, c)?;
    if denom <= 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(energy_mse(pred, reference, c)? / denom)
}

/// `c_max * dt / dx` for the grid's own time step.
pub fn cfl_ratio(g: &GridSpec, c: &VelocityModel) -> f64 {
    c.c_max() * g.dt / g.dx
}
