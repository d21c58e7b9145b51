//! Velocity Verlet propagation with a five-point Laplacian and a sponge layer.
//!
//! One substep is `D . V . D` where `V` is the Verlet update and `D`
//! multiplies both `u` and `ut` by `exp(-gamma(x) dt / 2)`. Every piece is
//! linear for a fixed velocity, so the transpose is assembled from the same
//! parts in reverse order.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid::{cfl_ratio, Field, GridSpec, VelocityModel, WaveState, CFL_LIMIT};

/// Boundary treatment of the coarse solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    /// Damping layer of `width` cells along every edge. The damping rate
    /// ramps with a raised cosine from 0 at the inner edge to `rate` (1/time)
    /// on the outermost node. Outside the grid `u` is mirrored (Neumann).
    Sponge { width: usize, rate: f64 },
    /// Periodic wrap with no damping.
    Periodic,
}

impl Default for Boundary {
    fn default() -> Self {
        Boundary::Sponge {
            width: 10,
            rate: DEFAULT_SPONGE_RATE,
        }
    }
}

pub const DEFAULT_SPONGE_RATE: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseSolverConfig {
    pub grid: GridSpec,
    pub substeps: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl CoarseSolverConfig {
    pub fn new(grid: GridSpec, substeps: usize, boundary: Boundary) -> Result<Self> {
        let cfg = CoarseSolverConfig {
            grid,
            substeps,
            boundary,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `dx = 2/64`, `dt = 1/600`, 36 substeps per macro step of 0.06.
    pub fn canonical() -> Self {
        Self::new(
            GridSpec::unit_square(64, 1.0 / 600.0).expect("valid grid"),
            36,
            Boundary::default(),
        )
        .expect("valid config")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.substeps == 0 {
            return Err(Error::Config("coarse solver needs at least one substep".into()));
        }
        if self.grid.dt <= 0.0 {
            return Err(Error::Config("coarse solver time step must be positive".into()));
        }
        if let Boundary::Sponge { width, rate } = self.boundary {
            if 2 * width > self.grid.nx.min(self.grid.ny) {
                return Err(Error::Config(format!(
                    "sponge width {width} does not fit a {}x{} grid",
                    self.grid.nx, self.grid.ny
                )));
            }
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("sponge rate must be non-negative, got {rate}")));
            }
        }
        Ok(())
    }

    pub fn macro_dt(&self) -> f64 {
        self.substeps as f64 * self.grid.dt
    }

    pub fn check_macro_step(&self, dt_star: f64) -> Result<()> {
        if (self.macro_dt() - dt_star).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "coarse macro step {} differs from {dt_star}",
                self.macro_dt()
            )));
        }
        Ok(())
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }
}

/// Precomputed coefficients of one coarse substep for a fixed velocity.
pub struct CoarseOperator {
    nx: usize,
    ny: usize,
    dt: f64,
    inv_dx2: f64,
    periodic: bool,
    c2: Vec<f64>,
    half_mask: Option<Vec<f64>>,
}

impl CoarseOperator {
    pub fn new(c: &VelocityModel, cfg: &CoarseSolverConfig) -> Result<Self> {
        cfg.validate()?;
        if c.dims() != cfg.grid.dims() {
            return Err(shape_err("velocity vs coarse grid", c.dims(), cfg.grid.dims()));
        }
        let ratio = cfl_ratio(&cfg.grid, c);
        if ratio > CFL_LIMIT {
            return Err(Error::Unstable {
                ratio,
                limit: CFL_LIMIT,
            });
        }
        let (nx, ny) = cfg.grid.dims();
        let dt = cfg.grid.dt;
        let (periodic, half_mask) = match cfg.boundary {
            Boundary::Periodic => (true, None),
            Boundary::Sponge { width, rate } => {
                let mask = sponge_rate(nx, ny, width, rate)
                    .into_iter()
                    .map(|g| (-0.5 * g * dt).exp())
                    .collect();
                (false, Some(mask))
            }
        };
        Ok(CoarseOperator {
            nx,
            ny,
            dt,
            inv_dx2: 1.0 / (cfg.grid.dx * cfg.grid.dx),
            periodic,
            c2: c.field().as_slice().iter().map(|v| v * v).collect(),
            half_mask,
        })
    }

    /// `out = c^2 * Q_h u`
    fn accel(&self, u: &[f64], out: &mut [f64]) {
        laplacian_5pt(u, self.nx, self.ny, self.inv_dx2, self.periodic, out);
        for (o, c2) in out.iter_mut().zip(&self.c2) {
            *o *= c2;
        }
    }

    fn damp(&self, u: &mut [f64], ut: &mut [f64]) {
        if let Some(m) = &self.half_mask {
            for ((a, b), m) in u.iter_mut().zip(ut.iter_mut()).zip(m) {
                *a *= m;
                *b *= m;
            }
        }
    }

    /// Advances `(u, ut)` by one substep in place.
    pub fn step(&self, u: &mut [f64], ut: &mut [f64], scratch: &mut Scratch) {
        let dt = self.dt;
        self.damp(u, ut);
        self.accel(u, &mut scratch.a);
        for ((u, v), a) in u.iter_mut().zip(ut.iter()).zip(&scratch.a) {
            *u += dt * v + 0.5 * dt * dt * a;
        }
        self.accel(u, &mut scratch.b);
        for ((v, a), b) in ut.iter_mut().zip(&scratch.a).zip(&scratch.b) {
            *v += 0.5 * dt * (a + b);
        }
        self.damp(u, ut);
    }

    /// Applies the transpose of [`CoarseOperator::step`] in place.
    pub fn step_adjoint(&self, ub: &mut [f64], vb: &mut [f64], scratch: &mut Scratch) {
        let dt = self.dt;
        self.damp(ub, vb);
        // b = C Q u1 receives dt/2 * vb
        for ((t, v), c2) in scratch.a.iter_mut().zip(vb.iter()).zip(&self.c2) {
            *t = c2 * 0.5 * dt * v;
        }
        laplacian_5pt(&scratch.a, self.nx, self.ny, self.inv_dx2, self.periodic, &mut scratch.b);
        for (u, q) in ub.iter_mut().zip(&scratch.b) {
            *u += q;
        }
        // a = C Q u0 receives dt/2 * vb + dt^2/2 * ub1
        for ((t, (v, u)), c2) in scratch
            .a
            .iter_mut()
            .zip(vb.iter().zip(ub.iter()))
            .zip(&self.c2)
        {
            *t = c2 * (0.5 * dt * v + 0.5 * dt * dt * u);
        }
        for (v, u) in vb.iter_mut().zip(ub.iter()) {
            *v += dt * u;
        }
        laplacian_5pt(&scratch.a, self.nx, self.ny, self.inv_dx2, self.periodic, &mut scratch.b);
        for (u, q) in ub.iter_mut().zip(&scratch.b) {
            *u += q;
        }
        self.damp(ub, vb);
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            a: vec![0.0; self.nx * self.ny],
            b: vec![0.0; self.nx * self.ny],
        }
    }
}

pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Raised-cosine damping rate: 0 in the interior, `rate` on the outermost nodes.
pub fn sponge_rate(nx: usize, ny: usize, width: usize, rate: f64) -> Vec<f64> {
    let ramp = |k: usize, n: usize| -> f64 {
        if width == 0 {
            return 0.0;
        }
        let depth = if k < width {
            width - k
        } else if k + width >= n {
            k + width + 1 - n
        } else {
            0
        };
        let s = depth as f64 / width as f64;
        0.5 * (1.0 - (std::f64::consts::PI * s).cos())
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let ry = ramp(j, ny);
        for i in 0..nx {
            out.push(rate * ramp(i, nx).max(ry));
        }
    }
    out
}

/// Five-point Laplacian scaled by `inv_dx2`; mirrored ghosts unless periodic.
pub fn laplacian_5pt(u: &[f64], nx: usize, ny: usize, inv_dx2: f64, periodic: bool, out: &mut [f64]) {
    for j in 0..ny {
        let (jm, jp) = if periodic {
            ((j + ny - 1) % ny, (j + 1) % ny)
        } else {
            (j.saturating_sub(1), (j + 1).min(ny - 1))
        };
        let row = &u[j * nx..(j + 1) * nx];
        let up = &u[jm * nx..(jm + 1) * nx];
        let dn = &u[jp * nx..(jp + 1) * nx];
        let o = &mut out[j * nx..(j + 1) * nx];
        for i in 1..nx - 1 {
            o[i] = inv_dx2 * (row[i - 1] + row[i + 1] + up[i] + dn[i] - 4.0 * row[i]);
        }
        let (l0, r_last) = if periodic {
            (row[nx - 1], row[0])
        } else {
            (row[0], row[nx - 1])
        };
        o[0] = inv_dx2 * (l0 + row[1] + up[0] + dn[0] - 4.0 * row[0]);
        o[nx - 1] = inv_dx2 * (row[nx - 2] + r_last + up[nx - 1] + dn[nx - 1] - 4.0 * row[nx - 1]);
    }
}

fn check_input(s: &WaveState, cfg: &CoarseSolverConfig) -> Result<()> {
    if s.dims() != cfg.grid.dims() {
        return Err(shape_err("state vs coarse grid", s.dims(), cfg.grid.dims()));
    }
    s.check_finite("coarse solver input")
}

fn run(
    s: &WaveState,
    c: &VelocityModel,
    cfg: &CoarseSolverConfig,
    steps: usize,
    adjoint: bool,
) -> Result<WaveState> {
    check_input(s, cfg)?;
    let op = CoarseOperator::new(c, cfg)?;
    let mut scratch = op.scratch();
    let mut u = s.u.as_slice().to_vec();
    let mut ut = s.ut.as_slice().to_vec();
    for _ in 0..steps {
        if adjoint {
            op.step_adjoint(&mut u, &mut ut, &mut scratch);
        } else {
            op.step(&mut u, &mut ut, &mut scratch);
        }
    }
    let (nx, ny) = cfg.grid.dims();
    WaveState::new(Field::from_vec(nx, ny, u)?, Field::from_vec(nx, ny, ut)?, s.grid)
}

/// One substep of length `cfg.grid.dt`.
pub fn verlet_step(s: &WaveState, c: &VelocityModel, cfg: &CoarseSolverConfig) -> Result<WaveState> {
    run(s, c, cfg, 1, false)
}

/// The coarse macro step: `cfg.substeps` Verlet substeps.
pub fn coarse_propagate(s: &WaveState, c: &VelocityModel, cfg: &CoarseSolverConfig) -> Result<WaveState> {
    run(s, c, cfg, cfg.substeps, false)
}

/// Transpose of [`verlet_step`] in the plain l2 inner product.
pub fn verlet_step_adjoint(sbar: &WaveState, c: &VelocityModel, cfg: &CoarseSolverConfig) -> Result<WaveState> {
    run(sbar, c, cfg, 1, true)
}

/// Transpose of [`coarse_propagate`] in the plain l2 inner product.
pub fn coarse_adjoint(sbar: &WaveState, c: &VelocityModel, cfg: &CoarseSolverConfig) -> Result<WaveState> {
    run(sbar, c, cfg, cfg.substeps, true)
}
