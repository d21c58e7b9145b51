//! Grid transfer (restriction, bilinear prolongation) and the energy-component
//! transform with its least-squares inverse. All operators are linear and come
//! with their transposes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::gemm;
use crate::grid::{stencil, EnergyComponents, Field, GridSpec, VelocityModel, WaveState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub scale: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { scale: 2 }
    }
}

impl TransferConfig {
    /// Coarse grid matching `fine`. Coarse node `I` sits at the centroid of
    /// its `scale x scale` block of fine nodes.
    pub fn coarse_grid(&self, fine: &GridSpec, coarse_dt: f64) -> Result<GridSpec> {
        let s = self.scale;
        if s == 0 || fine.nx % s != 0 || fine.ny % s != 0 {
            return Err(Error::Config(format!(
                "fine grid {}x{} is not divisible by scale {s}",
                fine.nx, fine.ny
            )));
        }
        let shift = 0.5 * (s as f64 - 1.0) * fine.dx;
        GridSpec::new(
            fine.nx / s,
            fine.ny / s,
            fine.dx * s as f64,
            coarse_dt,
            [fine.origin[0] + shift, fine.origin[1] + shift],
        )
    }
}

/// Block average of a fine field.
pub fn restrict_field(f: &Field, scale: usize) -> Result<Field> {
    let (nx, ny) = f.dims();
    if scale == 0 || nx % scale != 0 || ny % scale != 0 {
        return Err(Error::Config(format!("{nx}x{ny} is not divisible by scale {scale}")));
    }
    let (cx, cy) = (nx / scale, ny / scale);
    let w = 1.0 / (scale * scale) as f64;
    let mut out = vec![0.0; cx * cy];
    let src = f.as_slice();
    for j in 0..ny {
        for i in 0..nx {
            out[(j / scale) * cx + i / scale] += w * src[j * nx + i];
        }
    }
    Field::from_vec(cx, cy, out)
}

/// Transpose of [`restrict_field`].
pub fn restrict_field_adjoint(g: &Field, scale: usize) -> Field {
    let (cx, _) = g.dims();
    let w = 1.0 / (scale * scale) as f64;
    Field::from_fn(g.nx() * scale, g.ny() * scale, |i, j| {
        w * g.as_slice()[(j / scale) * cx + i / scale]
    })
}

/// Interpolation stencil along one axis: fine node `i` reads coarse nodes
/// `(lo, hi)` with weights `(1 - t, t)`; indices are clamped at the edges.
pub(crate) fn bilinear_taps(n_coarse: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..n_coarse * scale)
        .map(|i| {
            let x = (i as f64 + 0.5) / scale as f64 - 0.5;
            let base = x.floor();
            let t = x - base;
            let lo = (base.max(0.0) as usize).min(n_coarse - 1);
            let hi = ((base + 1.0).max(0.0) as usize).min(n_coarse - 1);
            (lo, hi, t)
        })
        .collect()
}

/// Cell-centred bilinear interpolation onto the `scale x` finer grid.
pub fn prolong_field(f: &Field, scale: usize) -> Field {
    let (cx, cy) = f.dims();
    let tx = bilinear_taps(cx, scale);
    let ty = bilinear_taps(cy, scale);
    let src = f.as_slice();
    Field::from_fn(cx * scale, cy * scale, |i, j| {
        let (x0, x1, sx) = tx[i];
        let (y0, y1, sy) = ty[j];
        let row = |y: usize| (1.0 - sx) * src[y * cx + x0] + sx * src[y * cx + x1];
        (1.0 - sy) * row(y0) + sy * row(y1)
    })
}

/// Transpose of [`prolong_field`].
pub fn prolong_field_adjoint(g: &Field, scale: usize) -> Result<Field> {
    let (nx, ny) = g.dims();
    if nx % scale != 0 || ny % scale != 0 {
        return Err(Error::Config(format!("{nx}x{ny} is not divisible by scale {scale}")));
    }
    let (cx, cy) = (nx / scale, ny / scale);
    let tx = bilinear_taps(cx, scale);
    let ty = bilinear_taps(cy, scale);
    let mut out = vec![0.0; cx * cy];
    for j in 0..ny {
        let (y0, y1, sy) = ty[j];
        for i in 0..nx {
            let (x0, x1, sx) = tx[i];
            let v = g.get(i, j);
            out[y0 * cx + x0] += (1.0 - sy) * (1.0 - sx) * v;
            out[y0 * cx + x1] += (1.0 - sy) * sx * v;
            out[y1 * cx + x0] += sy * (1.0 - sx) * v;
            out[y1 * cx + x1] += sy * sx * v;
        }
    }
    Field::from_vec(cx, cy, out)
}

fn coarse_grid_of(s: &WaveState, cfg: &TransferConfig) -> Result<GridSpec> {
    cfg.coarse_grid(&s.grid, s.grid.dt * cfg.scale as f64)
}

/// Fine-to-coarse block averaging of both state components.
pub fn restrict(s: &WaveState, cfg: &TransferConfig) -> Result<WaveState> {
    let g = coarse_grid_of(s, cfg)?;
    WaveState::new(restrict_field(&s.u, cfg.scale)?, restrict_field(&s.ut, cfg.scale)?, g)
}

pub fn restrict_adjoint(sbar: &WaveState, fine: &GridSpec, cfg: &TransferConfig) -> Result<WaveState> {
    WaveState::new(
        restrict_field_adjoint(&sbar.u, cfg.scale),
        restrict_field_adjoint(&sbar.ut, cfg.scale),
        *fine,
    )
}

/// Coarse-to-fine bilinear interpolation of both components onto `fine`.
pub fn prolong_bilinear(s: &WaveState, fine: &GridSpec, cfg: &TransferConfig) -> Result<WaveState> {
    WaveState::new(prolong_field(&s.u, cfg.scale), prolong_field(&s.ut, cfg.scale), *fine)
}

pub fn prolong_bilinear_adjoint(sbar: &WaveState, coarse: &GridSpec, cfg: &TransferConfig) -> Result<WaveState> {
    WaveState::new(
        prolong_field_adjoint(&sbar.u, cfg.scale)?,
        prolong_field_adjoint(&sbar.ut, cfg.scale)?,
        *coarse,
    )
}

pub fn restrict_velocity(c: &VelocityModel, cfg: &TransferConfig) -> Result<VelocityModel> {
    VelocityModel::new(restrict_field(c.field(), cfg.scale)?)
}

/// `(grad u, ut / c^2, mean u)`
pub fn to_energy_components(s: &WaveState, c: &VelocityModel) -> Result<EnergyComponents> {
    if s.dims() != c.dims() {
        return Err(shape_err("state vs velocity", s.dims(), c.dims()));
    }
    let (ux, uy) = stencil::gradient(&s.u, s.grid.dx);
    let w = s.ut.zip_map(c.field(), |v, c| v / (c * c))?;
    EnergyComponents::new(ux, uy, w, s.u.mean())
}

/// Least-squares inverse: `u` minimises `|D u - (ux, uy)|` with mean `mean_u`,
/// and `ut = c^2 w`.
pub fn from_energy_components(e: &EnergyComponents, c: &VelocityModel, grid: &GridSpec) -> Result<WaveState> {
    if e.dims() != c.dims() || e.dims() != grid.dims() {
        return Err(shape_err("energy components vs velocity", e.dims(), c.dims()));
    }
    let pinv = GradientPinv::cached(grid.nx, grid.ny, grid.dx);
    let mut u = pinv.solve(&e.ux, &e.uy);
    u.as_mut_slice().iter_mut().for_each(|v| *v += e.mean_u);
    let ut = e.w.zip_map(c.field(), |w, c| w * c * c)?;
    WaveState::new(u, ut, *grid)
}

/// Transpose of [`to_energy_components`] (the `mean_u` slot included).
pub fn to_energy_components_adjoint(ebar: &EnergyComponents, c: &VelocityModel, grid: &GridSpec) -> Result<WaveState> {
    let mut u = stencil::gradient_adjoint(&ebar.ux, &ebar.uy, grid.dx);
    let m = ebar.mean_u / u.len() as f64;
    u.as_mut_slice().iter_mut().for_each(|v| *v += m);
    let ut = ebar.w.zip_map(c.field(), |w, c| w / (c * c))?;
    WaveState::new(u, ut, *grid)
}

/// Transpose of [`from_energy_components`].
pub fn from_energy_components_adjoint(sbar: &WaveState, c: &VelocityModel) -> Result<EnergyComponents> {
    let g = &sbar.grid;
    let pinv = GradientPinv::cached(g.nx, g.ny, g.dx);
    let (ux, uy) = pinv.solve_adjoint(&sbar.u);
    let w = sbar.ut.zip_map(c.field(), |v, c| v * c * c)?;
    EnergyComponents::new(ux, uy, w, sbar.u.sum())
}

/// Moore-Penrose inverse of the stacked gradient `D = (Dx, Dy)`, restricted to
/// mean-free fields. `D^T D = I (x) Ax + Ay (x) I` is diagonalised once per grid
/// from the eigen-decompositions of the 1-D normal matrices.
pub struct GradientPinv {
    nx: usize,
    ny: usize,
    dx: f64,
    vx: Vec<f64>,
    vy: Vec<f64>,
    inv_eig: Vec<f64>,
}

type PinvKey = (usize, usize, u64);

impl GradientPinv {
    pub fn new(nx: usize, ny: usize, dx: f64) -> Self {
        let (vx, lx) = normal_eigen(nx, dx);
        let (vy, ly) = normal_eigen(ny, dx);
        // the single zero eigenvalue of each 1-D operator belongs to the constants
        let zx = argmin(&lx);
        let zy = argmin(&ly);
        let mut inv_eig = vec![0.0; nx * ny];
        for b in 0..ny {
            for a in 0..nx {
                if a == zx && b == zy {
                    continue;
                }
                inv_eig[b * nx + a] = 1.0 / (lx[a] + ly[b]);
            }
        }
        GradientPinv {
            nx,
            ny,
            dx,
            vx,
            vy,
            inv_eig,
        }
    }

    pub fn cached(nx: usize, ny: usize, dx: f64) -> Arc<GradientPinv> {
        static CACHE: OnceLock<Mutex<HashMap<PinvKey, Arc<GradientPinv>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let key = (nx, ny, dx.to_bits());
        if let Some(p) = cache.lock().expect("pinv cache").get(&key) {
            return Arc::clone(p);
        }
        let p = Arc::new(GradientPinv::new(nx, ny, dx));
        cache
            .lock()
            .expect("pinv cache")
            .entry(key)
            .or_insert(p)
            .clone()
    }

    /// `(D^T D)^+ r` followed by removal of the mean.
    fn normal_solve(&self, r: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        // R is ny x nx; spectral coefficients C = Vy^T R Vx
        let mut t = vec![0.0; nx * ny];
        gemm(ny, nx, nx, r, false, &self.vx, false, &mut t);
        let mut coef = vec![0.0; nx * ny];
        gemm(ny, ny, nx, &self.vy, true, &t, false, &mut coef);
        for (c, s) in coef.iter_mut().zip(&self.inv_eig) {
            *c *= s;
        }
        gemm(ny, ny, nx, &self.vy, false, &coef, false, &mut t);
        let mut out = vec![0.0; nx * ny];
        gemm(ny, nx, nx, &t, false, &self.vx, true, &mut out);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v -= mean);
        out
    }

    pub fn solve(&self, gx: &Field, gy: &Field) -> Field {
        let r = stencil::gradient_adjoint(gx, gy, self.dx);
        Field::from_vec(self.nx, self.ny, self.normal_solve(r.as_slice())).expect("shape")
    }

    pub fn solve_adjoint(&self, ubar: &Field) -> (Field, Field) {
        // mean removal is symmetric, so projecting the input first is equivalent
        let mean = ubar.mean();
        let centred: Vec<f64> = ubar.as_slice().iter().map(|v| v - mean).collect();
        let v = Field::from_vec(self.nx, self.ny, self.normal_solve(&centred)).expect("shape");
        stencil::gradient(&v, self.dx)
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &x)| if x < bv { (i, x) } else { (bi, bv) })
        .0
}

/// Eigenvectors (row-major `n x n`, columns are vectors) and eigenvalues of
/// `d^T d` for the 1-D gradient stencil.
fn normal_eigen(n: usize, dx: f64) -> (Vec<f64>, Vec<f64>) {
    let mut d = DMatrix::<f64>::zeros(n, n);
    let h = 0.5 / dx;
    d[(0, 0)] = -3.0 * h;
    d[(0, 1)] = 4.0 * h;
    d[(0, 2)] = -h;
    for k in 1..n - 1 {
        d[(k, k - 1)] = -h;
        d[(k, k + 1)] = h;
    }
    d[(n - 1, n - 1)] = 3.0 * h;
    d[(n - 1, n - 2)] = -4.0 * h;
    d[(n - 1, n - 3)] = h;
    let a = d.transpose() * &d;
    let eig = SymmetricEigen::new(a);
    let mut v = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            v[r * n + c] = eig.eigenvectors[(r, c)];
        }
    }
    (v, eig.eigenvalues.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fine_grid(n: usize) -> GridSpec {
        GridSpec::unit_square(n, 0.001).unwrap()
    }

    #[test]
    fn restriction_preserves_constants_and_zero() {
        let f = Field::constant(8, 6, 2.5);
        let r = restrict_field(&f, 2).unwrap();
        assert_eq!(r, Field::constant(4, 3, 2.5));
        assert_eq!(restrict_field(&Field::zeros(8, 8), 2).unwrap(), Field::zeros(4, 4));
    }

    #[test]
    fn indivisible_dims_are_rejected() {
        assert!(matches!(restrict_field(&Field::zeros(9, 8), 2), Err(Error::Config(_))));
    }

    #[test]
    fn prolongation_reproduces_ramps_in_the_interior() {
        let fine = fine_grid(16);
        let cfg = TransferConfig::default();
        let coarse = cfg.coarse_grid(&fine, 0.0).unwrap();
        let cu = coarse.field_from_fn(|x, _| x);
        let fu = prolong_field(&cu, 2);
        for j in 0..16 {
            for i in 1..15 {
                assert!((fu.get(i, j) - fine.x(i)).abs() < 1e-14);
            }
        }
        assert_eq!(prolong_field(&Field::constant(4, 4, -1.5), 2), Field::constant(8, 8, -1.5));
    }

    #[test]
    fn prolong_then_restrict_preserves_ramps() {
        let fine = fine_grid(16);
        let coarse = TransferConfig::default().coarse_grid(&fine, 0.0).unwrap();
        let cu = coarse.field_from_fn(|x, y| 0.5 * x - 2.0 * y + 1.0);
        let back = restrict_field(&prolong_field(&cu, 2), 2).unwrap();
        for j in 1..7 {
            for i in 1..7 {
                assert!((back.get(i, j) - cu.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn prolong_after_restrict_is_not_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Field::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let back = prolong_field(&restrict_field(&f, 2).unwrap(), 2);
        assert!(back.zip_map(&f, |a, b| a - b).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn energy_components_of_constant_and_ramp() {
        let g = fine_grid(10);
        let c = VelocityModel::constant(10, 10, 2.0).unwrap();
        let s = WaveState::new(Field::constant(10, 10, 3.0), Field::zeros(10, 10), g).unwrap();
        let e = to_energy_components(&s, &c).unwrap();
        assert!(e.ux.max_abs() < 1e-14 && e.uy.max_abs() < 1e-14 && e.w.max_abs() == 0.0);
        assert!((e.mean_u - 3.0).abs() < 1e-15);

        let ramp = WaveState::new(g.field_from_fn(|x, _| x), Field::zeros(10, 10), g).unwrap();
        let e = to_energy_components(&ramp, &c).unwrap();
        assert!(e.ux.map(|v| v - 1.0).max_abs() < 1e-12);
        assert!(e.uy.max_abs() < 1e-12);
    }

    #[test]
    fn zero_components_with_mean_give_constant_state() {
        let g = fine_grid(12);
        let c = VelocityModel::constant(12, 12, 1.3).unwrap();
        let mut e = EnergyComponents::zeros(12, 12);
        e.mean_u = 5.0;
        let s = from_energy_components(&e, &c, &g).unwrap();
        assert!(s.u.map(|v| v - 5.0).max_abs() < 1e-12);
        assert_eq!(s.ut.max_abs(), 0.0);
    }

    #[test]
    fn pseudo_inverse_round_trips_smooth_states() {
        let g = fine_grid(64);
        let c = VelocityModel::new(g.field_from_fn(|x, y| 2.0 + 0.5 * (x - y).sin())).unwrap();
        let s = WaveState::new(
            g.field_from_fn(|x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos() + 0.2),
            g.field_from_fn(|x, y| (x * y).cos()),
            g,
        )
        .unwrap();
        let back = from_energy_components(&to_energy_components(&s, &c).unwrap(), &c, &g).unwrap();
        let err = back.max_abs_diff(&s).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn adjoint_pairings_of_the_energy_transform() {
        let g = fine_grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut rf = || Field::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let c = VelocityModel::new(rf().map(|v| 1.5 + 0.5 * v)).unwrap();
        let s = WaveState::new(rf(), rf(), g).unwrap();
        let e = EnergyComponents::new(rf(), rf(), rf(), 0.7).unwrap();
        let edot = |a: &EnergyComponents, b: &EnergyComponents| {
            a.ux.dot(&b.ux).unwrap() + a.uy.dot(&b.uy).unwrap() + a.w.dot(&b.w).unwrap() + a.mean_u * b.mean_u
        };
        let lhs = edot(&to_energy_components(&s, &c).unwrap(), &e);
        let rhs = s.dot(&to_energy_components_adjoint(&e, &c, &g).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

        let lhs = from_energy_components(&e, &c, &g).unwrap().dot(&s).unwrap();
        let rhs = edot(&e, &from_energy_components_adjoint(&s, &c).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }
}
