//! Forward and backward kernels for the layer types used by the network.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::linalg::{gemm_ld, Mat};
use crate::transfer::bilinear_taps;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// 3x3 convolution with padding 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0 || self.in_channels % g != 0 || self.out_channels % g != 0 {
            return Err(Error::Config(format!(
                "channels {} -> {} not divisible by groups {g}",
                self.in_channels, self.out_channels
            )));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::Config(format!("stride {} not in {{1, 2}}", self.stride)));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels / self.groups, 3, 3]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * 9
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }
}

/// Output columns `ox` whose tap `kx` lands inside a row of width `w`.
fn valid_cols(kx: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kx == 0 { 1 } else { 0 };
    // largest ox with ox * stride + kx - 1 <= w - 1
    let hi = ((w + 1 - kx) / stride + usize::from((w + 1 - kx) % stride != 0)).min(wo);
    (lo, hi.max(lo))
}

/// Output rows `rows` of a convolution over `cin` planes of size `h x w`.
#[derive(Clone, Copy)]
struct Window {
    cin: usize,
    h: usize,
    w: usize,
    stride: usize,
    wo: usize,
    rows: (usize, usize),
}

impl Window {
    fn p(&self) -> usize {
        (self.rows.1 - self.rows.0) * self.wo
    }
}

/// Gathers the 3x3 neighbourhoods of the window's output pixels into a
/// `[cin * 9, p]` matrix.
fn im2col(x: &[f64], win: Window, cols: &mut [f64]) {
    let Window { cin, h, w, stride, wo, rows } = win;
    let p = win.p();
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let (lo, hi) = valid_cols(kx, stride, w, wo);
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in rows.0..rows.1 {
                    let iy = (oy * stride + ky) as isize - 1;
                    let r = oy - rows.0;
                    let dst = &mut row[r * wo..(r + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    if stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[lo + kx - 1..hi + kx - 1]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src[ox * stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add transpose of [`im2col`].
fn col2im(cols: &[f64], win: Window, x: &mut [f64]) {
    let Window { cin, h, w, stride, wo, rows } = win;
    let p = win.p();
    for ci in 0..cin {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let (lo, hi) = valid_cols(kx, stride, w, wo);
                let row = &cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in rows.0..rows.1 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let r = oy - rows.0;
                    let src = &row[r * wo..(r + 1) * wo];
                    if stride == 1 {
                        for (d, s) in dst[lo + kx - 1..hi + kx - 1].iter_mut().zip(&src[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox * stride + kx - 1] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output pixels gathered per im2col tile; keeps the column buffer in cache.
const TILE_PIXELS: usize = 256;

fn row_tiles(ho: usize, wo: usize) -> impl Iterator<Item = (usize, usize)> {
    let step = (TILE_PIXELS / wo.max(1)).max(1);
    (0..ho).step_by(step).map(move |r| (r, (r + step).min(ho)))
}

/// Output channels per group below which the direct kernels beat im2col.
const DIRECT_MAX_OUT: usize = 4;

fn use_direct(spec: &ConvSpec) -> bool {
    spec.stride == 1 && spec.out_channels / spec.groups <= DIRECT_MAX_OUT
}

/// Valid `(output row range, input row offset)` pairs for each tap row `ky`
/// with stride 1, and similarly for columns.
fn shifted_range(k: usize, n: usize) -> (usize, usize) {
    let lo = usize::from(k == 0);
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi)
}

/// Stride-1 convolution by shifted row updates.
fn direct_forward(x: &[f64], w8: &[f64], cin_g: usize, h: usize, w: usize, out: &mut [f64]) {
    for ci in 0..cin_g {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            let (ylo, yhi) = shifted_range(ky, h);
            for kx in 0..3 {
                let wv = w8[ci * 9 + ky * 3 + kx];
                let (xlo, xhi) = shifted_range(kx, w);
                for oy in ylo..yhi {
                    let src = &plane[(oy + ky - 1) * w + xlo + kx - 1..(oy + ky - 1) * w + xhi + kx - 1];
                    let dst = &mut out[oy * w + xlo..oy * w + xhi];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
}

/// Transpose of [`direct_forward`] with respect to the input and the kernel.
fn direct_backward(x: &[f64], w8: &[f64], dy: &[f64], cin_g: usize, h: usize, w: usize, dw8: &mut [f64], dx: &mut [f64]) {
    for ci in 0..cin_g {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        let dplane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            let (ylo, yhi) = shifted_range(ky, h);
            for kx in 0..3 {
                let wv = w8[ci * 9 + ky * 3 + kx];
                let (xlo, xhi) = shifted_range(kx, w);
                let mut acc = [0.0; 4];
                for oy in ylo..yhi {
                    let off = (oy + ky - 1) * w + xlo + kx - 1;
                    let g = &dy[oy * w + xlo..oy * w + xhi];
                    let src = &plane[off..off + g.len()];
                    let (ga, sa) = (g.chunks_exact(4), src.chunks_exact(4));
                    for (r, (a, b)) in ga.remainder().iter().zip(sa.remainder()).enumerate() {
                        acc[r] += a * b;
                    }
                    for (a, b) in ga.zip(sa) {
                        for l in 0..4 {
                            acc[l] += a[l] * b[l];
                        }
                    }
                    for (d, a) in dplane[off..off + g.len()].iter_mut().zip(g) {
                        *d += wv * a;
                    }
                }
                dw8[ci * 9 + ky * 3 + kx] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
            }
        }
    }
}

pub fn conv2d_forward(x: &Tensor4, spec: &ConvSpec, weight: &[f64], bias: Option<&[f64]>) -> Result<Tensor4> {
    spec.validate()?;
    let [n, cin, h, w] = x.dims();
    if cin != spec.in_channels {
        return Err(Error::ShapeMismatch(format!("conv expects {} channels, got {cin}", spec.in_channels)));
    }
    if weight.len() != spec.weight_shape().iter().product::<usize>() {
        return Err(Error::ShapeMismatch(format!("conv weight has {} values", weight.len())));
    }
    let (ho, wo) = spec.out_hw(h, w);
    let (g, cout) = (spec.groups, spec.out_channels);
    let (cin_g, cout_g) = (cin / g, cout / g);
    let k = cin_g * 9;
    let p = ho * wo;
    let mut out = Tensor4::zeros([n, cout, ho, wo]);
    let direct = use_direct(spec);
    let mut cols = if direct { Vec::new() } else { vec![0.0; k * TILE_PIXELS.max(wo)] };
    for b in 0..n {
        let xs = x.sample(b);
        let os = out.sample_mut(b);
        for gi in 0..g {
            if direct {
                for co in gi * cout_g..(gi + 1) * cout_g {
                    direct_forward(&xs[gi * cin_g * h * w..], &weight[co * k..(co + 1) * k], cin_g, h, w, &mut os[co * p..(co + 1) * p]);
                }
                continue;
            }
            let wg = Mat::new(&weight[gi * cout_g * k..], k, false);
            for rows in row_tiles(ho, wo) {
                let win = Window {
                    cin: cin_g,
                    h,
                    w,
                    stride: spec.stride,
                    wo,
                    rows,
                };
                let tp = win.p();
                im2col(&xs[gi * cin_g * h * w..], win, &mut cols);
                let c = &mut os[gi * cout_g * p + rows.0 * wo..];
                gemm_ld(cout_g, k, tp, 1.0, wg, Mat::new(&cols, tp, false), 0.0, c, p);
            }
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                os[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Accumulates weight and bias gradients; returns the input cotangent.
pub fn conv2d_backward(
    x: &Tensor4,
    spec: &ConvSpec,
    weight: &[f64],
    dy: &[f64],
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
) -> Vec<f64> {
    let [n, cin, h, w] = x.dims();
    let (ho, wo) = spec.out_hw(h, w);
    let (g, cout) = (spec.groups, spec.out_channels);
    let (cin_g, cout_g) = (cin / g, cout / g);
    let k = cin_g * 9;
    let p = ho * wo;
    let mut dx = vec![0.0; x.len()];
    let direct = use_direct(spec);
    let tile = if direct { 0 } else { TILE_PIXELS.max(wo) };
    let mut cols = vec![0.0; k * tile];
    let mut dcols = vec![0.0; k * tile];
    let sample_out = cout * p;
    let sample_in = cin * h * w;
    for b in 0..n {
        let xs = x.sample(b);
        let dys = &dy[b * sample_out..(b + 1) * sample_out];
        let dxs = &mut dx[b * sample_in..(b + 1) * sample_in];
        for gi in 0..g {
            if direct {
                for co in gi * cout_g..(gi + 1) * cout_g {
                    direct_backward(
                        &xs[gi * cin_g * h * w..],
                        &weight[co * k..(co + 1) * k],
                        &dys[co * p..(co + 1) * p],
                        cin_g,
                        h,
                        w,
                        &mut dweight[co * k..(co + 1) * k],
                        &mut dxs[gi * cin_g * h * w..],
                    );
                }
                continue;
            }
            let wg = Mat::new(&weight[gi * cout_g * k..], k, true);
            for rows in row_tiles(ho, wo) {
                let win = Window {
                    cin: cin_g,
                    h,
                    w,
                    stride: spec.stride,
                    wo,
                    rows,
                };
                let tp = win.p();
                let dyg = Mat::new(&dys[gi * cout_g * p + rows.0 * wo..], p, false);
                im2col(&xs[gi * cin_g * h * w..], win, &mut cols);
                let dwg = &mut dweight[gi * cout_g * k..];
                gemm_ld(cout_g, tp, k, 1.0, dyg, Mat::new(&cols, tp, true), 1.0, dwg, k);
                gemm_ld(k, cout_g, tp, 1.0, wg, dyg, 0.0, &mut dcols, tp);
                col2im(&dcols, win, &mut dxs[gi * cin_g * h * w..]);
            }
        }
    }
    if let Some(db) = dbias {
        for b in 0..n {
            for (co, d) in db.iter_mut().enumerate() {
                *d += dy[b * sample_out + co * p..][..p].iter().sum::<f64>();
            }
        }
    }
    dx
}

/// Batch-normalisation statistic source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with the batch statistics; optionally fold them into the
    /// running averages.
    Batch { update: bool },
    /// Fixed affine map from the running averages.
    Running,
}

/// Values kept from the forward pass for [`batchnorm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

pub struct BnParams<'a> {
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
    pub running_mean: &'a [f64],
    pub running_var: &'a [f64],
}

/// Updated `(running_mean, running_var)`.
pub type RunningStats = (Vec<f64>, Vec<f64>);

/// Returns the output, the backward cache, and the updated running statistics
/// when `mode` is `Batch { update: true }`.
pub fn batchnorm_forward(x: &Tensor4, p: BnParams<'_>, mode: BnMode) -> (Tensor4, BnCache, Option<RunningStats>) {
    let [n, ch, _, _] = x.dims();
    let plane = x.plane();
    let count = (n * plane) as f64;
    let mut inv_std = vec![0.0; ch];
    let mut mean = vec![0.0; ch];
    let mut stats = match mode {
        BnMode::Batch { update: true } => Some((p.running_mean.to_vec(), p.running_var.to_vec())),
        _ => None,
    };
    for c in 0..ch {
        let (m, v) = match mode {
            BnMode::Batch { update } => {
                let m = (0..n).map(|b| x.channel_plane(b, c).iter().sum::<f64>()).sum::<f64>() / count;
                let v = (0..n)
                    .map(|b| x.channel_plane(b, c).iter().map(|a| (a - m) * (a - m)).sum::<f64>())
                    .sum::<f64>()
                    / count;
                if let (true, Some((rm, rv))) = (update, stats.as_mut()) {
                    let unbiased = if count > 1.0 { v * count / (count - 1.0) } else { v };
                    rm[c] = (1.0 - BN_MOMENTUM) * rm[c] + BN_MOMENTUM * m;
                    rv[c] = (1.0 - BN_MOMENTUM) * rv[c] + BN_MOMENTUM * unbiased;
                }
                (m, v)
            }
            BnMode::Running => (p.running_mean[c], p.running_var[c]),
        };
        mean[c] = m;
        inv_std[c] = 1.0 / (v + BN_EPS).sqrt();
    }
    let mut xhat = vec![0.0; x.len()];
    let mut y = Tensor4::zeros(x.dims());
    for b in 0..n {
        for c in 0..ch {
            let o = (b * ch + c) * plane;
            let src = x.channel_plane(b, c);
            for i in 0..plane {
                let xh = (src[i] - mean[c]) * inv_std[c];
                xhat[o + i] = xh;
                y.as_mut_slice()[o + i] = p.gamma[c] * xh + p.beta[c];
            }
        }
    }
    let cache = BnCache {
        xhat,
        inv_std,
        batch_stats: matches!(mode, BnMode::Batch { .. }),
    };
    (y, cache, stats)
}

/// Accumulates `dgamma`, `dbeta` and returns the input cotangent.
pub fn batchnorm_backward(
    dims: [usize; 4],
    cache: &BnCache,
    gamma: &[f64],
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let [n, ch, h, w] = dims;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..ch {
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        for b in 0..n {
            let o = (b * ch + c) * plane;
            for i in o..o + plane {
                sdy += dy[i];
                sdyx += dy[i] * cache.xhat[i];
            }
        }
        dgamma[c] += sdyx;
        dbeta[c] += sdy;
        let gi = gamma[c] * cache.inv_std[c];
        for b in 0..n {
            let o = (b * ch + c) * plane;
            for i in o..o + plane {
                dx[i] = if cache.batch_stats {
                    gi * (dy[i] - sdy / count - cache.xhat[i] * sdyx / count)
                } else {
                    gi * dy[i]
                };
            }
        }
    }
    dx
}

/// Cell-centred bilinear x2 upsampling of every channel plane.
pub fn upsample2x_forward(x: &Tensor4) -> Tensor4 {
    let [n, ch, h, w] = x.dims();
    let tx = bilinear_taps(w, 2);
    let ty = bilinear_taps(h, 2);
    let mut out = Tensor4::zeros([n, ch, 2 * h, 2 * w]);
    for b in 0..n {
        for c in 0..ch {
            let src = x.channel_plane(b, c);
            let dst = out.channel_plane_mut(b, c);
            for (j, &(y0, y1, sy)) in ty.iter().enumerate() {
                for (i, &(x0, x1, sx)) in tx.iter().enumerate() {
                    let r0 = (1.0 - sx) * src[y0 * w + x0] + sx * src[y0 * w + x1];
                    let r1 = (1.0 - sx) * src[y1 * w + x0] + sx * src[y1 * w + x1];
                    dst[j * 2 * w + i] = (1.0 - sy) * r0 + sy * r1;
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward(in_dims: [usize; 4], dy: &[f64]) -> Vec<f64> {
    let [n, ch, h, w] = in_dims;
    let tx = bilinear_taps(w, 2);
    let ty = bilinear_taps(h, 2);
    let mut dx = vec![0.0; n * ch * h * w];
    for bc in 0..n * ch {
        let src = &dy[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        let dst = &mut dx[bc * h * w..(bc + 1) * h * w];
        for (j, &(y0, y1, sy)) in ty.iter().enumerate() {
            for (i, &(x0, x1, sx)) in tx.iter().enumerate() {
                let v = src[j * 2 * w + i];
                dst[y0 * w + x0] += (1.0 - sy) * (1.0 - sx) * v;
                dst[y0 * w + x1] += (1.0 - sy) * sx * v;
                dst[y1 * w + x0] += sy * (1.0 - sx) * v;
                dst[y1 * w + x1] += sy * sx * v;
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat_forward(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, ca, h, w] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch(format!("concat {:?} with {:?}", a.dims(), b.dims())));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor4::from_vec([n, ca + cb, h, w], data)
}

pub fn concat_backward(a_dims: [usize; 4], b_dims: [usize; 4], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let sa = a_dims[1] * a_dims[2] * a_dims[3];
    let sb = b_dims[1] * b_dims[2] * b_dims[3];
    let mut da = Vec::with_capacity(a_dims[0] * sa);
    let mut db = Vec::with_capacity(a_dims[0] * sb);
    for chunk in dy.chunks(sa + sb) {
        da.extend_from_slice(&chunk[..sa]);
        db.extend_from_slice(&chunk[sa..]);
    }
    (da, db)
}
