//! Velocity models: closed-form profiles, random crops of geological
//! sections, and their mixture.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec, VelocityModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityKind {
    MarmousiCrop,
    BpCrop,
    DiagonalRay,
    ThreeLayers,
    WaveGuide,
    ModifiedMarmousi,
}

impl VelocityKind {
    pub const ALL: [VelocityKind; 6] = [
        VelocityKind::MarmousiCrop,
        VelocityKind::BpCrop,
        VelocityKind::DiagonalRay,
        VelocityKind::ThreeLayers,
        VelocityKind::WaveGuide,
        VelocityKind::ModifiedMarmousi,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("listed kind")
    }
}

pub const DEFAULT_SOURCE_WEIGHTS: [f64; 6] = [0.3, 0.3, 0.1, 0.1, 0.1, 0.1];
pub const SPEED_BAND: [f64; 2] = [0.25, 4.0];
pub const SLOW_SPEED: f64 = 0.25;

/// Evaluates one of the closed-form profiles at every grid node.
pub fn synth_velocity(kind: VelocityKind, g: &GridSpec) -> Result<VelocityModel> {
    let f: fn(f64, f64) -> f64 = match kind {
        VelocityKind::DiagonalRay => |x, y| 3.0 - 1.5 * iv((x + y).abs() > 0.3),
        VelocityKind::ThreeLayers => |x, y| (2.5 - 0.7 * iv(x + y > -0.4) - 0.7 * 2.0 * iv(x + y > -0.6)).max(SLOW_SPEED),
        VelocityKind::WaveGuide => |x, _| 3.0 - 0.9 * (PI * x).cos(),
        other => return Err(Error::Config(format!("{other:?} has no closed form"))),
    };
    VelocityModel::new(g.field_from_fn(f))
}

fn iv(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// A 2-D speed grid, row-major with `ny` rows of `nx` values.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoSource {
    pub header: GeoHeader,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoHeader {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx_meters: Option<f64>,
    #[serde(default)]
    pub unit_note: String,
}

impl GeoSource {
    pub fn new(header: GeoHeader, data: Vec<f64>) -> Result<Self> {
        if header.nx < 2 || header.ny < 2 || data.len() != header.nx * header.ny {
            return Err(Error::Ingestion(format!(
                "{}: {}x{} grid with {} values",
                header.name,
                header.nx,
                header.ny,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Ingestion(format!("{}: non-positive or non-finite speed {v}", header.name)));
        }
        Ok(GeoSource { header, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.header.nx + i]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }

    /// Reads `<stem>.json` and the sibling `<stem>.bin` of little-endian doubles.
    pub fn read(json: &Path) -> Result<Self> {
        let text = fs::read_to_string(json).map_err(|e| Error::Ingestion(format!("{}: {e}", json.display())))?;
        let header: GeoHeader =
            serde_json::from_str(&text).map_err(|e| Error::Ingestion(format!("{}: {e}", json.display())))?;
        let bin = json.with_extension("bin");
        let bytes = fs::read(&bin).map_err(|e| Error::Ingestion(format!("{}: {e}", bin.display())))?;
        if bytes.len() != header.nx * header.ny * 8 {
            return Err(Error::Ingestion(format!(
                "{}: expected {} bytes, found {}",
                bin.display(),
                header.nx * header.ny * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(header, data)
    }

    pub fn write(&self, json: &Path) -> Result<()> {
        fs::write(json, serde_json::to_string_pretty(&self.header)?)?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(json.with_extension("bin"), bytes)?;
        Ok(())
    }
}

/// Layered, folded and faulted section in m/s (368 x 120 nodes).
pub fn marmousi_standin() -> GeoSource {
    let (nx, ny) = (368, 120);
    let mut data = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = i as f64 / (nx - 1) as f64;
            let z = j as f64 / (ny - 1) as f64;
            let throw = if x > 0.35 && x < 0.65 { 0.08 * (x - 0.35) / 0.3 } else if x >= 0.65 { 0.08 } else { 0.0 };
            let fold = 0.12 * (2.0 * PI * 1.5 * x).sin() * z + 0.05 * (2.0 * PI * 4.0 * x).sin() * z * z;
            let depth = (z + fold - throw).clamp(0.0, 1.2);
            let layer = (depth * 14.0).floor();
            let wobble = 120.0 * (layer * 1.7).sin();
            data.push(1500.0 + 260.0 * layer + wobble + 300.0 * depth);
        }
    }
    let header = GeoHeader {
        name: "marmousi-standin".into(),
        nx,
        ny,
        dx_meters: Some(25.0),
        unit_note: "m/s, procedural stand-in".into(),
    };
    GeoSource::new(header, data).expect("positive speeds")
}

/// Smooth depth gradient with a high-speed salt body (540 x 120 nodes).
pub fn bp_standin() -> GeoSource {
    let (nx, ny) = (540, 120);
    let mut data = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = i as f64 / (nx - 1) as f64;
            let z = j as f64 / (ny - 1) as f64;
            let top = 0.3 + 0.1 * (2.0 * PI * 2.0 * x).cos();
            let salt = ((x - 0.45) / 0.2).powi(2) + ((z - 0.55) / 0.3).powi(2) < 1.0 && z > top;
            let v = if salt {
                4500.0
            } else {
                1500.0 + 2800.0 * z + 150.0 * (2.0 * PI * 3.0 * x + 5.0 * z).sin()
            };
            data.push(v);
        }
    }
    let header = GeoHeader {
        name: "bp-standin".into(),
        nx,
        ny,
        dx_meters: Some(12.5),
        unit_note: "m/s, procedural stand-in".into(),
    };
    GeoSource::new(header, data).expect("positive speeds")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub wx: usize,
    pub wy: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    /// Window size in source nodes; defaults to a square of
    /// `fraction * min(nx, ny)` nodes.
    pub window: Option<[usize; 2]>,
    pub fraction: f64,
    /// Target speed range after rescaling.
    pub band: [f64; 2],
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            window: None,
            fraction: 0.75,
            band: SPEED_BAND,
        }
    }
}

impl CropConfig {
    fn window_size(&self, src: &GeoSource) -> Result<[usize; 2]> {
        let (nx, ny) = (src.header.nx, src.header.ny);
        let w = match self.window {
            Some(w) => w,
            None => {
                let side = ((self.fraction * nx.min(ny) as f64).floor() as usize).max(2);
                [side, side]
            }
        };
        if w[0] < 2 || w[1] < 2 || w[0] > nx || w[1] > ny {
            return Err(Error::Ingestion(format!(
                "crop window {}x{} does not fit source {} of {nx}x{ny}",
                w[0], w[1], src.header.name
            )));
        }
        Ok(w)
    }
}

/// Corner-aligned bilinear resampling of a source window onto `n x m` nodes.
pub fn resample_window(src: &GeoSource, win: CropWindow, nx: usize, ny: usize) -> Field {
    let map = |t: usize, n: usize, w: usize| -> f64 {
        if n == 1 {
            0.0
        } else {
            t as f64 * (w - 1) as f64 / (n - 1) as f64
        }
    };
    Field::from_fn(nx, ny, |i, j| {
        let sx = win.x0 as f64 + map(i, nx, win.wx);
        let sy = win.y0 as f64 + map(j, ny, win.wy);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let x1 = (x0 + 1).min(src.header.nx - 1);
        let y1 = (y0 + 1).min(src.header.ny - 1);
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let r0 = (1.0 - fx) * src.get(x0, y0) + fx * src.get(x1, y0);
        let r1 = (1.0 - fx) * src.get(x0, y1) + fx * src.get(x1, y1);
        (1.0 - fy) * r0 + fy * r1
    })
}

/// Uniformly placed window, resampled onto `g` and mapped linearly from the
/// source's global speed range into `cfg.band`.
pub fn crop_velocity<R: Rng + ?Sized>(src: &GeoSource, rng: &mut R, g: &GridSpec, cfg: &CropConfig) -> Result<(VelocityModel, CropWindow)> {
    let [wx, wy] = cfg.window_size(src)?;
    let win = CropWindow {
        x0: rng.gen_range(0..=src.header.nx - wx),
        y0: rng.gen_range(0..=src.header.ny - wy),
        wx,
        wy,
    };
    let f = resample_window(src, win, g.nx, g.ny);
    let (lo, hi) = src.min_max();
    let f = if hi > lo {
        let [a, b] = cfg.band;
        f.map(|v| a + (v - lo) / (hi - lo) * (b - a))
    } else {
        f
    };
    Ok((VelocityModel::new(f)?, win))
}

/// Axis-aligned region in physical coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for Rect {
    fn default() -> Self {
        Rect {
            x: [0.0, 0.5],
            y: [-0.25, 0.25],
        }
    }
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x[0] && x <= self.x[1] && y >= self.y[0] && y <= self.y[1]
    }
}

/// Sets `c = 0.25` inside `rect`.
pub fn overwrite_rect(c: &VelocityModel, g: &GridSpec, rect: &Rect) -> Result<VelocityModel> {
    let f = c.field();
    VelocityModel::new(Field::from_fn(g.nx, g.ny, |i, j| {
        if rect.contains(g.x(i), g.y(j)) {
            SLOW_SPEED
        } else {
            f.get(i, j)
        }
    }))
}

/// Where the velocity sources come from and how they are mixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub weights: [f64; 6],
    /// Header of an ingested Marmousi grid; a procedural stand-in otherwise.
    pub marmousi: Option<PathBuf>,
    pub bp: Option<PathBuf>,
    pub crop: CropConfig,
    pub slow_region: Rect,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            weights: DEFAULT_SOURCE_WEIGHTS,
            marmousi: None,
            bp: None,
            crop: CropConfig::default(),
            slow_region: Rect::default(),
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("source weights {:?} must be non-negative and sum to 1", self.weights)));
        }
        let [a, b] = self.crop.band;
        if !(a > 0.0 && b >= a) {
            return Err(Error::Config(format!("speed band {:?} must be positive and ordered", self.crop.band)));
        }
        Ok(())
    }
}

/// Provenance of one sampled velocity model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityMeta {
    pub kind: VelocityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropWindow>,
}

pub struct VelocitySampler {
    cfg: SourceConfig,
    dist: WeightedIndex<f64>,
    marmousi: Arc<GeoSource>,
    bp: Arc<GeoSource>,
}

impl VelocitySampler {
    pub fn new(cfg: SourceConfig) -> Result<Self> {
        cfg.validate()?;
        let load = |p: &Option<PathBuf>, fallback: fn() -> GeoSource| -> Result<Arc<GeoSource>> {
            Ok(Arc::new(match p {
                Some(p) => GeoSource::read(p)?,
                None => fallback(),
            }))
        };
        Ok(VelocitySampler {
            dist: WeightedIndex::new(cfg.weights).map_err(|e| Error::Config(format!("source weights: {e}")))?,
            marmousi: load(&cfg.marmousi, marmousi_standin)?,
            bp: load(&cfg.bp, bp_standin)?,
            cfg,
        })
    }

    pub fn sample_kind(&self, rng: &mut impl Rng) -> VelocityKind {
        VelocityKind::ALL[self.dist.sample(rng)]
    }

    pub fn sample(&self, rng: &mut impl Rng, g: &GridSpec) -> Result<(VelocityModel, VelocityMeta)> {
        let kind = self.sample_kind(rng);
        self.build(kind, rng, g)
    }

    pub fn build(&self, kind: VelocityKind, rng: &mut impl Rng, g: &GridSpec) -> Result<(VelocityModel, VelocityMeta)> {
        let crop = |src: &GeoSource, rng: &mut dyn rand::RngCore| -> Result<(VelocityModel, VelocityMeta)> {
            let (c, win) = crop_velocity(src, rng, g, &self.cfg.crop)?;
            Ok((
                c,
                VelocityMeta {
                    kind,
                    source: Some(src.header.name.clone()),
                    crop: Some(win),
                },
            ))
        };
        match kind {
            VelocityKind::MarmousiCrop => crop(&self.marmousi, rng),
            VelocityKind::BpCrop => crop(&self.bp, rng),
            VelocityKind::ModifiedMarmousi => {
                let (c, meta) = crop(&self.marmousi, rng)?;
                Ok((overwrite_rect(&c, g, &self.cfg.slow_region)?, meta))
            }
            _ => Ok((
                synth_velocity(kind, g)?,
                VelocityMeta {
                    kind,
                    source: None,
                    crop: None,
                },
            )),
        }
    }
}
