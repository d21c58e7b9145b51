//! Grayscale PNG renders.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use wavecorr::grid::Field;

use crate::manifest::{CliError, CliResult};

/// How values map to 8-bit levels given the scale `m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    /// `128 + 127 v / m`: zero is mid-gray.
    Signed(f64),
    /// `255 v / m` for non-negative fields.
    Unsigned(f64),
}

impl Scale {
    fn level(self, v: f64) -> u8 {
        let (x, m) = match self {
            Scale::Signed(m) => (128.0 + 127.0 * v / m, m),
            Scale::Unsigned(m) => (255.0 * v / m, m),
        };
        if m > 0.0 && x.is_finite() {
            x.round().clamp(0.0, 255.0) as u8
        } else if matches!(self, Scale::Signed(_)) {
            128
        } else {
            0
        }
    }
}

/// Rows are flipped so `y` grows upward; each node is an `s x s` block.
pub fn field_pixels(f: &Field, scale: Scale, s: usize) -> (u32, u32, Vec<u8>) {
    let (nx, ny) = f.dims();
    let s = s.max(1);
    let (w, h) = (nx * s, ny * s);
    let mut px = Vec::with_capacity(w * h);
    for row in 0..h {
        let j = ny - 1 - row / s;
        for col in 0..w {
            px.push(scale.level(f.get(col / s, j)));
        }
    }
    (w as u32, h as u32, px)
}

pub fn write_png(path: &Path, f: &Field, scale: Scale, upscale: usize) -> CliResult<()> {
    let (w, h, px) = field_pixels(f, scale, upscale);
    let file = File::create(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| CliError::io(e.to_string()))?;
    writer.write_image_data(&px).map_err(|e| CliError::io(e.to_string()))?;
    writer.finish().map_err(|e| CliError::io(e.to_string()))
}
