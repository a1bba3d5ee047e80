//! Signed heatmap overlays on raster images.

use crate::shapes::IMAGE_SIZE;
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

/// Strongest blend applied at the heatmap's peak magnitude.
pub const DEFAULT_MAX_ALPHA: f64 = 0.6;

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn from_image(image: &Tensor) -> Raster {
        assert_eq!(image.shape(), [IMAGE_SIZE, IMAGE_SIZE, 3]);
        Raster {
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            pixels: image.data().iter().map(|v| (255.0 * v).round().clamp(0.0, 255.0) as u8).collect(),
        }
    }

    /// Binary portable pixel-map encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save_ppm(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ppm())
    }
}

/// Alpha-blend a signed heatmap over an image: positive values blend green
/// (support), negative values blend red (attack). Alpha scales with
/// |value| / max|value| up to `max_alpha`; an all-zero heatmap passes the
/// image through untouched.
pub fn render_overlay(image: &Tensor, heatmap: &Tensor, max_alpha: f64) -> Raster {
    assert_eq!(heatmap.shape(), [IMAGE_SIZE, IMAGE_SIZE]);
    let base = Raster::from_image(image);
    let peak = heatmap.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return base;
    }

    let mut pixels = base.pixels;
    for (i, &v) in heatmap.data().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let alpha = max_alpha * v.abs() / peak;
        let overlay: [f64; 3] = if v > 0.0 { [0.0, 255.0, 0.0] } else { [255.0, 0.0, 0.0] };
        for (c, &ov) in overlay.iter().enumerate() {
            let p = &mut pixels[i * 3 + c];
            *p = ((1.0 - alpha) * *p as f64 + alpha * ov).round().clamp(0.0, 255.0) as u8;
        }
    }
    Raster { width: IMAGE_SIZE, height: IMAGE_SIZE, pixels }
}
