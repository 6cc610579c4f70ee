//! Shared raster helpers: grayscale images, bilinear sampling, resampling.

use crate::error::{Error, Result};

/// Single-channel f32 raster, row-major, intensities nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayF32 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayF32 {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::validation(format!(
                "image buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        bilinear_clamped(&self.data, self.width, self.height, x, y)
    }
}

/// Bilinear interpolation over a single-channel buffer, clamping at borders.
pub fn bilinear_clamped(data: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let xc = x.clamp(0.0, (width - 1) as f32);
    let yc = y.clamp(0.0, (height - 1) as f32);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let tx = xc - x0 as f32;
    let ty = yc - y0 as f32;
    let v00 = data[y0 * width + x0];
    let v10 = data[y0 * width + x1];
    let v01 = data[y1 * width + x0];
    let v11 = data[y1 * width + x1];
    v00 * (1.0 - tx) * (1.0 - ty)
        + v10 * tx * (1.0 - ty)
        + v01 * (1.0 - tx) * ty
        + v11 * tx * ty
}

/// Box-filter downsample by an integer factor. Dimensions must divide evenly.
pub fn box_downsample(img: &GrayF32, factor: usize) -> Result<GrayF32> {
    if factor == 0 || img.width % factor != 0 || img.height % factor != 0 {
        return Err(Error::validation(format!(
            "image {}x{} not divisible by downsample factor {}",
            img.width, img.height, factor
        )));
    }
    let w = img.width / factor;
    let h = img.height / factor;
    let mut out = GrayF32::new(w, h);
    let norm = 1.0 / (factor * factor) as f32;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += img.at(x * factor + dx, y * factor + dy);
                }
            }
            out.set(x, y, acc * norm);
        }
    }
    Ok(out)
}

/// Bilinear upsample of a single-channel buffer by an integer factor, with
/// pixel-center alignment. Values are interpolated, not scaled.
pub fn upsample_bilinear(data: &[f32], width: usize, height: usize, factor: usize) -> Vec<f32> {
    let ow = width * factor;
    let oh = height * factor;
    let mut out = vec![0.0f32; ow * oh];
    let inv = 1.0 / factor as f32;
    for y in 0..oh {
        let sy = (y as f32 + 0.5) * inv - 0.5;
        for x in 0..ow {
            let sx = (x as f32 + 0.5) * inv - 0.5;
            out[y * ow + x] = bilinear_clamped(data, width, height, sx, sy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_constant_is_constant() {
        let img = GrayF32::from_vec(8, 8, vec![0.25; 64]).unwrap();
        let q = box_downsample(&img, 4).unwrap();
        assert_eq!(q.width, 2);
        assert_eq!(q.height, 2);
        assert!(q.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let img = GrayF32::new(10, 8);
        assert!(box_downsample(&img, 4).is_err());
    }

    #[test]
    fn bilinear_at_lattice_is_exact() {
        let img = GrayF32::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(img.sample(0.0, 0.0), 1.0);
        assert_eq!(img.sample(1.0, 1.0), 4.0);
        assert!((img.sample(0.5, 0.0) - 1.5).abs() < 1e-7);
    }

    #[test]
    fn upsample_constant_is_constant() {
        let up = upsample_bilinear(&[2.0; 6], 3, 2, 4);
        assert_eq!(up.len(), 12 * 8);
        assert!(up.iter().all(|&v| (v - 2.0).abs() < 1e-6));
    }
}
