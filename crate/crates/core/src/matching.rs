//! Matching features and on-the-fly correlation cost.
//!
//! Images are reduced to quarter-resolution descriptor maps: ternary census
//! bits over a small window plus intensity gradients, per-pixel L2
//! normalized so that feature correlation is a cosine similarity in [-1, 1].
//! Cost is never materialized as a full volume; [`lookup_window`] evaluates
//! a handful of correlation samples around the current disparity hypothesis
//! per pixel, which is what keeps per-frame refinement cheap.
//!
//! The extractor is deliberately simple and fully deterministic, and
//! externally computed feature maps can be injected through the FMAP file
//! hook ([`save_features`] / [`load_features`]).

use crate::error::{Error, Result};
use crate::grid::{box_downsample, GrayF32};
use crate::warp::DisparityMap;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

/// Marker value for correlation samples whose right-image coordinate falls
/// outside the feature map.
pub const COST_SENTINEL: f32 = f32::NEG_INFINITY;

/// Images are reduced by this factor before feature extraction.
pub const FEATURE_SCALE: usize = 4;

/// Census saturation gain: intensity differences of ~0.2 count as a full
/// ordering bit, smaller ones grade toward zero.
const CENSUS_GAIN: f32 = 12.0;

/// Feature extractor settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Census window half-size; window side = 2*radius + 1.
    pub census_radius: usize,
    /// Keep only every other census channel (fast mode).
    pub half_channels: bool,
    /// Per-pixel L2 normalization.
    pub normalize: bool,
    /// Edge-weight falloff scale for context maps.
    pub sigma_edge: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { census_radius: 2, half_channels: false, normalize: true, sigma_edge: 0.1 }
    }
}

impl FeatureConfig {
    /// Number of feature channels this configuration produces.
    pub fn channels(&self) -> usize {
        let side = 2 * self.census_radius + 1;
        let neighbors = side * side - 1;
        let census = if self.half_channels { neighbors.div_ceil(2) } else { neighbors };
        census + 2
    }
}

/// Per-pixel matching descriptor map at 1/4 working resolution.
///
/// Layout is channel-fastest: `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    /// Feature vector at a pixel.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Conditioning features plus a smoothness edge weight per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Channel-fastest, same layout as [`FeatureMap`].
    pub data: Vec<f32>,
    /// `exp(-|grad I| / sigma_edge)`, in (0, 1]; low on intensity edges.
    pub edge: Vec<f32>,
}

impl ContextMap {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn edge_at(&self, x: usize, y: usize) -> f32 {
        self.edge[y * self.width + x]
    }
}

/// Correlation samples around the disparity hypothesis, K per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSlice {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// Sample disparities after clamping, `[(y*w + x)*k + s]`.
    pub disparities: Vec<f32>,
    /// Correlation per sample, or [`COST_SENTINEL`] out of range.
    pub values: Vec<f32>,
}

impl CostSlice {
    /// Samples for one pixel: (disparities, values).
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (&[f32], &[f32]) {
        let i = (y * self.width + x) * self.k;
        (&self.disparities[i..i + self.k], &self.values[i..i + self.k])
    }
}

fn quarter(image: &GrayF32) -> Result<GrayF32> {
    box_downsample(image, FEATURE_SCALE)
}

#[inline]
fn clamped(img: &GrayF32, x: i64, y: i64) -> f32 {
    let xc = x.clamp(0, img.width as i64 - 1) as usize;
    let yc = y.clamp(0, img.height as i64 - 1) as usize;
    img.at(xc, yc)
}

/// Saturating census + gradient descriptors at 1/4 resolution.
///
/// Census bits are `tanh(gain * (center - neighbor))` over the window:
/// clear intensity orderings saturate to ±1 like a hard ternary census,
/// while near-ties grade smoothly through zero instead of flipping between
/// full bits on sub-noise differences. That keeps the correlation of
/// bilinearly interpolated features smooth in sub-pixel shift, which the
/// parabola peak refinement depends on. Gradients are x/y central
/// differences. With normalization the per-pixel vector has unit L2 norm
/// (all-zero vectors, e.g. in constant regions, stay zero).
pub fn extract_features(image: &GrayF32, cfg: &FeatureConfig) -> Result<FeatureMap> {
    let q = quarter(image)?;
    let side = 2 * cfg.census_radius + 1;
    if q.width < side || q.height < side {
        return Err(Error::validation(format!(
            "feature image {}x{} smaller than census window {side}",
            q.width, q.height
        )));
    }
    let r = cfg.census_radius as i64;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx != 0 || dy != 0 {
                offsets.push((dx, dy));
            }
        }
    }
    if cfg.half_channels {
        offsets = offsets.into_iter().step_by(2).collect();
    }
    let channels = offsets.len() + 2;
    debug_assert_eq!(channels, cfg.channels());

    let mut map = FeatureMap::new(q.width, q.height, channels);
    let w = q.width;
    map.data
        .par_chunks_mut(w * channels)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as i64;
            for x in 0..w {
                let xi = x as i64;
                let center = q.at(x, y as usize);
                let px = &mut row[x * channels..(x + 1) * channels];
                for (c, &(dx, dy)) in offsets.iter().enumerate() {
                    let n = clamped(&q, xi + dx, y + dy);
                    px[c] = (CENSUS_GAIN * (center - n)).tanh();
                }
                px[channels - 2] = (clamped(&q, xi + 1, y) - clamped(&q, xi - 1, y)) * 0.5;
                px[channels - 1] = (clamped(&q, xi, y + 1) - clamped(&q, xi, y - 1)) * 0.5;
                if cfg.normalize {
                    let norm = px.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        let inv = (1.0 / norm) as f32;
                        for v in px.iter_mut() {
                            *v *= inv;
                        }
                    }
                }
            }
        });
    Ok(map)
}

/// Local intensity statistics plus an edge weight for smoothing control.
///
/// Channels per pixel: intensity, 3x3 mean, 3x3 standard deviation,
/// gradient magnitude. Edge weight is `exp(-|grad| / sigma_edge)`.
pub fn extract_context(image: &GrayF32, cfg: &FeatureConfig) -> Result<ContextMap> {
    let q = quarter(image)?;
    if q.width < 3 || q.height < 3 {
        return Err(Error::validation(format!(
            "context image {}x{} smaller than 3x3 window",
            q.width, q.height
        )));
    }
    let channels = 4;
    let w = q.width;
    let mut data = vec![0.0f32; w * q.height * channels];
    let mut edge = vec![0.0f32; w * q.height];
    data.par_chunks_mut(w * channels)
        .zip(edge.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (drow, erow))| {
            let yi = y as i64;
            for x in 0..w {
                let xi = x as i64;
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let v = clamped(&q, xi + dx, yi + dy) as f64;
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / 9.0;
                let var = (sq / 9.0 - mean * mean).max(0.0);
                let gx = (clamped(&q, xi + 1, yi) - clamped(&q, xi - 1, yi)) * 0.5;
                let gy = (clamped(&q, xi, yi + 1) - clamped(&q, xi, yi - 1)) * 0.5;
                let gmag = ((gx * gx + gy * gy) as f64).sqrt() as f32;
                let px = &mut drow[x * channels..(x + 1) * channels];
                px[0] = q.at(x, y);
                px[1] = mean as f32;
                px[2] = var.sqrt() as f32;
                px[3] = gmag;
                erow[x] = (-gmag / cfg.sigma_edge).exp();
            }
        });
    Ok(ContextMap { width: q.width, height: q.height, channels, data, edge })
}

const FMAP_MAGIC: &[u8; 4] = b"FMAP";

/// Writes a feature map in the raw-tensor format: magic "FMAP", u32 h, w, c
/// (little-endian), then h*w*c little-endian f32, row-major channel-fastest.
pub fn save_features(path: &Path, map: &FeatureMap) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(FMAP_MAGIC)?;
    for dim in [map.height as u32, map.width as u32, map.channels as u32] {
        f.write_all(&dim.to_le_bytes())?;
    }
    for v in &map.data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a feature map written by [`save_features`] (or an external encoder
/// honoring the same layout). Rejects truncated files and non-finite values.
pub fn load_features(path: &Path) -> Result<FeatureMap> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|_| Error::format("feature file too short for header"))?;
    if &magic != FMAP_MAGIC {
        return Err(Error::format(format!("bad feature file magic {magic:?}")));
    }
    let mut dims = [0u32; 3];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        f.read_exact(&mut b).map_err(|_| Error::format("feature file too short for header"))?;
        *d = u32::from_le_bytes(b);
    }
    let (h, w, c) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::format(format!("degenerate feature dimensions {h}x{w}x{c}")));
    }
    let n = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| Error::format("feature dimensions overflow"))?;
    let mut bytes = vec![0u8; n * 4];
    f.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("feature file truncated, expected {n} floats")))?;
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(Error::format("feature file has trailing bytes"));
    }
    let mut data = Vec::with_capacity(n);
    for ch in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]);
        if !v.is_finite() {
            return Err(Error::format("feature file contains non-finite values"));
        }
        data.push(v);
    }
    Ok(FeatureMap { width: w, height: h, channels: c, data })
}

/// Correlation between the left feature at `(u, v)` and the right feature
/// bilinearly sampled at `(u - d, v)`.
///
/// Disparity is positive for points in front of the camera on a rectified
/// rig with the right camera at +baseline, so the match lies to the left in
/// the right image. Returns [`COST_SENTINEL`] when `u - d` exits the map, so
/// occluded borders never fabricate matches.
pub fn correlate_at(fl: &FeatureMap, fr: &FeatureMap, u: usize, v: usize, d: f32) -> f32 {
    debug_assert!(u < fl.width && v < fl.height);
    debug_assert_eq!(fl.channels, fr.channels);
    debug_assert!(d >= 0.0);
    let x = u as f32 - d;
    if !(x >= 0.0) || x > (fr.width - 1) as f32 {
        return COST_SENTINEL;
    }
    let x0 = x.floor() as usize;
    let fx = (x - x0 as f32) as f64;
    let x1 = (x0 + 1).min(fr.width - 1);
    let left = fl.at(u, v);
    let r0 = fr.at(x0, v);
    let r1 = fr.at(x1, v);
    let mut acc = 0.0f64;
    let mut norm = 0.0f64;
    for c in 0..fl.channels {
        let rv = r0[c] as f64 * (1.0 - fx) + r1[c] as f64 * fx;
        acc += left[c] as f64 * rv;
        norm += rv * rv;
    }
    // Renormalize the interpolated descriptor so the value is a true cosine:
    // a bilinear blend of two unit vectors loses norm between lattice
    // points, and that dip would bias sub-sample peaks toward integers.
    if norm > 1e-24 {
        acc /= norm.sqrt();
    }
    acc as f32
}

/// Evaluates `K = 2*radius/step + 1` correlation samples per pixel at
/// disparities `D(u,v) + {-radius, ..., +radius}`, clamped below at zero.
///
/// Costs are computed on the fly; no dense volume is built. Pixels are
/// independent, so the row-parallel schedule cannot affect the output.
pub fn lookup_window(
    fl: &FeatureMap,
    fr: &FeatureMap,
    d: &DisparityMap,
    radius: usize,
    step: usize,
) -> Result<CostSlice> {
    if radius == 0 || step == 0 || radius % step != 0 {
        return Err(Error::validation(format!(
            "lookup radius {radius} must be a positive multiple of step {step}"
        )));
    }
    if d.width != fl.width || d.height != fl.height {
        return Err(Error::validation(format!(
            "disparity {}x{} does not match features {}x{}",
            d.width, d.height, fl.width, fl.height
        )));
    }
    if fl.width != fr.width || fl.height != fr.height || fl.channels != fr.channels {
        return Err(Error::validation("left/right feature maps differ in shape".to_string()));
    }
    let k = 2 * radius / step + 1;
    let w = fl.width;
    let mut disparities = vec![0.0f32; w * fl.height * k];
    let mut values = vec![0.0f32; w * fl.height * k];
    disparities
        .par_chunks_mut(w * k)
        .zip(values.par_chunks_mut(w * k))
        .enumerate()
        .for_each(|(y, (drow, vrow))| {
            for x in 0..w {
                let center = d.values[y * w + x];
                for s in 0..k {
                    let offset = (s * step) as f32 - radius as f32;
                    let sd = (center + offset).max(0.0);
                    drow[x * k + s] = sd;
                    vrow[x * k + s] = correlate_at(fl, fr, x, y, sd);
                }
            }
        });
    Ok(CostSlice { width: w, height: fl.height, k, disparities, values })
}
