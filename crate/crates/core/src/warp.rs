//! Occlusion-aware forward warping of per-frame state.
//!
//! The previous frame's disparity and aggregation state are pushed into the
//! current camera frame in two steps: [`compute_warp_field`] runs the dense
//! temporal transform to find where every source pixel lands, then
//! [`softmax_splat`] scatters values to the 4 bilinear neighbors of each
//! landing point. Splat weights grow exponentially with disparity, so where
//! several sources collide the nearest surface wins and disoccluded targets
//! that nobody reaches are zero-filled and masked as holes.

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, temporal_transform, CameraRig, Pose, StereoPoint};

/// Targets with accumulated splat mass below this are holes: masked invalid
/// and zero-valued.
pub const COVERAGE_EPS: f64 = 1e-4;

/// Default softmax sharpness: near-hard occlusion resolution without
/// overflow for disparities up to a few hundred pixels.
pub const DEFAULT_BETA: f64 = 10.0;

/// Per-pixel disparity with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub mask: Vec<bool>,
}

impl DisparityMap {
    /// All-invalid map of the given size.
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height], mask: vec![false; width * height] }
    }

    /// Uniform valid disparity (must be > 0).
    pub fn constant(width: usize, height: usize, d: f32) -> Result<Self> {
        if !(d > 0.0) {
            return Err(Error::validation(format!("constant disparity must be > 0, got {d}")));
        }
        Ok(Self { width, height, values: vec![d; width * height], mask: vec![true; width * height] })
    }

    pub fn from_parts(width: usize, height: usize, values: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || mask.len() != width * height {
            return Err(Error::validation(format!(
                "disparity buffers do not match {width}x{height}"
            )));
        }
        for i in 0..values.len() {
            if mask[i] && !(values[i] > 0.0 && values[i].is_finite()) {
                return Err(Error::validation(format!(
                    "valid disparity at index {i} is {}, expected finite > 0",
                    values[i]
                )));
            }
        }
        Ok(Self { width, height, values, mask })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Fraction of pixels that are valid.
    pub fn valid_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Per-pixel recurrent aggregation state, planar channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `data[c * width * height + y * width + x]`
    pub data: Vec<f32>,
}

impl HiddenState {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Borrow one channel plane.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Where each source pixel lands after the temporal transform.
#[derive(Debug, Clone)]
pub struct WarpField {
    pub width: usize,
    pub height: usize,
    /// Target coordinates and transformed disparity, source-indexed.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub d: Vec<f64>,
    pub valid: Vec<bool>,
}

impl WarpField {
    /// Fraction of source pixels with a valid target.
    pub fn valid_fraction(&self) -> f64 {
        if self.valid.is_empty() {
            return 0.0;
        }
        self.valid.iter().filter(|&&m| m).count() as f64 / self.valid.len() as f64
    }
}

/// Runs the dense temporal transform over every valid source pixel.
///
/// Masked or geometrically invalid pixels (behind camera, at-infinity) come
/// out invalid; an all-invalid field is legal and signals the caller to fall
/// back to a cold start.
pub fn compute_warp_field(rig: &CameraRig, rel: &Pose, d_prev: &DisparityMap) -> WarpField {
    let n = d_prev.width * d_prev.height;
    let t = temporal_transform(rig, rel);
    let mut field = WarpField {
        width: d_prev.width,
        height: d_prev.height,
        u: vec![0.0; n],
        v: vec![0.0; n],
        d: vec![0.0; n],
        valid: vec![false; n],
    };
    for y in 0..d_prev.height {
        for x in 0..d_prev.width {
            let i = y * d_prev.width + x;
            if !d_prev.mask[i] {
                continue;
            }
            let p = StereoPoint::new(x as f64, y as f64, d_prev.values[i] as f64);
            if let Some(out) = apply_transform(&t, &p) {
                if out.u.is_finite() && out.v.is_finite() && out.d.is_finite() {
                    field.u[i] = out.u;
                    field.v[i] = out.v;
                    field.d[i] = out.d;
                    field.valid[i] = true;
                }
            }
        }
    }
    field
}

/// Softmax splatting: scatter each valid source pixel's channel values to
/// the 4 bilinear neighbors of its target with weight `exp(beta * weight)`.
///
/// Returns the warped channels plus the accumulated weight mass per target.
/// Zero-mass targets get value 0. Per-target max-weight normalization keeps
/// the exponentials finite for any disparity range; the output at each
/// covered target is a convex combination of contributing source values.
///
/// Scatter order is fixed (row-major over sources) and the loop is serial,
/// so results are bit-identical regardless of thread count.
pub fn softmax_splat(
    channels: &[&[f32]],
    field: &WarpField,
    weight: &[f64],
    beta: f64,
) -> (Vec<Vec<f32>>, Vec<f64>) {
    let (w, h) = (field.width, field.height);
    let n = w * h;
    assert!(beta >= 0.0, "beta must be >= 0");
    assert_eq!(weight.len(), n, "weight buffer size mismatch");
    for ch in channels {
        assert_eq!(ch.len(), n, "channel buffer size mismatch");
    }

    // Enumerate the up-to-4 bilinear corners of a target coordinate.
    // Corners with zero kernel weight are skipped so they cannot skew the
    // per-target normalizer.
    let corners = |u: f64, v: f64| -> [(i64, i64, f64); 4] {
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ]
    };

    // Pass 1: per-target maximum of beta*weight among real contributors.
    let mut max_logw = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        if !field.valid[i] {
            continue;
        }
        let lw = beta * weight[i];
        for (tx, ty, bw) in corners(field.u[i], field.v[i]) {
            if bw > 0.0 && tx >= 0 && ty >= 0 && (tx as usize) < w && (ty as usize) < h {
                let t = ty as usize * w + tx as usize;
                if lw > max_logw[t] {
                    max_logw[t] = lw;
                }
            }
        }
    }

    // Pass 2: accumulate normalized exponential mass and weighted values.
    let mut mass = vec![0.0f64; n];
    let mut acc = vec![vec![0.0f64; n]; channels.len()];
    for i in 0..n {
        if !field.valid[i] {
            continue;
        }
        let lw = beta * weight[i];
        for (tx, ty, bw) in corners(field.u[i], field.v[i]) {
            if bw > 0.0 && tx >= 0 && ty >= 0 && (tx as usize) < w && (ty as usize) < h {
                let t = ty as usize * w + tx as usize;
                let m = bw * (lw - max_logw[t]).exp();
                mass[t] += m;
                for (c, ch) in channels.iter().enumerate() {
                    acc[c][t] += m * ch[i] as f64;
                }
            }
        }
    }

    let out = acc
        .into_iter()
        .map(|num| {
            num.iter()
                .zip(&mass)
                .map(|(&v, &m)| if m > 0.0 { (v / m) as f32 } else { 0.0 })
                .collect()
        })
        .collect();
    (out, mass)
}

/// Warps disparity plus hidden state into the current frame.
///
/// The disparity channel carries the transformed value d' (not the source
/// value); hidden channels carry source values. Both are splatted with
/// weight = d', so the nearest surface takes priority at collisions.
/// Targets with coverage below [`COVERAGE_EPS`] are holes: masked invalid
/// in the disparity map and zero-filled everywhere.
pub fn warp_state(
    disp: &DisparityMap,
    hidden: &HiddenState,
    rig: &CameraRig,
    rel: &Pose,
    beta: f64,
) -> (DisparityMap, HiddenState) {
    assert_eq!(disp.width, hidden.width, "disparity/hidden width mismatch");
    assert_eq!(disp.height, hidden.height, "disparity/hidden height mismatch");
    let field = compute_warp_field(rig, rel, disp);
    let n = disp.width * disp.height;

    let d_prime: Vec<f32> = field.d.iter().map(|&d| d as f32).collect();
    let mut channels: Vec<&[f32]> = vec![&d_prime];
    for c in 0..hidden.channels {
        channels.push(hidden.channel(c));
    }

    let (mut warped, mass) = softmax_splat(&channels, &field, &field.d, beta);

    let mut out_hidden = HiddenState::new(hidden.width, hidden.height, hidden.channels);
    let mut mask = vec![false; n];
    let mut values = warped.remove(0);
    for i in 0..n {
        if mass[i] >= COVERAGE_EPS && values[i] > 0.0 {
            mask[i] = true;
        } else {
            values[i] = 0.0;
        }
    }
    for (c, ch) in warped.into_iter().enumerate() {
        let plane = &mut out_hidden.data[c * n..(c + 1) * n];
        for i in 0..n {
            plane[i] = if mass[i] >= COVERAGE_EPS { ch[i] } else { 0.0 };
        }
    }

    let out_disp = DisparityMap { width: disp.width, height: disp.height, values, mask };
    (out_disp, out_hidden)
}
