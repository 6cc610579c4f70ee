//! Inference-only convolutional GRU update with externally supplied weights.
//!
//! The recurrent refinement architecture is preserved exactly — gates and
//! candidate state from 3x3 convolutions over the concatenated hidden state
//! and per-pixel input (cost samples, context features, current disparity) —
//! but no training happens here. Weights arrive through the GRUW file
//! format, so an externally trained update operator can drop in behind the
//! same engine loop that drives the reference backend.

use crate::error::{Error, Result};
use crate::matching::{ContextMap, CostSlice, COST_SENTINEL};
use crate::warp::{DisparityMap, HiddenState};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

/// One 3x3 convolution: `weights[out][in][ky][kx]` flattened out-major,
/// then in-channel, then row-major kernel; one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    fn expect_len(&self) -> bool {
        self.weights.len() == self.out_channels * self.in_channels * 9
            && self.bias.len() == self.out_channels
    }
}

/// Convolution kernels for one GRU step plus the delta-disparity head.
///
/// Channel sizes: `hidden` (state), `cost` (K lookup samples), `context`
/// (conditioning features), `disparity` (encoded current estimate, 1 for
/// the raw value). The per-pixel input x has `cost + context + disparity`
/// channels; gate and candidate convolutions read `hidden + x` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub hidden: usize,
    pub cost: usize,
    pub context: usize,
    pub disparity: usize,
    pub update_gate: Conv3x3,
    pub reset_gate: Conv3x3,
    pub candidate: Conv3x3,
    pub head: Conv3x3,
}

impl GruWeights {
    /// All-zero weights with consistent shapes (useful as a template).
    pub fn zeros(hidden: usize, cost: usize, context: usize, disparity: usize) -> Self {
        let x = cost + context + disparity;
        Self {
            hidden,
            cost,
            context,
            disparity,
            update_gate: Conv3x3::zeros(hidden, hidden + x),
            reset_gate: Conv3x3::zeros(hidden, hidden + x),
            candidate: Conv3x3::zeros(hidden, hidden + x),
            head: Conv3x3::zeros(1, hidden),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.cost + self.context + self.disparity
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.cost == 0 || self.disparity == 0 {
            return Err(Error::validation("GRU channel sizes must be positive"));
        }
        let gate_in = self.hidden + self.input_channels();
        for (name, conv, out_c, in_c) in [
            ("update gate", &self.update_gate, self.hidden, gate_in),
            ("reset gate", &self.reset_gate, self.hidden, gate_in),
            ("candidate", &self.candidate, self.hidden, gate_in),
            ("head", &self.head, 1, self.hidden),
        ] {
            if conv.out_channels != out_c || conv.in_channels != in_c || !conv.expect_len() {
                return Err(Error::validation(format!(
                    "GRU {name} kernel shape {}x{} does not match declared channels {out_c}x{in_c}",
                    conv.out_channels, conv.in_channels
                )));
            }
            if conv.weights.iter().chain(conv.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("GRU {name} kernel has non-finite values")));
            }
        }
        Ok(())
    }
}

const GRUW_MAGIC: &[u8; 4] = b"GRUW";

/// Writes weights as: magic "GRUW"; u32 hidden, cost, context, disparity
/// (little-endian); then update gate, reset gate, candidate, head kernels,
/// each as weights then bias, little-endian f32 in [`Conv3x3`] order.
pub fn save_gru_weights(path: &Path, w: &GruWeights) -> Result<()> {
    w.validate()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(GRUW_MAGIC)?;
    for dim in [w.hidden, w.cost, w.context, w.disparity] {
        f.write_all(&(dim as u32).to_le_bytes())?;
    }
    for conv in [&w.update_gate, &w.reset_gate, &w.candidate, &w.head] {
        for v in conv.weights.iter().chain(conv.bias.iter()) {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Reads a weight file written by [`save_gru_weights`].
pub fn load_gru_weights(path: &Path) -> Result<GruWeights> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|_| Error::format("weight file too short for header"))?;
    if &magic != GRUW_MAGIC {
        return Err(Error::format(format!("bad weight file magic {magic:?}")));
    }
    let mut dims = [0u32; 4];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        f.read_exact(&mut b).map_err(|_| Error::format("weight file too short for header"))?;
        *d = u32::from_le_bytes(b);
    }
    let mut w = GruWeights::zeros(dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize);
    {
        let GruWeights { update_gate, reset_gate, candidate, head, .. } = &mut w;
        for conv in [update_gate, reset_gate, candidate, head] {
            for slot in conv.weights.iter_mut().chain(conv.bias.iter_mut()) {
                let mut b = [0u8; 4];
                f.read_exact(&mut b).map_err(|_| Error::format("weight file truncated"))?;
                *slot = f32::from_le_bytes(b);
            }
        }
    }
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(Error::format("weight file has trailing bytes"));
    }
    w.validate()?;
    Ok(w)
}

/// Planar multi-channel buffer used for the concatenated GRU inputs.
struct Planes {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Planes {
    #[inline]
    fn at(&self, c: usize, x: i64, y: i64) -> f32 {
        // Zero padding outside the image.
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return 0.0;
        }
        self.data[(c * self.height + y as usize) * self.width + x as usize]
    }
}

/// 3x3 convolution with zero padding, row-parallel.
fn conv3x3(input: &Planes, conv: &Conv3x3) -> Planes {
    debug_assert_eq!(input.channels, conv.in_channels);
    let (w, h) = (input.width, input.height);
    let mut out = vec![0.0f32; w * h * conv.out_channels];
    out.par_chunks_mut(w * h).enumerate().for_each(|(oc, plane)| {
        let base = oc * conv.in_channels * 9;
        for y in 0..h {
            for x in 0..w {
                let mut acc = conv.bias[oc] as f64;
                for ic in 0..conv.in_channels {
                    let kbase = base + ic * 9;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = conv.weights[kbase + ky * 3 + kx] as f64;
                            if wv != 0.0 {
                                acc += wv
                                    * input.at(ic, x as i64 + kx as i64 - 1, y as i64 + ky as i64 - 1)
                                        as f64;
                            }
                        }
                    }
                }
                plane[y * w + x] = acc as f32;
            }
        }
    });
    Planes { width: w, height: h, channels: conv.out_channels, data: out }
}

#[inline]
fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// One GRU iteration:
/// x = concat(cost, context, disparity);
/// z = sigmoid(conv([h, x])); r = sigmoid(conv([h, x]));
/// candidate = tanh(conv([r*h, x])); h' = (1-z)*h + z*candidate;
/// delta D = head(h').
///
/// Out-of-range cost sentinels enter the network as zero. Shape mismatches
/// fail before any compute.
pub fn gru_update(
    hidden: &HiddenState,
    cost: &CostSlice,
    context: &ContextMap,
    d: &DisparityMap,
    weights: &GruWeights,
) -> Result<(HiddenState, Vec<f32>)> {
    weights.validate()?;
    let (w, h) = (d.width, d.height);
    if hidden.width != w || hidden.height != h || cost.width != w || cost.height != h
        || context.width != w || context.height != h
    {
        return Err(Error::validation("GRU input resolutions disagree"));
    }
    if hidden.channels != weights.hidden {
        return Err(Error::validation(format!(
            "hidden state has {} channels, weights expect {}",
            hidden.channels, weights.hidden
        )));
    }
    if cost.k != weights.cost {
        return Err(Error::validation(format!(
            "cost slice has {} samples, weights expect {}",
            cost.k, weights.cost
        )));
    }
    if context.channels != weights.context {
        return Err(Error::validation(format!(
            "context has {} channels, weights expect {}",
            context.channels, weights.context
        )));
    }
    if weights.disparity != 1 {
        return Err(Error::validation(format!(
            "weights declare {} disparity channels; raw encoding provides 1",
            weights.disparity
        )));
    }
    let n = w * h;
    let xc = weights.input_channels();

    // Concatenated [h, x] in planar layout.
    let mut hx = Planes {
        width: w,
        height: h,
        channels: weights.hidden + xc,
        data: vec![0.0; (weights.hidden + xc) * n],
    };
    hx.data[..weights.hidden * n].copy_from_slice(&hidden.data);
    let xoff = weights.hidden;
    for s in 0..cost.k {
        let plane = &mut hx.data[(xoff + s) * n..(xoff + s + 1) * n];
        for i in 0..n {
            let v = cost.values[i * cost.k + s];
            plane[i] = if v == COST_SENTINEL { 0.0 } else { v };
        }
    }
    for c in 0..context.channels {
        let plane = &mut hx.data[(xoff + cost.k + c) * n..(xoff + cost.k + c + 1) * n];
        for i in 0..n {
            plane[i] = context.data[i * context.channels + c];
        }
    }
    hx.data[(xoff + cost.k + context.channels) * n..].copy_from_slice(&d.values);

    let mut z = conv3x3(&hx, &weights.update_gate);
    let mut r = conv3x3(&hx, &weights.reset_gate);
    for v in z.data.iter_mut().chain(r.data.iter_mut()) {
        *v = sigmoid(*v);
    }
    debug_assert!(z.data.iter().chain(r.data.iter()).all(|&g| g > 0.0 && g < 1.0));

    // Candidate input: reset-gated hidden state, same x tail.
    let mut rhx = hx;
    for c in 0..weights.hidden {
        for i in 0..n {
            rhx.data[c * n + i] = r.data[c * n + i] * hidden.data[c * n + i];
        }
    }
    let mut cand = conv3x3(&rhx, &weights.candidate);
    for v in cand.data.iter_mut() {
        *v = v.tanh();
    }
    debug_assert!(cand.data.iter().all(|&c| c > -1.0 && c < 1.0));

    let mut out = HiddenState::new(w, h, weights.hidden);
    for i in 0..weights.hidden * n {
        out.data[i] = (1.0 - z.data[i]) * hidden.data[i] + z.data[i] * cand.data[i];
    }

    let head_in = Planes { width: w, height: h, channels: weights.hidden, data: out.data.clone() };
    let delta = conv3x3(&head_in, &weights.head).data;
    Ok((out, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_inputs(w: usize, h: usize, k: usize, cc: usize) -> (HiddenState, CostSlice, ContextMap, DisparityMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut hidden = HiddenState::new(w, h, 2);
        for v in hidden.data.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let cost = CostSlice {
            width: w,
            height: h,
            k,
            disparities: (0..w * h * k).map(|i| (i % k) as f32).collect(),
            values: (0..w * h * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let context = ContextMap {
            width: w,
            height: h,
            channels: cc,
            data: (0..w * h * cc).map(|_| rng.random_range(0.0..1.0)).collect(),
            edge: vec![1.0; w * h],
        };
        let d = DisparityMap::constant(w, h, 5.0).unwrap();
        (hidden, cost, context, d)
    }

    #[test]
    fn zero_weights_halve_hidden_and_emit_zero_delta() {
        let (hidden, cost, context, d) = small_inputs(6, 5, 3, 2);
        let w = GruWeights::zeros(2, 3, 2, 1);
        let (h2, delta) = gru_update(&hidden, &cost, &context, &d, &w).unwrap();
        for i in 0..hidden.data.len() {
            assert!((h2.data[i] - 0.5 * hidden.data[i]).abs() < 1e-6);
        }
        assert!(delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_weights_stay_finite_and_gated() {
        let (hidden, cost, context, d) = small_inputs(8, 6, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut w = GruWeights::zeros(2, 5, 3, 1);
        for conv in [&mut w.update_gate, &mut w.reset_gate, &mut w.candidate, &mut w.head] {
            for v in conv.weights.iter_mut().chain(conv.bias.iter_mut()) {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let (h2, delta) = gru_update(&hidden, &cost, &context, &d, &w).unwrap();
        assert!(h2.data.iter().all(|v| v.is_finite()));
        assert!(delta.iter().all(|v| v.is_finite()));
        // New hidden is a convex blend of old hidden and a tanh candidate,
        // both within (-1, 1) here.
        assert!(h2.data.iter().all(|&v| v.abs() < 1.0));
    }

    #[test]
    fn single_pixel_matches_hand_evaluated_equations() {
        // 1x1 image, 1 hidden channel, 1 cost sample, no context. With a
        // 1-pixel image only the center kernel tap sees data.
        let mut w = GruWeights::zeros(1, 1, 0, 1);
        // Center taps (ky=1, kx=1 -> flat index 4): inputs are [h, cost, d].
        let set_center = |conv: &mut Conv3x3, taps: &[f32], bias: f32| {
            for (ic, &t) in taps.iter().enumerate() {
                conv.weights[ic * 9 + 4] = t;
            }
            conv.bias[0] = bias;
        };
        set_center(&mut w.update_gate, &[0.7, -0.2, 0.1], 0.05);
        set_center(&mut w.reset_gate, &[-0.4, 0.3, 0.2], -0.1);
        set_center(&mut w.candidate, &[0.5, 0.6, -0.3], 0.2);
        set_center(&mut w.head, &[1.5], -0.25);

        let mut hidden = HiddenState::new(1, 1, 1);
        hidden.data[0] = 0.4;
        let cost = CostSlice { width: 1, height: 1, k: 1, disparities: vec![3.0], values: vec![0.8] };
        let context = ContextMap { width: 1, height: 1, channels: 0, data: vec![], edge: vec![1.0] };
        let d = DisparityMap::constant(1, 1, 3.0).unwrap();

        let (h2, delta) = gru_update(&hidden, &cost, &context, &d, &w).unwrap();

        let sig = |v: f32| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.7 * 0.4 - 0.2 * 0.8 + 0.1 * 3.0 + 0.05);
        let r = sig(-0.4 * 0.4 + 0.3 * 0.8 + 0.2 * 3.0 - 0.1);
        let cand = (0.5 * (r * 0.4) + 0.6 * 0.8 - 0.3 * 3.0 + 0.2).tanh();
        let h_expect = (1.0 - z) * 0.4 + z * cand;
        let delta_expect = 1.5 * h_expect - 0.25;
        assert!((h2.data[0] - h_expect).abs() < 1e-6, "{} vs {h_expect}", h2.data[0]);
        assert!((delta[0] - delta_expect).abs() < 1e-6, "{} vs {delta_expect}", delta[0]);
    }

    #[test]
    fn shape_mismatches_error_before_compute() {
        let (hidden, cost, context, d) = small_inputs(6, 5, 3, 2);
        // Wrong hidden channels.
        let w = GruWeights::zeros(4, 3, 2, 1);
        assert!(gru_update(&hidden, &cost, &context, &d, &w).is_err());
        // Wrong cost samples.
        let w = GruWeights::zeros(2, 5, 2, 1);
        assert!(gru_update(&hidden, &cost, &context, &d, &w).is_err());
        // Wrong context channels.
        let w = GruWeights::zeros(2, 3, 4, 1);
        assert!(gru_update(&hidden, &cost, &context, &d, &w).is_err());
        // Internally inconsistent kernel.
        let mut w = GruWeights::zeros(2, 3, 2, 1);
        w.candidate.weights.pop();
        assert!(gru_update(&hidden, &cost, &context, &d, &w).is_err());
    }

    #[test]
    fn weight_file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.gruw");
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut w = GruWeights::zeros(3, 5, 4, 1);
        for conv in [&mut w.update_gate, &mut w.reset_gate, &mut w.candidate, &mut w.head] {
            for v in conv.weights.iter_mut().chain(conv.bias.iter_mut()) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        save_gru_weights(&path, &w).unwrap();
        let r = load_gru_weights(&path).unwrap();
        assert_eq!(w, r);
    }

    #[test]
    fn weight_file_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.gruw");
        let w = GruWeights::zeros(2, 3, 2, 1);
        save_gru_weights(&path, &w).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let t = dir.path().join("t.gruw");
        std::fs::write(&t, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_gru_weights(&t).is_err());

        let m = dir.path().join("m.gruw");
        let mut bad = bytes.clone();
        bad[1] = b'X';
        std::fs::write(&m, &bad).unwrap();
        assert!(load_gru_weights(&m).is_err());

        let e = dir.path().join("e.gruw");
        let mut padded = bytes;
        padded.extend_from_slice(&[0, 0]);
        std::fs::write(&e, &padded).unwrap();
        assert!(load_gru_weights(&e).is_err());
    }
}
