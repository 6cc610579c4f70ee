//! Reference disparity update: parabola peak refinement plus one
//! edge-aware smoothing pass, modulated by a running confidence state.
//!
//! Each iteration reads the K correlation samples around the current
//! disparity, locates the best sample, refines it to sub-sample precision
//! with a 3-point parabola, and steps the disparity toward that peak scaled
//! by a curvature-based confidence. A single smoothing pass then blends each
//! proposal with an edge-weighted neighbor average, so low-confidence pixels
//! get pulled toward their better-matched neighbors instead of drifting.
//!
//! The hidden state carries two exponential averages per pixel: confidence
//! (channel 0) and peak correlation (channel 1). Warping this state forward
//! is what lets the next frame trust regions that matched well before.

use super::config::EngineConfig;
use crate::matching::{ContextMap, CostSlice, COST_SENTINEL};
use crate::warp::{DisparityMap, HiddenState};
use rayon::prelude::*;

/// Hidden channels used by the reference backend.
pub const REFERENCE_HIDDEN_CHANNELS: usize = 2;

/// Floor keeping refined disparities strictly positive.
pub const MIN_VALID_DISPARITY: f32 = 0.01;

/// Baseline neighbor weight so zero-confidence regions still smooth.
const NEIGHBOR_EPS: f32 = 0.1;

/// Smoothing window half-size (5x5 tent support).
const SMOOTH_REACH: usize = 2;


/// Curvature that maps to full confidence. Correlations are cosine
/// similarities; a sharp unambiguous peak falls off by 0.25+ per sample,
/// while texture-poor regions produce shallow bumps whose sub-sample vertex
/// is mostly noise. The scale decides which of the two regimes a pixel is
/// in: sharp peaks step at full weight, shallow ones mostly follow their
/// neighbors through the smoothing pass.
const CURVATURE_SCALE: f32 = 0.25;

/// Peak correlation gate: full trust from `FLOOR + RANGE` up, zero at or
/// below `FLOOR` (chance-level correlation).
const PEAK_VALUE_FLOOR: f32 = 0.2;
const PEAK_VALUE_RANGE: f32 = 0.4;

#[inline]
fn clamp01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// Trust factor from the peak correlation value alone.
#[inline]
fn peak_trust(y: f32) -> f32 {
    clamp01((y - PEAK_VALUE_FLOOR) / PEAK_VALUE_RANGE)
}

/// Per-pixel peak measurement from one cost slice.
struct Peak {
    /// Proposed disparity change before smoothing and clamping.
    delta: f32,
    /// Curvature-and-correlation confidence in [0, 1].
    confidence: f32,
    /// Best correlation value, clamped to [0, 1] (0 when degenerate).
    peak_value: f32,
}

fn measure_peak(sd: &[f32], sv: &[f32], current: f32) -> Peak {
    let k = sv.len();
    let center = k / 2;
    // Argmax preferring the center sample: only a strictly better value
    // displaces it, so flat slices stay centered.
    let mut best = center;
    for s in 0..k {
        if sv[s] > sv[best] {
            best = s;
        }
    }
    if sv[best] == COST_SENTINEL {
        return Peak { delta: 0.0, confidence: 0.0, peak_value: 0.0 };
    }
    let step = if k > 1 { (sd[k - 1] - sd[0]) / (k - 1) as f32 } else { 1.0 };
    // A peak hugging an out-of-range sentinel is not evidence (the true
    // match may simply be outside the image): stay put and follow
    // neighbors through the smoothing pass instead of chasing it.
    if (best > 0 && sv[best - 1] == COST_SENTINEL)
        || (best + 1 < k && sv[best + 1] == COST_SENTINEL)
    {
        return Peak { delta: 0.0, confidence: 0.0, peak_value: 0.0 };
    }
    if best == 0 || best == k - 1 {
        // Peak ran off the window edge with valid support: the true peak
        // lies further out, so step toward it at half trust.
        let confidence = 0.5 * peak_trust(sv[best]);
        let delta = (sd[best] - current) * confidence;
        return Peak { delta, confidence, peak_value: clamp01(sv[best]) };
    }
    let (ym, y0, yp) = (sv[best - 1], sv[best], sv[best + 1]);
    let curvature = ym - 2.0 * y0 + yp;
    if curvature.abs() < 1e-9 {
        // Flat or linear cost: no information.
        return Peak { delta: 0.0, confidence: 0.0, peak_value: clamp01(y0) };
    }
    // Vertex of the parabola through (-1, ym), (0, y0), (+1, yp).
    let vertex = ((ym - yp) / (2.0 * curvature)).clamp(-1.0, 1.0);
    let confidence = clamp01(-curvature / CURVATURE_SCALE) * peak_trust(y0);
    let full_offset = (sd[best] + vertex * step) - current;
    Peak { delta: full_offset * confidence, confidence, peak_value: clamp01(y0) }
}

/// One reference-backend iteration.
///
/// Returns the updated hidden state and the per-pixel disparity change,
/// already clamped to `±cfg.max_step`. The caller applies the change and
/// owns the positivity floor.
pub fn reference_update(
    hidden: &HiddenState,
    cost: &CostSlice,
    context: &ContextMap,
    d: &DisparityMap,
    cfg: &EngineConfig,
) -> (HiddenState, Vec<f32>) {
    let (w, h) = (d.width, d.height);
    debug_assert_eq!(hidden.channels, REFERENCE_HIDDEN_CHANNELS);
    debug_assert!(cost.width == w && cost.height == h);
    debug_assert!(context.width == w && context.height == h);
    let n = w * h;

    // Pass 1: per-pixel peak measurement (independent, row-parallel).
    let mut proposal = vec![0.0f32; n];
    let mut confidence = vec![0.0f32; n];
    let mut peak_value = vec![0.0f32; n];
    proposal
        .par_chunks_mut(w)
        .zip(confidence.par_chunks_mut(w))
        .zip(peak_value.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((prow, crow), vrow))| {
            for x in 0..w {
                let (sd, sv) = cost.at(x, y);
                let current = d.values[y * w + x];
                let peak = measure_peak(sd, sv, current);
                prow[x] = current + peak.delta;
                crow[x] = peak.confidence;
                vrow[x] = peak.peak_value;
            }
        });

    // Pass 2: edge-aware smoothing of the proposals over a 5x5 tent.
    // Neighbor influence is gated three ways: by the donor's context edge
    // weight (pixels sitting on intensity edges don't donate across them),
    // by confidence — this iteration's or the carried state's, whichever is
    // higher, so sharp matches anchor their neighborhood — and by a
    // disparity-range guard that keeps distinct surfaces from averaging
    // into each other. The wide support matters: sub-sample peaks
    // interpolated from a discretely sampled correlation carry a
    // texture-dependent bias that is spatially correlated over a couple of
    // pixels, and a plain 4-neighbor average barely touches it. The blend
    // factor stays at lambda even for confident pixels for the same reason.
    let mut delta = vec![0.0f32; n];
    delta.par_chunks_mut(w).enumerate().for_each(|(y, drow)| {
        for x in 0..w {
            let i = y * w + x;
            let mut wsum = 0.0f32;
            let mut nsum = 0.0f32;
            for dy in -(SMOOTH_REACH as i64)..=SMOOTH_REACH as i64 {
                let yn = y as i64 + dy;
                if yn < 0 || yn >= h as i64 {
                    continue;
                }
                for dx in -(SMOOTH_REACH as i64)..=SMOOTH_REACH as i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xn = x as i64 + dx;
                    if xn < 0 || xn >= w as i64 {
                        continue;
                    }
                    let j = yn as usize * w + xn as usize;
                    let tent = (SMOOTH_REACH as f32 + 1.0 - dx.abs() as f32)
                        * (SMOOTH_REACH as f32 + 1.0 - dy.abs() as f32);
                    let anchor = confidence[j].max(hidden.channel(0)[j]);
                    let wgt = tent * context.edge[j] * (anchor + NEIGHBOR_EPS);
                    wsum += wgt;
                    nsum += wgt * proposal[j];
                }
            }
            let navg = if wsum > 1e-9 { nsum / wsum } else { proposal[i] };
            let smoothed = (1.0 - cfg.lambda) * proposal[i] + cfg.lambda * navg;
            drow[x] = (smoothed - d.values[i]).clamp(-cfg.max_step, cfg.max_step);
        }
    });

    // Hidden update: exponential averages of confidence and peak value.
    let mut out = HiddenState::new(w, h, REFERENCE_HIDDEN_CHANNELS);
    let alpha = cfg.ema_alpha;
    for i in 0..n {
        out.data[i] = (1.0 - alpha) * hidden.channel(0)[i] + alpha * confidence[i];
        out.data[n + i] = (1.0 - alpha) * hidden.channel(1)[i] + alpha * peak_value[i];
    }
    (out, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::FeatureConfig;

    fn uniform_context(w: usize, h: usize) -> ContextMap {
        ContextMap {
            width: w,
            height: h,
            channels: 1,
            data: vec![0.0; w * h],
            edge: vec![1.0; w * h],
        }
    }

    /// Cost slice with identical samples at every pixel.
    fn slice_from_samples(w: usize, h: usize, sd: &[f32], sv: &[f32]) -> CostSlice {
        let k = sd.len();
        CostSlice {
            width: w,
            height: h,
            k,
            disparities: sd.iter().copied().cycle().take(w * h * k).collect(),
            values: sv.iter().copied().cycle().take(w * h * k).collect(),
        }
    }

    fn run(
        sd: &[f32],
        sv: &[f32],
        current: f32,
        cfg: &EngineConfig,
    ) -> (HiddenState, Vec<f32>) {
        let (w, h) = (6, 5);
        let hidden = HiddenState::new(w, h, REFERENCE_HIDDEN_CHANNELS);
        let cost = slice_from_samples(w, h, sd, sv);
        let ctx = uniform_context(w, h);
        let d = DisparityMap::constant(w, h, current).unwrap();
        reference_update(&hidden, &cost, &ctx, &d, cfg)
    }

    #[test]
    fn centered_peak_gives_zero_delta() {
        let cfg = EngineConfig::default();
        let sd = [6.0, 7.0, 8.0, 9.0, 10.0];
        let sv = [0.1, 0.5, 0.9, 0.5, 0.1];
        let (_, delta) = run(&sd, &sv, 8.0, &cfg);
        assert!(delta.iter().all(|&dd| dd.abs() < 1e-7), "delta {:?}", &delta[..4]);
    }

    #[test]
    fn parabola_vertex_matches_closed_form() {
        // Samples (-1: 0.5, 0: 0.9, +1: 0.7): vertex at +1/6 of a step.
        let mut cfg = EngineConfig::default();
        cfg.lambda = 0.0; // isolate the parabola math from smoothing
        let sd = [7.0, 8.0, 9.0];
        let sv = [0.5, 0.9, 0.7];
        let (_, delta) = run(&sd, &sv, 8.0, &cfg);
        let vertex = (0.5f32 - 0.7) / (2.0 * (0.5 - 2.0 * 0.9 + 0.7));
        assert!((vertex - 1.0 / 6.0).abs() < 1e-6);
        // Curvature -0.6 and peak 0.9 both saturate confidence to 1.
        let expected = vertex;
        for &dd in &delta {
            assert!((dd - expected).abs() < 1e-6, "delta {dd} vs {expected}");
        }
    }

    #[test]
    fn flat_cost_gives_zero_delta_and_confidence_decay() {
        let cfg = EngineConfig::default();
        let sd = [6.0, 7.0, 8.0, 9.0, 10.0];
        let sv = [0.4; 5];
        let (w, h) = (6, 5);
        let mut hidden = HiddenState::new(w, h, REFERENCE_HIDDEN_CHANNELS);
        for i in 0..w * h {
            hidden.data[i] = 0.8; // prior confidence
        }
        let cost = slice_from_samples(w, h, &sd, &sv);
        let ctx = uniform_context(w, h);
        let d = DisparityMap::constant(w, h, 8.0).unwrap();
        let (hidden2, delta) = reference_update(&hidden, &cost, &ctx, &d, &cfg);
        assert!(delta.iter().all(|&dd| dd == 0.0));
        for i in 0..w * h {
            let c = hidden2.channel(0)[i];
            assert!((c - 0.6).abs() < 1e-6, "confidence {c} should decay 0.8 -> 0.6");
        }
    }

    #[test]
    fn off_center_peak_steps_toward_it() {
        let mut cfg = EngineConfig::default();
        cfg.lambda = 0.0;
        // Peak at +3 from center (sample disparity 11), current 8.
        let sd = [4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut sv = [0.0f32; 9];
        sv[6] = 0.4;
        sv[7] = 0.9;
        sv[8] = 0.5;
        let (_, delta) = run(&sd, &sv, 8.0, &cfg);
        // Offset exceeds max_step after confidence scaling -> clamp at 2.
        for &dd in &delta {
            assert!((dd - cfg.max_step).abs() < 1e-6, "delta {dd}");
        }
    }

    #[test]
    fn boundary_peak_steps_at_half_trust() {
        let mut cfg = EngineConfig::default();
        cfg.lambda = 0.0;
        cfg.max_step = 10.0; // keep the clamp out of the way
        let sd = [4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut sv = [0.1f32; 9];
        sv[8] = 0.8; // strictly increasing toward the window edge
        let (_, delta) = run(&sd, &sv, 8.0, &cfg);
        let expected = (12.0 - 8.0) * 0.5; // peak 0.8 saturates the trust factor
        for &dd in &delta {
            assert!((dd - expected).abs() < 1e-6, "delta {dd} vs {expected}");
        }
    }

    #[test]
    fn all_sentinel_slice_is_inert() {
        let cfg = EngineConfig::default();
        let sd = [0.0, 1.0, 2.0];
        let sv = [COST_SENTINEL; 3];
        let (hidden2, delta) = run(&sd, &sv, 1.0, &cfg);
        assert!(delta.iter().all(|&dd| dd == 0.0));
        assert!(hidden2.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_respects_step_clamp() {
        let cfg = EngineConfig::default();
        let sd = [4.0, 8.0, 12.0]; // step 4, peak far right
        let sv = [0.0, 0.2, 1.0];
        let (_, delta) = run(&sd, &sv, 8.0, &cfg);
        for &dd in &delta {
            assert!(dd.abs() <= cfg.max_step + 1e-6);
        }
    }

    #[test]
    fn smoothing_pulls_outlier_toward_neighbors() {
        let cfg = EngineConfig::default();
        let (w, h) = (5, 5);
        // Flat cost everywhere: proposals equal current disparities, so the
        // smoothing pass acts alone.
        let sd = [6.0, 7.0, 8.0, 9.0, 10.0];
        let sv = [0.4; 5];
        let cost = slice_from_samples(w, h, &sd, &sv);
        let ctx = uniform_context(w, h);
        let mut values = vec![8.0f32; w * h];
        values[2 * w + 2] = 12.0; // spike
        let d = DisparityMap::from_parts(w, h, values, vec![true; w * h]).unwrap();
        let hidden = HiddenState::new(w, h, REFERENCE_HIDDEN_CHANNELS);
        let (_, delta) = reference_update(&hidden, &cost, &ctx, &d, &cfg);
        let spike_delta = delta[2 * w + 2];
        // lambda 0.5: halfway toward the neighbor average of 8 -> -2.
        assert!((spike_delta - (-2.0)).abs() < 1e-6, "spike delta {spike_delta}");
        // Direct neighbors get pulled up toward the spike slightly.
        assert!(delta[2 * w + 1] > 0.0);
    }

    #[test]
    fn edge_weight_blocks_smoothing_across_edges() {
        let cfg = EngineConfig::default();
        let (w, h) = (6, 4);
        let sd = [6.0, 7.0, 8.0, 9.0, 10.0];
        let sv = [0.4; 5];
        let cost = slice_from_samples(w, h, &sd, &sv);
        // Disparity step between columns 2 and 3 with an intensity edge
        // there: edge weight ~0 at the boundary columns.
        let mut ctx = uniform_context(w, h);
        for y in 0..h {
            ctx.edge[y * w + 2] = 1e-6;
            ctx.edge[y * w + 3] = 1e-6;
        }
        let mut values = vec![4.0f32; w * h];
        for y in 0..h {
            for x in 3..w {
                values[y * w + x] = 12.0;
            }
        }
        let d = DisparityMap::from_parts(w, h, values.clone(), vec![true; w * h]).unwrap();
        let hidden = HiddenState::new(w, h, REFERENCE_HIDDEN_CHANNELS);
        let (_, delta) = reference_update(&hidden, &cost, &ctx, &d, &cfg);
        // Interior pixels away from the edge see same-valued neighbors
        // dominate: nearly no drift.
        for y in 1..h - 1 {
            assert!(delta[y * w + 1].abs() < 0.05, "left side drifted {}", delta[y * w + 1]);
            assert!(delta[y * w + 4].abs() < 0.05, "right side drifted {}", delta[y * w + 4]);
        }
    }

    #[test]
    fn feature_channels_constant_matches_config() {
        // Guard: reference backend assumes 2 hidden channels.
        assert_eq!(REFERENCE_HIDDEN_CHANNELS, 2);
        let _ = FeatureConfig::default();
    }
}
