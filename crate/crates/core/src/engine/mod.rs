//! The temporal stereo state machine.
//!
//! A frame is processed in four stages: feature/context extraction, state
//! preparation (first-frame initialization, pose-based warping, or plain
//! reuse depending on the mode), a small number of lookup + update
//! iterations at quarter resolution, and a bilinear upsample back to full
//! resolution. The state carried between frames — disparity, hidden
//! aggregation state, pose — is what buys convergence with a single
//! iteration per frame instead of twenty.

pub mod config;
pub mod gru;
pub mod update;

pub use config::{Backend, EngineConfig, InitKind, Mode};
pub use gru::{gru_update, load_gru_weights, save_gru_weights, Conv3x3, GruWeights};
pub use update::{reference_update, MIN_VALID_DISPARITY, REFERENCE_HIDDEN_CHANNELS};

use crate::dataio::{read_gray, SequenceManifest};
use crate::error::{Error, Result};
use crate::geometry::{relative_pose, CameraRig, Pose};
use crate::grid::{box_downsample, upsample_bilinear, GrayF32};
use crate::matching::{extract_context, extract_features, lookup_window, FEATURE_SCALE};
use crate::warp::{warp_state, DisparityMap, HiddenState};
use std::time::Instant;

/// Warm-start payload carried from frame to frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    /// Disparity at feature (1/4) resolution, feature-pixel units.
    pub disparity: DisparityMap,
    pub hidden: HiddenState,
    /// Left-camera world-to-camera pose of the frame that produced this.
    pub pose: Pose,
    pub frame_index: usize,
}

/// Wall-clock stage timings for one processed frame, seconds.
#[derive(Debug, Clone, Default)]
pub struct FrameTiming {
    pub features_s: f64,
    /// Warping in full mode, initialization on first/cold frames.
    pub state_prep_s: f64,
    pub iteration_s: Vec<f64>,
    pub upsample_s: f64,
    pub total_s: f64,
    /// Set when the warp field came back all-invalid and the frame fell
    /// back to a fresh initialization.
    pub reinitialized: bool,
}

impl FrameTiming {
    pub fn iterations_total(&self) -> f64 {
        self.iteration_s.iter().sum()
    }
}

/// First-frame state: zero hidden, constant or block-matched disparity,
/// previous pose set equal to the current one.
pub fn init_state(
    left_q: &GrayF32,
    right_q: &GrayF32,
    pose: &Pose,
    cfg: &EngineConfig,
    hidden_channels: usize,
) -> FrameState {
    let (w, h) = (left_q.width, left_q.height);
    let disparity = match cfg.init {
        InitKind::Constant => DisparityMap::constant(w, h, cfg.init_disparity)
            .expect("init_disparity validated > 0"),
        InitKind::BlockMatch => block_match_init(left_q, right_q, cfg.init_disparity),
    };
    FrameState {
        disparity,
        hidden: HiddenState::new(w, h, hidden_channels),
        pose: *pose,
        frame_index: 0,
    }
}

/// Coarse 8x8 integer block matching, the reference stand-in for a learned
/// initializer. Each block gets the disparity minimizing mean absolute
/// intensity difference against the right image; blocks without enough
/// in-range pixels fall back to the configured constant.
fn block_match_init(left: &GrayF32, right: &GrayF32, fallback: f32) -> DisparityMap {
    const BLOCK: usize = 8;
    let (w, h) = (left.width, left.height);
    let d_max = (w / 2).min(64);
    let mut values = vec![fallback; w * h];
    for by in (0..h).step_by(BLOCK) {
        for bx in (0..w).step_by(BLOCK) {
            let x_end = (bx + BLOCK).min(w);
            let y_end = (by + BLOCK).min(h);
            let mut best = (f64::INFINITY, None::<usize>);
            for d in 0..=d_max {
                let mut sad = 0.0f64;
                let mut count = 0usize;
                for y in by..y_end {
                    for x in bx..x_end {
                        if x >= d {
                            sad += (left.at(x, y) - right.at(x - d, y)).abs() as f64;
                            count += 1;
                        }
                    }
                }
                if count * 4 >= (x_end - bx) * (y_end - by) {
                    let score = sad / count as f64;
                    if score < best.0 {
                        best = (score, Some(d));
                    }
                }
            }
            let d = best.1.map(|d| (d as f32).max(MIN_VALID_DISPARITY)).unwrap_or(fallback);
            for y in by..y_end {
                for x in bx..x_end {
                    values[y * w + x] = d;
                }
            }
        }
    }
    DisparityMap::from_parts(w, h, values, vec![true; w * h])
        .expect("block-match disparities are positive")
}

/// Fills masked-invalid pixels by averaging valid 4-neighbors (three Jacobi
/// passes, enough for typical disocclusion bands), then the fallback
/// constant for anything still isolated. Every pixel ends up valid.
fn fill_holes(d: &mut DisparityMap, fallback: f32) {
    let (w, h) = (d.width, d.height);
    if d.mask.iter().all(|&m| m) {
        return;
    }
    for _ in 0..3 {
        let prev_values = d.values.clone();
        let prev_mask = d.mask.clone();
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if prev_mask[i] {
                    continue;
                }
                let mut sum = 0.0f64;
                let mut n = 0u32;
                if x > 0 && prev_mask[i - 1] {
                    sum += prev_values[i - 1] as f64;
                    n += 1;
                }
                if x + 1 < w && prev_mask[i + 1] {
                    sum += prev_values[i + 1] as f64;
                    n += 1;
                }
                if y > 0 && prev_mask[i - w] {
                    sum += prev_values[i - w] as f64;
                    n += 1;
                }
                if y + 1 < h && prev_mask[i + w] {
                    sum += prev_values[i + w] as f64;
                    n += 1;
                }
                if n > 0 {
                    d.values[i] = ((sum / n as f64) as f32).max(MIN_VALID_DISPARITY);
                    d.mask[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for i in 0..w * h {
        if !d.mask[i] {
            d.values[i] = fallback;
            d.mask[i] = true;
        }
    }
}

/// Configured engine bound to one rig. Loads GRU weights once.
#[derive(Debug, Clone)]
pub struct Engine {
    rig: CameraRig,
    quarter_rig: CameraRig,
    cfg: EngineConfig,
    weights: Option<GruWeights>,
}

impl Engine {
    pub fn new(rig: CameraRig, cfg: EngineConfig) -> Result<Engine> {
        cfg.validate()?;
        let quarter_rig = rig.downscaled(FEATURE_SCALE)?;
        let weights = match cfg.backend {
            Backend::Reference => None,
            Backend::Gru => {
                let path = cfg.gru_weights.as_ref().ok_or_else(|| {
                    Error::validation("backend=gru requires gru_weights=<path>")
                })?;
                Some(load_gru_weights(path)?)
            }
        };
        Ok(Engine { rig, quarter_rig, cfg, weights })
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    fn hidden_channels(&self) -> usize {
        match self.cfg.backend {
            Backend::Reference => REFERENCE_HIDDEN_CHANNELS,
            Backend::Gru => self.weights.as_ref().expect("loaded in new").hidden,
        }
    }

    /// Processes one stereo frame, producing the full-resolution disparity
    /// map and the state for the next frame. The input state is never
    /// mutated, so callers can branch or replay from it.
    pub fn process_frame(
        &self,
        state: Option<&FrameState>,
        left: &GrayF32,
        right: &GrayF32,
        pose: &Pose,
    ) -> Result<(DisparityMap, FrameState, FrameTiming)> {
        let t_total = Instant::now();
        if left.width != self.rig.width
            || left.height != self.rig.height
            || right.width != self.rig.width
            || right.height != self.rig.height
        {
            return Err(Error::validation(format!(
                "images {}x{} / {}x{} do not match rig {}x{}",
                left.width, left.height, right.width, right.height, self.rig.width, self.rig.height
            )));
        }
        let mut timing = FrameTiming::default();
        let feat_cfg = self.cfg.feature_config();

        let t = Instant::now();
        let fl = extract_features(left, &feat_cfg)?;
        let fr = extract_features(right, &feat_cfg)?;
        let ctx = extract_context(left, &feat_cfg)?;
        timing.features_s = t.elapsed().as_secs_f64();

        let (qw, qh) = (fl.width, fl.height);
        let hidden_channels = self.hidden_channels();

        // State preparation.
        let t = Instant::now();
        let fresh = || -> Result<FrameState> {
            let lq = box_downsample(left, FEATURE_SCALE)?;
            let rq = box_downsample(right, FEATURE_SCALE)?;
            Ok(init_state(&lq, &rq, pose, &self.cfg, hidden_channels))
        };
        let (mut disparity, mut hidden, frame_index) = match (state, self.cfg.mode) {
            (None, _) | (Some(_), Mode::Cold) => {
                let init = fresh()?;
                let idx = state.map_or(0, |s| s.frame_index + 1);
                (init.disparity, init.hidden, idx)
            }
            (Some(s), mode) => {
                if s.disparity.width != qw || s.disparity.height != qh {
                    return Err(Error::validation(format!(
                        "carried state is {}x{}, expected {qw}x{qh}",
                        s.disparity.width, s.disparity.height
                    )));
                }
                if s.hidden.channels != hidden_channels {
                    return Err(Error::validation(format!(
                        "carried hidden state has {} channels, backend expects {hidden_channels}",
                        s.hidden.channels
                    )));
                }
                match mode {
                    Mode::Full => {
                        let rel = relative_pose(&s.pose, pose);
                        let (dw, zw) =
                            warp_state(&s.disparity, &s.hidden, &self.quarter_rig, &rel, self.cfg.beta);
                        if dw.valid_fraction() == 0.0 {
                            timing.reinitialized = true;
                            let init = fresh()?;
                            (init.disparity, init.hidden, s.frame_index + 1)
                        } else {
                            (dw, zw, s.frame_index + 1)
                        }
                    }
                    Mode::Fast => (s.disparity.clone(), s.hidden.clone(), s.frame_index + 1),
                    Mode::Cold => unreachable!("handled above"),
                }
            }
        };
        // Disoccluded holes continue the surrounding surface: a few Jacobi
        // passes of valid-neighbor averaging, then the initializer constant
        // for anything still uncovered. A constant fill here would seed
        // large-disparity outliers that the next warp smears around.
        fill_holes(&mut disparity, self.cfg.init_disparity);
        timing.state_prep_s = t.elapsed().as_secs_f64();

        // Refinement iterations.
        for _ in 0..self.cfg.iters_per_frame {
            let t = Instant::now();
            let cost = lookup_window(&fl, &fr, &disparity, self.cfg.lookup_radius, self.cfg.lookup_step)?;
            let (next_hidden, delta) = match self.cfg.backend {
                Backend::Reference => reference_update(&hidden, &cost, &ctx, &disparity, &self.cfg),
                Backend::Gru => gru_update(
                    &hidden,
                    &cost,
                    &ctx,
                    &disparity,
                    self.weights.as_ref().expect("loaded in new"),
                )?,
            };
            for i in 0..qw * qh {
                let dd = delta[i].clamp(-self.cfg.max_step, self.cfg.max_step);
                disparity.values[i] = (disparity.values[i] + dd).max(MIN_VALID_DISPARITY);
            }
            hidden = next_hidden;
            timing.iteration_s.push(t.elapsed().as_secs_f64());
        }

        // Upsample to full resolution; values scale with the resolution.
        let t = Instant::now();
        let mut full = upsample_bilinear(&disparity.values, qw, qh, FEATURE_SCALE);
        for v in full.iter_mut() {
            *v *= FEATURE_SCALE as f32;
        }
        let out = DisparityMap::from_parts(
            self.rig.width,
            self.rig.height,
            full,
            vec![true; self.rig.width * self.rig.height],
        )?;
        timing.upsample_s = t.elapsed().as_secs_f64();

        let state_out = FrameState { disparity, hidden, pose: *pose, frame_index };
        timing.total_s = t_total.elapsed().as_secs_f64();
        Ok((out, state_out, timing))
    }
}

/// One-shot frame processing without keeping an [`Engine`] around.
pub fn process_frame(
    state: Option<&FrameState>,
    left: &GrayF32,
    right: &GrayF32,
    pose: &Pose,
    rig: &CameraRig,
    cfg: &EngineConfig,
) -> Result<(DisparityMap, FrameState, FrameTiming)> {
    Engine::new(*rig, cfg.clone())?.process_frame(state, left, right, pose)
}

/// Streams a manifest's frames through [`Engine::process_frame`], carrying
/// state, and hands each full-resolution disparity map to `sink` in order.
/// Returns the per-frame stage timings.
///
/// Full mode requires poses in the manifest; other modes fall back to
/// identity poses when absent.
pub fn run_sequence<F>(
    engine: &Engine,
    manifest: &SequenceManifest,
    mut sink: F,
) -> Result<Vec<FrameTiming>>
where
    F: FnMut(usize, &DisparityMap, &FrameTiming) -> Result<()>,
{
    if engine.cfg.mode == Mode::Full && manifest.poses.is_none() {
        return Err(Error::validation("full mode requires poses in the manifest"));
    }
    let read = |i: usize, which: &str, rel: &std::path::Path| -> Result<GrayF32> {
        let path = manifest.resolve(rel);
        read_gray(&path)
            .map_err(|e| e.context(format!("frame {i} {which} image {}", path.display())))
    };
    let mut timings = Vec::with_capacity(manifest.len());
    let mut state: Option<FrameState> = None;
    for (i, entry) in manifest.frames.iter().enumerate() {
        let left = read(i, "left", &entry.left)?;
        let right = read(i, "right", &entry.right)?;
        let pose = manifest.poses.as_ref().map_or_else(Pose::identity, |p| p[i].1);
        let (disparity, next, timing) = engine.process_frame(state.as_ref(), &left, &right, &pose)?;
        sink(i, &disparity, &timing)?;
        timings.push(timing);
        state = Some(next);
    }
    Ok(timings)
}
