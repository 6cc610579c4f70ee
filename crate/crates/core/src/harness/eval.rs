//! Sequence evaluation: pairs prediction files with ground truth from a
//! manifest and renders per-frame metric rows plus a pooled aggregate.

use super::csv::{cell, csv_text};
use super::metrics::{BadKind, FrameMetrics};
use crate::dataio::{read_gray, read_pfm, SequenceManifest};
use crate::engine::{run_sequence, Engine};
use crate::error::{Error, Result};
use crate::warp::DisparityMap;
use std::path::Path;

/// Which pixels a report covers. Ground truth must be valid in every case;
/// the occlusion variants additionally consult the manifest's occlusion
/// masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMask {
    /// Every pixel with valid ground truth.
    #[default]
    AllValid,
    /// Valid pixels not flagged occluded. Frames without an occlusion mask
    /// fall back to all valid pixels.
    NonOccluded,
    /// Valid pixels flagged occluded. Frames without an occlusion mask are
    /// an error, since the selection would be meaningless.
    OccludedOnly,
}

impl EvalMask {
    pub fn describe(self) -> &'static str {
        match self {
            EvalMask::AllValid => "mask: all pixels with valid ground truth",
            EvalMask::NonOccluded => "mask: valid and not occluded",
            EvalMask::OccludedOnly => "mask: valid and occluded",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub mask: EvalMask,
    pub bad_kind: BadKind,
}

/// Per-frame metric rows plus the pooled-over-all-pixels aggregate.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub options: EvalOptions,
    /// (manifest frame index, metrics) for every ground-truth-bearing frame.
    pub rows: Vec<(usize, FrameMetrics)>,
    /// Computed over the union of all evaluated pixels, so it equals the
    /// valid-count-weighted mean of the rows.
    pub aggregate: FrameMetrics,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let header =
            ["frame", "valid", "epe", "d1", "d3", "d5", "bad1", "bad3", "bad5"];
        let row = |label: String, m: &FrameMetrics| {
            vec![
                label,
                cell(m.valid),
                cell(m.epe),
                cell(m.d1),
                cell(m.d3),
                cell(m.d5),
                cell(m.bad1),
                cell(m.bad3),
                cell(m.bad5),
            ]
        };
        let mut rows: Vec<Vec<String>> =
            self.rows.iter().map(|(i, m)| row(i.to_string(), m)).collect();
        rows.push(row("aggregate".into(), &self.aggregate));
        csv_text(
            &[self.options.bad_kind.describe(), self.options.mask.describe()],
            &header,
            &rows,
        )
    }
}

/// The evaluation mask for one frame, or an error if the policy cannot be
/// satisfied.
fn frame_mask(
    gt: &DisparityMap,
    occluded: Option<&[bool]>,
    policy: EvalMask,
) -> Result<Vec<bool>> {
    match (policy, occluded) {
        (EvalMask::AllValid, _) | (EvalMask::NonOccluded, None) => Ok(gt.mask.clone()),
        (EvalMask::NonOccluded, Some(occ)) => {
            Ok(gt.mask.iter().zip(occ).map(|(&v, &o)| v && !o).collect())
        }
        (EvalMask::OccludedOnly, Some(occ)) => {
            Ok(gt.mask.iter().zip(occ).map(|(&v, &o)| v && o).collect())
        }
        (EvalMask::OccludedOnly, None) => {
            Err(Error::validation("occluded-only evaluation needs occlusion masks"))
        }
    }
}

/// Ground truth and occlusion flags for one manifest frame, if it has any.
fn load_truth(
    manifest: &SequenceManifest,
    index: usize,
) -> Result<Option<(DisparityMap, Option<Vec<bool>>)>> {
    let entry = &manifest.frames[index];
    let Some(gt_rel) = &entry.gt else { return Ok(None) };
    let gt = read_pfm(&manifest.resolve(gt_rel))
        .map_err(|e| e.context(format!("frame {index} ground truth")))?;
    let occ = match &entry.occlusion {
        Some(rel) => {
            let img = read_gray(&manifest.resolve(rel))
                .map_err(|e| e.context(format!("frame {index} occlusion mask")))?;
            if (img.width, img.height) != (gt.width, gt.height) {
                return Err(Error::validation(format!(
                    "frame {index}: occlusion mask is {}x{} but ground truth is {}x{}",
                    img.width, img.height, gt.width, gt.height
                )));
            }
            Some(img.data.iter().map(|&v| v > 0.5).collect())
        }
        None => None,
    };
    Ok(Some((gt, occ)))
}

/// Standard prediction filename for a manifest frame index.
pub fn prediction_name(index: usize) -> String {
    format!("{index:04}.pfm")
}

/// Evaluates the predictions in `pred_dir` (named `0000.pfm`, `0001.pfm`, …
/// by manifest frame index) against the manifest's ground truth.
///
/// Predictions are treated as dense: ground truth decides which pixels are
/// evaluated, and a prediction's own invalid pixels just contribute their
/// zero value as error.
pub fn eval_sequence(
    pred_dir: &Path,
    manifest: &SequenceManifest,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let gt_frames: Vec<usize> = (0..manifest.len())
        .filter(|&i| manifest.frames[i].gt.is_some())
        .collect();
    if gt_frames.is_empty() {
        return Err(Error::validation("manifest has no ground-truth frames to evaluate"));
    }
    let missing: Vec<String> = gt_frames
        .iter()
        .map(|&i| prediction_name(i))
        .filter(|name| !pred_dir.join(name).exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "{} prediction file(s) missing from {}: {}",
            missing.len(),
            pred_dir.display(),
            missing.join(", ")
        )));
    }

    let mut rows = Vec::with_capacity(gt_frames.len());
    let mut pool_d: Vec<f32> = Vec::new();
    let mut pool_gt: Vec<f32> = Vec::new();
    for &i in &gt_frames {
        let (gt, occ) = load_truth(manifest, i)?.expect("filtered to gt-bearing frames");
        let pred = read_pfm(&pred_dir.join(prediction_name(i)))
            .map_err(|e| e.context(format!("frame {i} prediction")))?;
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::validation(format!(
                "frame {i}: prediction is {}x{} but ground truth is {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        let mask = frame_mask(&gt, occ.as_deref(), options.mask)
            .map_err(|e| e.context(format!("frame {i}")))?;
        let m = FrameMetrics::compute(&pred.values, &gt.values, &mask, options.bad_kind)
            .map_err(|e| e.context(format!("frame {i}")))?;
        rows.push((i, m));
        for (j, &keep) in mask.iter().enumerate() {
            if keep {
                pool_d.push(pred.values[j]);
                pool_gt.push(gt.values[j]);
            }
        }
    }
    let aggregate =
        FrameMetrics::compute(&pool_d, &pool_gt, &vec![true; pool_d.len()], options.bad_kind)?;
    Ok(MetricsReport { options: *options, rows, aggregate })
}

/// Pooled and per-frame end-point error of an engine run, computed in
/// memory (no prediction files). Shared by the benchmark and ablation
/// drivers.
#[derive(Debug, Clone)]
pub struct SequenceEpe {
    /// Mean over all evaluated pixels of all ground-truth frames.
    pub pooled: f64,
    /// (manifest frame index, frame EPE).
    pub per_frame: Vec<(usize, f64)>,
    /// Stage timings for every processed frame, GT-bearing or not.
    pub timings: Vec<crate::engine::FrameTiming>,
}

pub fn sequence_epe(
    engine: &Engine,
    manifest: &SequenceManifest,
    mask: EvalMask,
) -> Result<SequenceEpe> {
    let mut per_frame = Vec::new();
    let mut pool_sum = 0.0f64;
    let mut pool_n = 0usize;
    let timings = run_sequence(engine, manifest, |i, d, _| {
        let Some((gt, occ)) = load_truth(manifest, i)? else { return Ok(()) };
        let sel = frame_mask(&gt, occ.as_deref(), mask)
            .map_err(|e| e.context(format!("frame {i}")))?;
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for j in 0..sel.len() {
            if sel[j] {
                sum += (d.values[j] as f64 - gt.values[j] as f64).abs();
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::validation(format!("frame {i}: metric mask selects no pixels")));
        }
        per_frame.push((i, sum / n as f64));
        pool_sum += sum;
        pool_n += n;
        Ok(())
    })?;
    if pool_n == 0 {
        return Err(Error::validation("sequence has no ground-truth frames to evaluate"));
    }
    Ok(SequenceEpe { pooled: pool_sum / pool_n as f64, per_frame, timings })
}
