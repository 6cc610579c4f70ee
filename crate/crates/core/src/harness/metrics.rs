//! Disparity error metrics.
//!
//! All metrics take parallel value slices plus a mask selecting the pixels
//! under evaluation, and fail on an empty selection rather than returning a
//! silent NaN. Errors are |predicted − truth| in pixels, accumulated in f64.

use crate::error::{Error, Result};

/// How the "bad p%" statistic condenses the worst pixels into one number.
/// The benchmark literature is split between the two readings; the report
/// header states which one was used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BadKind {
    /// Mean absolute error over the worst ⌈p%·N⌉ pixels.
    #[default]
    MeanWorst,
    /// The p-th upper percentile value: the smallest error among the worst
    /// ⌈p%·N⌉ pixels.
    Percentile,
}

impl BadKind {
    /// One-line description for CSV header comments.
    pub fn describe(self) -> &'static str {
        match self {
            BadKind::MeanWorst => "bad_p = mean |error| over the worst p% of pixels",
            BadKind::Percentile => "bad_p = p-th upper percentile of |error|",
        }
    }
}

/// Absolute errors over the masked pixels, in mask order.
fn masked_errors(d: &[f32], gt: &[f32], mask: &[bool]) -> Result<Vec<f64>> {
    if d.len() != gt.len() || d.len() != mask.len() {
        return Err(Error::validation(format!(
            "metric inputs disagree in length: {} vs {} values, {} mask entries",
            d.len(),
            gt.len(),
            mask.len()
        )));
    }
    let errors: Vec<f64> = mask
        .iter()
        .zip(d.iter().zip(gt))
        .filter(|(&m, _)| m)
        .map(|(_, (&a, &b))| (a as f64 - b as f64).abs())
        .collect();
    if errors.is_empty() {
        return Err(Error::validation("metric mask selects no pixels"));
    }
    Ok(errors)
}

fn mean(errors: &[f64]) -> f64 {
    errors.iter().sum::<f64>() / errors.len() as f64
}

/// Strictly-greater threshold count, as a percentage of the selection.
fn percent_above(errors: &[f64], tau: f64) -> f64 {
    let bad = errors.iter().filter(|&&e| e > tau).count();
    100.0 * bad as f64 / errors.len() as f64
}

/// Number of "worst" pixels for percentage p: ⌈p%·N⌉, at least 1.
fn worst_count(n: usize, p: f64) -> usize {
    ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n)
}

fn bad_from_sorted(sorted_desc: &[f64], p: f64, kind: BadKind) -> f64 {
    let k = worst_count(sorted_desc.len(), p);
    match kind {
        BadKind::MeanWorst => mean(&sorted_desc[..k]),
        BadKind::Percentile => sorted_desc[k - 1],
    }
}

/// Mean absolute disparity error over the masked pixels.
pub fn epe(d: &[f32], gt: &[f32], mask: &[bool]) -> Result<f64> {
    Ok(mean(&masked_errors(d, gt, mask)?))
}

/// Percentage of masked pixels with error strictly greater than `tau`.
pub fn d_thresh(d: &[f32], gt: &[f32], mask: &[bool], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::validation("d_thresh threshold must be > 0"));
    }
    Ok(percent_above(&masked_errors(d, gt, mask)?, tau))
}

/// Error statistic over the worst `p`% of masked pixels, using the default
/// [`BadKind::MeanWorst`] interpretation.
pub fn bad_percentile(d: &[f32], gt: &[f32], mask: &[bool], p: f64) -> Result<f64> {
    bad_percentile_with(d, gt, mask, p, BadKind::MeanWorst)
}

/// [`bad_percentile`] with an explicit interpretation.
pub fn bad_percentile_with(
    d: &[f32],
    gt: &[f32],
    mask: &[bool],
    p: f64,
    kind: BadKind,
) -> Result<f64> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::validation("bad percentile p must be in (0, 100]"));
    }
    let mut errors = masked_errors(d, gt, mask)?;
    errors.sort_unstable_by(|a, b| b.partial_cmp(a).expect("errors are finite"));
    Ok(bad_from_sorted(&errors, p, kind))
}

/// The full metric panel for one pixel selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    /// Number of pixels evaluated.
    pub valid: usize,
    pub epe: f64,
    /// Percent of pixels with error > 1, 3, 5 px.
    pub d1: f64,
    pub d3: f64,
    pub d5: f64,
    /// Worst-1%, 3%, 5% error statistic (interpretation per [`BadKind`]).
    pub bad1: f64,
    pub bad3: f64,
    pub bad5: f64,
}

impl FrameMetrics {
    /// Computes every metric from one masked-error pass. Identical
    /// arithmetic to the standalone functions, which the tests rely on.
    pub fn compute(d: &[f32], gt: &[f32], mask: &[bool], kind: BadKind) -> Result<FrameMetrics> {
        let mut errors = masked_errors(d, gt, mask)?;
        let (epe, d1, d3, d5) =
            (mean(&errors), percent_above(&errors, 1.0), percent_above(&errors, 3.0), percent_above(&errors, 5.0));
        errors.sort_unstable_by(|a, b| b.partial_cmp(a).expect("errors are finite"));
        Ok(FrameMetrics {
            valid: errors.len(),
            epe,
            d1,
            d3,
            d5,
            bad1: bad_from_sorted(&errors, 1.0, kind),
            bad3: bad_from_sorted(&errors, 3.0, kind),
            bad5: bad_from_sorted(&errors, 5.0, kind),
        })
    }
}
