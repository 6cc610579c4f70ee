//! Small statistics used by the benchmark and ablation reports: rank
//! correlation for trend checks and a least-squares line for runtime
//! scaling.

use crate::error::{Error, Result};

fn check_pairs(xs: &[f64], ys: &[f64], min_n: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::validation(format!(
            "paired samples disagree in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < min_n {
        return Err(Error::validation(format!("need at least {min_n} samples, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::validation("samples must be finite"));
    }
    Ok(())
}

/// Ranks with ties assigned the average of the positions they span.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite"));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the value; average 1-based rank.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::validation("correlation undefined for a constant sample"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys, 2)?;
    pearson(&ranks(xs), &ranks(ys))
}

/// Least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination of the fit.
    pub r2: f64,
}

/// Fits y ≈ slope·x + intercept and reports R².
pub fn affine_fit(xs: &[f64], ys: &[f64]) -> Result<AffineFit> {
    check_pairs(xs, ys, 2)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::validation("affine fit undefined for constant x"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // All-equal y fits exactly; otherwise 1 - residual/total variance.
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - (syy - slope * sxy) / syy };
    Ok(AffineFit { slope, intercept, r2 })
}
