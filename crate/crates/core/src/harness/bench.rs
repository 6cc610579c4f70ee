//! Latency benchmarking: repeated serialized runs per configuration,
//! median per-frame wall clock with warmup frames excluded, plus the
//! (repeat-invariant) accuracy of each configuration.

use super::csv::{cell, csv_text};
use super::eval::{sequence_epe, EvalMask};
use crate::dataio::SequenceManifest;
use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub label: String,
    pub cfg: EngineConfig,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub label: String,
    pub iters: usize,
    /// Median per-frame wall clock across all repeats, milliseconds.
    pub latency_ms: f64,
    pub fps: f64,
    /// Pooled EPE over valid non-occluded pixels; identical across repeats
    /// by construction (verified).
    pub epe: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs every configuration `repeats` times over the manifest, strictly one
/// pipeline at a time, and reports median per-frame latency (frames before
/// `warmup` excluded) and EPE. Accuracy must not vary across repeats; if it
/// does, the engine is nondeterministic and the run fails loudly.
pub fn bench(
    manifest: &SequenceManifest,
    configs: &[BenchConfig],
    warmup: usize,
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    if repeats < 3 {
        return Err(Error::validation("bench needs at least 3 repeats"));
    }
    if warmup >= manifest.len() {
        return Err(Error::validation(format!(
            "warmup of {warmup} frames leaves nothing to time in a {}-frame sequence",
            manifest.len()
        )));
    }
    if configs.is_empty() {
        return Err(Error::validation("bench needs at least one configuration"));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for bc in configs {
        let engine = Engine::new(manifest.rig, bc.cfg.clone())
            .map_err(|e| e.context(format!("config {}", bc.label)))?;
        let mut latencies = Vec::new();
        let mut epe: Option<f64> = None;
        for _ in 0..repeats {
            let run = sequence_epe(&engine, manifest, EvalMask::NonOccluded)?;
            latencies.extend(run.timings.iter().skip(warmup).map(|t| t.total_s));
            match epe {
                None => epe = Some(run.pooled),
                Some(first) if first.to_bits() != run.pooled.to_bits() => {
                    return Err(Error::validation(format!(
                        "accuracy varied across repeats for config {}",
                        bc.label
                    )));
                }
                Some(_) => {}
            }
        }
        let latency_ms = 1000.0 * median(&mut latencies);
        rows.push(BenchRow {
            label: bc.label.clone(),
            iters: bc.cfg.iters_per_frame,
            latency_ms,
            fps: 1000.0 / latency_ms,
            epe: epe.expect("repeats >= 3"),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow], warmup: usize, repeats: usize) -> String {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![r.label.clone(), cell(r.iters), cell(r.latency_ms), cell(r.fps), cell(r.epe)]
        })
        .collect();
    let note = format!(
        "latency_ms = median per-frame wall clock over {repeats} repeats, first {warmup} frame(s) excluded as warmup"
    );
    csv_text(
        &[&note, "epe over valid non-occluded pixels"],
        &["label", "iters", "latency_ms", "fps", "epe"],
        &table,
    )
}
