//! Ablation drivers: each one sweeps a single factor over a sequence and
//! reports EPE, mirroring the questions "how much does pose accuracy
//! matter", "how fast can the camera move", "how long until a fresh start
//! converges", and "what does warping buy".
//!
//! EPE is pooled over valid non-occluded pixels (occluded pixels carry no
//! stereo evidence, and including them would blur the comparison between
//! configurations that only differ in how they track).

use super::csv::{cell, csv_text};
use super::eval::{sequence_epe, EvalMask};
use crate::dataio::{frame_skip, pose_noise, SequenceManifest};
use crate::engine::{Engine, EngineConfig, Mode};
use crate::error::{Error, Result};
use std::str::FromStr;

/// The factor an ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateKind {
    Noise,
    Speed,
    Init,
    Warp,
}

impl FromStr for AblateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<AblateKind> {
        match s {
            "noise" => Ok(AblateKind::Noise),
            "speed" => Ok(AblateKind::Speed),
            "init" => Ok(AblateKind::Init),
            "warp" => Ok(AblateKind::Warp),
            other => Err(Error::validation(format!(
                "unknown ablation kind '{other}' (expected noise, speed, init, or warp)"
            ))),
        }
    }
}

/// A fully parameterized ablation request.
#[derive(Debug, Clone)]
pub enum AblateSpec {
    /// Pose perturbation levels 0..=levels.
    Noise { levels: u32, seed: u64 },
    /// Frame-skip factors to evaluate in both full and fast modes.
    Speed { skips: Vec<usize> },
    /// Per-frame error of one run from a fresh start.
    Init,
    /// {full, fast} x {1x, skip x} grid.
    Warp { skip: usize },
}

fn pooled_epe(manifest: &SequenceManifest, cfg: &EngineConfig) -> Result<f64> {
    let engine = Engine::new(manifest.rig, cfg.clone())?;
    Ok(sequence_epe(&engine, manifest, EvalMask::NonOccluded)?.pooled)
}

/// EPE per pose-noise level. Each level draws its own perturbations so the
/// sweep samples independent corruptions of increasing magnitude, the way
/// the degradation would be measured on a real tracker.
pub fn ablate_noise(
    manifest: &SequenceManifest,
    cfg: &EngineConfig,
    levels: u32,
    seed: u64,
) -> Result<Vec<(u32, f64)>> {
    let mut rows = Vec::with_capacity(levels as usize + 1);
    for level in 0..=levels {
        let level_seed = seed.wrapping_add((level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noisy = pose_noise(manifest, level, level_seed)?;
        rows.push((level, pooled_epe(&noisy, cfg)?));
    }
    Ok(rows)
}

/// EPE per frame-skip factor, full vs fast mode on the same skipped
/// sequence.
pub fn ablate_speed(
    manifest: &SequenceManifest,
    cfg: &EngineConfig,
    skips: &[usize],
) -> Result<Vec<(usize, f64, f64)>> {
    if skips.is_empty() {
        return Err(Error::validation("speed ablation needs at least one skip factor"));
    }
    let mut rows = Vec::with_capacity(skips.len());
    for &k in skips {
        let skipped = frame_skip(manifest, k)?;
        let full = pooled_epe(&skipped, &EngineConfig { mode: Mode::Full, ..cfg.clone() })?;
        let fast = pooled_epe(&skipped, &EngineConfig { mode: Mode::Fast, ..cfg.clone() })?;
        rows.push((k, full, fast));
    }
    Ok(rows)
}

/// Per-frame EPE of a single run from a fresh start, for convergence plots.
pub fn ablate_init(
    manifest: &SequenceManifest,
    cfg: &EngineConfig,
) -> Result<Vec<(usize, f64)>> {
    let engine = Engine::new(manifest.rig, cfg.clone())?;
    Ok(sequence_epe(&engine, manifest, EvalMask::NonOccluded)?.per_frame)
}

/// The 2x2 warping grid: {full, fast} x {1x, skip x}.
pub fn ablate_warp(
    manifest: &SequenceManifest,
    cfg: &EngineConfig,
    skip: usize,
) -> Result<Vec<(&'static str, usize, f64)>> {
    let mut rows = Vec::with_capacity(4);
    for (name, mode) in [("full", Mode::Full), ("fast", Mode::Fast)] {
        for k in [1, skip] {
            let skipped = frame_skip(manifest, k)?;
            let epe = pooled_epe(&skipped, &EngineConfig { mode, ..cfg.clone() })?;
            rows.push((name, k, epe));
        }
    }
    Ok(rows)
}

const MASK_NOTE: &str = "epe over valid non-occluded pixels";

/// Runs the requested ablation and renders its CSV.
pub fn ablate(
    manifest: &SequenceManifest,
    cfg: &EngineConfig,
    spec: &AblateSpec,
) -> Result<String> {
    Ok(match spec {
        AblateSpec::Noise { levels, seed } => {
            let rows = ablate_noise(manifest, cfg, *levels, *seed)?;
            let table: Vec<Vec<String>> =
                rows.iter().map(|(l, e)| vec![cell(l), cell(e)]).collect();
            csv_text(
                &[
                    "level L: rotation noise U[0, 0.3*L deg], translation noise U[-0.001*L, 0.001*L] m per axis",
                    MASK_NOTE,
                ],
                &["level", "epe"],
                &table,
            )
        }
        AblateSpec::Speed { skips } => {
            let rows = ablate_speed(manifest, cfg, skips)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|(k, f, s)| vec![cell(k), cell(f), cell(s)])
                .collect();
            csv_text(
                &["frame skip k keeps every k-th frame, simulating k-times camera speed", MASK_NOTE],
                &["skip", "epe_full", "epe_fast"],
                &table,
            )
        }
        AblateSpec::Init => {
            let rows = ablate_init(manifest, cfg)?;
            let table: Vec<Vec<String>> =
                rows.iter().map(|(i, e)| vec![cell(i), cell(e)]).collect();
            csv_text(
                &["per-frame error of one run from a fresh start", MASK_NOTE],
                &["frame", "epe"],
                &table,
            )
        }
        AblateSpec::Warp { skip } => {
            let rows = ablate_warp(manifest, cfg, *skip)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|(m, k, e)| vec![m.to_string(), cell(k), cell(e)])
                .collect();
            csv_text(
                &["full warps state through the relative pose, fast reuses it as-is", MASK_NOTE],
                &["mode", "skip", "epe"],
                &table,
            )
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_sequence, SequenceSpec};
    use std::path::Path;

    fn dataset(dir: &Path, frames: usize) -> SequenceManifest {
        generate_sequence(11, dir, &SequenceSpec::standard(frames, 96, 72)).unwrap()
    }

    fn small_cfg() -> EngineConfig {
        EngineConfig { init_disparity: 1.5, ..EngineConfig::default() }
    }

    #[test]
    fn kind_names_parse_and_unknown_is_an_error() {
        assert_eq!("noise".parse::<AblateKind>().unwrap(), AblateKind::Noise);
        assert_eq!("warp".parse::<AblateKind>().unwrap(), AblateKind::Warp);
        let err = "blur".parse::<AblateKind>().unwrap_err();
        assert!(err.to_string().contains("blur"));
    }

    #[test]
    fn noise_sweep_emits_one_row_per_level_and_level_zero_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dataset(dir.path(), 4);
        let cfg = small_cfg();
        let rows = ablate_noise(&manifest, &cfg, 2, 99).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        // Level 0 leaves the poses untouched, so it must score exactly like
        // a plain run.
        let clean = pooled_epe(&manifest, &cfg).unwrap();
        assert_eq!(rows[0].1.to_bits(), clean.to_bits());
    }

    #[test]
    fn speed_rows_cover_both_modes() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dataset(dir.path(), 4);
        let rows = ablate_speed(&manifest, &small_cfg(), &[1, 2]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].0, rows[1].0), (1, 2));
        assert!(rows.iter().all(|r| r.1.is_finite() && r.2.is_finite()));
        assert!(ablate_speed(&manifest, &small_cfg(), &[]).is_err());
    }

    #[test]
    fn init_rows_follow_the_frames() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dataset(dir.path(), 5);
        let rows = ablate_init(&manifest, &small_cfg()).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn warp_grid_has_four_cells() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dataset(dir.path(), 4);
        let rows = ablate_warp(&manifest, &small_cfg(), 2).unwrap();
        let cells: Vec<(&str, usize)> = rows.iter().map(|r| (r.0, r.1)).collect();
        assert_eq!(cells, vec![("full", 1), ("full", 2), ("fast", 1), ("fast", 2)]);
        // The 1x full cell is the same run as speed's k=1 full column.
        let speed = ablate_speed(&manifest, &small_cfg(), &[1]).unwrap();
        assert_eq!(rows[0].2.to_bits(), speed[0].1.to_bits());
    }

    #[test]
    fn csv_dispatch_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dataset(dir.path(), 3);
        let cfg = small_cfg();
        for spec in [
            AblateSpec::Noise { levels: 1, seed: 5 },
            AblateSpec::Speed { skips: vec![1] },
            AblateSpec::Init,
            AblateSpec::Warp { skip: 2 },
        ] {
            let a = ablate(&manifest, &cfg, &spec).unwrap();
            let b = ablate(&manifest, &cfg, &spec).unwrap();
            assert_eq!(a, b);
            assert!(a.starts_with("#schema=v1\n"));
        }
    }
}
