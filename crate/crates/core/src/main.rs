//! Command-line surface: dataset generation, sequence processing,
//! evaluation, benchmarking, and ablations, glued together by files on
//! disk (manifest + PFM predictions + CSV reports).

use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use vstereo::dataio::{generate_sequence, load_manifest, write_pfm, ScenePreset, SequenceSpec, TrajectoryParams};
use vstereo::engine::{run_sequence, Engine, EngineConfig};
use vstereo::harness::{
    ablate, bench, bench_csv, cell, csv_text, eval_sequence, prediction_name, AblateSpec,
    BadKind, BenchConfig, EvalMask, EvalOptions,
};
use vstereo::{Error, Result};

#[derive(Parser)]
#[command(name = "vstereo", version, about = "Video stereo matching over synthetic sequences")]
struct Cli {
    /// Seed for anything randomized (generation, noise draws).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Engine configuration file (key=value lines); defaults apply if omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory; each subcommand picks a sensible default.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Random panels and spheres in front of a backdrop, moving camera.
    Standard,
    /// Wall plus one floating square panel, static camera.
    TwoPlane,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    /// Every pixel with valid ground truth.
    All,
    /// Valid pixels not flagged occluded.
    Noc,
    /// Valid pixels flagged occluded.
    Occ,
}

#[derive(Clone, Copy, ValueEnum)]
enum BadArg {
    /// Mean error over the worst p% of pixels.
    MeanWorst,
    /// p-th upper percentile error value.
    Percentile,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Noise,
    Speed,
    Init,
    Warp,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stereo sequence with ground truth.
    Gen {
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long, default_value_t = 0.1)]
        baseline: f64,
        #[arg(long, value_enum, default_value_t = PresetArg::Standard)]
        preset: PresetArg,
    },
    /// Process a sequence and write per-frame disparity predictions.
    Run {
        /// Manifest of the sequence to process.
        manifest: PathBuf,
    },
    /// Score predictions against a sequence's ground truth.
    Eval {
        /// Directory of 0000.pfm, 0001.pfm, ... predictions.
        predictions: PathBuf,
        /// Manifest with ground truth.
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = MaskArg::All)]
        mask: MaskArg,
        #[arg(long, value_enum, default_value_t = BadArg::MeanWorst)]
        bad: BadArg,
    },
    /// Time a set of engine configurations over one sequence.
    Bench {
        manifest: PathBuf,
        /// Text file with one `label config-path` pair per line.
        configs: PathBuf,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Sweep one factor and report EPE.
    Ablate {
        #[arg(value_enum)]
        kind: KindArg,
        manifest: PathBuf,
        /// Highest pose-noise level (kind: noise).
        #[arg(long, default_value_t = 10)]
        levels: u32,
        /// Frame-skip factors (kind: speed).
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 6])]
        skips: Vec<usize>,
        /// Frame-skip factor for the warped-vs-unwarped grid (kind: warp).
        #[arg(long, default_value_t = 6)]
        skip: usize,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(match err {
            Error::Io(_) => 2,
            Error::Format(_) | Error::Validation(_) => 3,
        });
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::from_file(p).map_err(|e| e.context(p.display().to_string())),
        None => Ok(EngineConfig::default()),
    }
}

fn out_dir(requested: &Option<PathBuf>, default: &Path) -> Result<PathBuf> {
    let dir = requested.clone().unwrap_or_else(|| default.to_path_buf());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn dispatch(cli: Cli) -> Result<()> {
    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match cli.command {
        Command::Gen { frames, width, height, baseline, preset } => {
            let spec = SequenceSpec {
                n_frames: frames,
                width,
                height,
                baseline,
                preset: match preset {
                    PresetArg::Standard => ScenePreset::Standard,
                    PresetArg::TwoPlane => ScenePreset::TwoPlane,
                },
                trajectory: match preset {
                    PresetArg::Standard => TrajectoryParams::default(),
                    PresetArg::TwoPlane => TrajectoryParams::static_camera(),
                },
            };
            let dir = out_dir(&cli.out, Path::new("out"))?;
            generate_sequence(cli.seed, &dir, &spec)?;
            say(format!(
                "wrote {frames}-frame sequence to {} (manifest.txt, left/, right/, gt/, occ/)",
                dir.display()
            ));
        }
        Command::Run { manifest } => {
            let m = load_manifest(&manifest)?;
            let engine = Engine::new(m.rig, load_config(&cli.config)?)?;
            let dir = out_dir(&cli.out, Path::new("pred"))?;
            let timings = run_sequence(&engine, &m, |i, d, _| {
                write_pfm(&dir.join(prediction_name(i)), d)
            })?;
            let rows: Vec<Vec<String>> = timings
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    vec![
                        cell(i),
                        cell(t.features_s),
                        cell(t.state_prep_s),
                        cell(t.iterations_total()),
                        cell(t.upsample_s),
                        cell(t.total_s),
                        cell(u8::from(t.reinitialized)),
                    ]
                })
                .collect();
            let csv = csv_text(
                &["per-frame wall-clock stage timings, seconds"],
                &["frame", "features_s", "state_prep_s", "iterations_s", "upsample_s", "total_s", "reinitialized"],
                &rows,
            );
            std::fs::write(dir.join("timing.csv"), csv)?;
            say(format!("wrote {} predictions and timing.csv to {}", timings.len(), dir.display()));
        }
        Command::Eval { predictions, manifest, mask, bad } => {
            let m = load_manifest(&manifest)?;
            let options = EvalOptions {
                mask: match mask {
                    MaskArg::All => EvalMask::AllValid,
                    MaskArg::Noc => EvalMask::NonOccluded,
                    MaskArg::Occ => EvalMask::OccludedOnly,
                },
                bad_kind: match bad {
                    BadArg::MeanWorst => BadKind::MeanWorst,
                    BadArg::Percentile => BadKind::Percentile,
                },
            };
            let report = eval_sequence(&predictions, &m, &options)?;
            let dir = out_dir(&cli.out, &predictions)?;
            let path = dir.join("metrics.csv");
            std::fs::write(&path, report.to_csv())?;
            let a = &report.aggregate;
            say(format!(
                "wrote {} (aggregate: epe {:.4} px, d1 {:.2}%, bad1 {:.4} px over {} pixels)",
                path.display(),
                a.epe,
                a.d1,
                a.bad1,
                a.valid
            ));
        }
        Command::Bench { manifest, configs, warmup, repeats } => {
            let m = load_manifest(&manifest)?;
            let list = read_bench_configs(&configs)?;
            let rows = bench(&m, &list, warmup, repeats)?;
            let dir = out_dir(&cli.out, Path::new("."))?;
            let path = dir.join("bench.csv");
            std::fs::write(&path, bench_csv(&rows, warmup, repeats))?;
            say(format!("wrote {} ({} configs)", path.display(), rows.len()));
        }
        Command::Ablate { kind, manifest, levels, skips, skip } => {
            let m = load_manifest(&manifest)?;
            let cfg = load_config(&cli.config)?;
            let (spec, name) = match kind {
                KindArg::Noise => (AblateSpec::Noise { levels, seed: cli.seed }, "noise"),
                KindArg::Speed => (AblateSpec::Speed { skips }, "speed"),
                KindArg::Init => (AblateSpec::Init, "init"),
                KindArg::Warp => (AblateSpec::Warp { skip }, "warp"),
            };
            let csv = ablate(&m, &cfg, &spec)?;
            let dir = out_dir(&cli.out, Path::new("."))?;
            let path = dir.join(format!("{name}.csv"));
            std::fs::write(&path, csv)?;
            say(format!("wrote {}", path.display()));
        }
    }
    Ok(())
}

/// Parses a bench configs file: one `label path` pair per line, `#`
/// comments, relative paths resolved against the file's directory.
fn read_bench_configs(path: &Path) -> Result<Vec<BenchConfig>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (label, rel) = line.split_once(char::is_whitespace).ok_or_else(|| {
            Error::validation(format!(
                "{}: line {}: expected `label config-path`, got {raw:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let cfg_path = base.join(rel.trim());
        let cfg = EngineConfig::from_file(&cfg_path)
            .map_err(|e| e.context(cfg_path.display().to_string()))?;
        out.push(BenchConfig { label: label.to_string(), cfg });
    }
    if out.is_empty() {
        return Err(Error::validation(format!("{}: no configurations listed", path.display())));
    }
    Ok(out)
}
