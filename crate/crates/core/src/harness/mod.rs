//! Evaluation and experiment harness: disparity metrics with strict
//! contracts, sequence evaluation reports, latency benchmarking, ablation
//! sweeps, and the CSV they all emit.

pub mod ablate;
pub mod bench;
pub mod csv;
pub mod eval;
pub mod metrics;
pub mod stats;

pub use ablate::{ablate, ablate_init, ablate_noise, ablate_speed, ablate_warp, AblateKind, AblateSpec};
pub use bench::{bench, bench_csv, BenchConfig, BenchRow};
pub use csv::{cell, csv_text, write_csv, SCHEMA_LINE};
pub use eval::{
    eval_sequence, prediction_name, sequence_epe, EvalMask, EvalOptions, MetricsReport,
    SequenceEpe,
};
pub use metrics::{bad_percentile, bad_percentile_with, d_thresh, epe, BadKind, FrameMetrics};
pub use stats::{affine_fit, spearman, AffineFit};
