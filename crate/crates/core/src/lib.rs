//! Video stereo matching with temporal state reuse.
//!
//! The engine estimates a left-view disparity map for each frame of a
//! rectified stereo video. Instead of solving every frame from scratch, it
//! forward-warps the previous frame's disparity and aggregation state into
//! the current camera frame using the known relative pose, then refines with
//! a small per-frame iteration budget.
//!
//! Modules:
//! - [`geometry`]: rectified-stereo coordinate algebra (Q matrix, poses, the
//!   temporal stereo-point transform).
//! - [`warp`]: occlusion-aware forward warping of disparity and hidden state.
//! - [`matching`]: feature extraction and on-the-fly windowed cost lookup.
//! - [`engine`]: the per-frame state machine (full / fast / cold modes).
//! - [`dataio`]: synthetic sequence generation and all file formats.
//! - [`harness`]: metrics, benchmarks, and ablation drivers.

pub mod dataio;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod matching;
pub mod warp;

pub use error::{Error, Result};
