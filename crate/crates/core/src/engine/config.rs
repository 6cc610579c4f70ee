//! Engine configuration and its key=value text format.

use crate::error::{Error, Result};
use crate::matching::FeatureConfig;
use std::path::PathBuf;

/// Per-frame state handling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Warp disparity + hidden state through the relative pose each frame.
    Full,
    /// Reuse the previous state unwarped and halve feature channels.
    Fast,
    /// Re-initialize every frame (single-frame baseline).
    Cold,
}

/// Disparity update rule run each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Parabola peak refinement + edge-aware smoothing (default).
    Reference,
    /// Inference-only convolutional GRU with weights from file.
    Gru,
}

/// First-frame disparity initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Constant `init_disparity` everywhere.
    Constant,
    /// Coarse 8x8 block matching on the downsampled pair.
    BlockMatch,
}

/// All engine knobs. Parsed from key=value text; every field has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mode: Mode,
    pub backend: Backend,
    pub init: InitKind,
    /// Update iterations per frame (n >= 1).
    pub iters_per_frame: usize,
    /// Cost lookup radius in feature pixels.
    pub lookup_radius: usize,
    /// Lookup sample spacing; must divide the radius.
    pub lookup_step: usize,
    /// Softmax splat sharpness.
    pub beta: f64,
    /// Smoothing strength in [0, 1].
    pub lambda: f32,
    /// Per-iteration disparity step clamp, feature pixels.
    pub max_step: f32,
    /// Initial disparity for the constant initializer, feature pixels.
    pub init_disparity: f32,
    /// Exponential-average rate for the confidence hidden state.
    pub ema_alpha: f32,
    /// Edge-weight falloff for context extraction.
    pub sigma_edge: f32,
    /// Census window half-size.
    pub census_radius: usize,
    /// Weight file for the GRU backend.
    pub gru_weights: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            backend: Backend::Reference,
            init: InitKind::Constant,
            iters_per_frame: 1,
            lookup_radius: 4,
            lookup_step: 1,
            beta: 10.0,
            lambda: 0.5,
            max_step: 2.0,
            init_disparity: 8.0,
            ema_alpha: 0.25,
            sigma_edge: 0.1,
            census_radius: 2,
            gru_weights: None,
        }
    }
}

impl EngineConfig {
    /// Feature extractor settings implied by this configuration.
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            census_radius: self.census_radius,
            half_channels: self.mode == Mode::Fast,
            normalize: true,
            sigma_edge: self.sigma_edge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters_per_frame == 0 {
            return Err(Error::validation("iters_per_frame must be >= 1"));
        }
        if self.lookup_radius == 0 || self.lookup_step == 0 {
            return Err(Error::validation("lookup radius and step must be positive"));
        }
        if self.lookup_radius % self.lookup_step != 0 {
            return Err(Error::validation(format!(
                "lookup_step {} must divide lookup_radius {}",
                self.lookup_step, self.lookup_radius
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::validation(format!("beta {} must be >= 0", self.beta)));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::validation(format!("max_step {} must be > 0", self.max_step)));
        }
        if !(self.init_disparity > 0.0) {
            return Err(Error::validation(format!(
                "init_disparity {} must be > 0",
                self.init_disparity
            )));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::validation(format!("ema_alpha {} outside (0, 1]", self.ema_alpha)));
        }
        if !(self.sigma_edge > 0.0) {
            return Err(Error::validation(format!("sigma_edge {} must be > 0", self.sigma_edge)));
        }
        if self.census_radius == 0 {
            return Err(Error::validation("census_radius must be >= 1"));
        }
        Ok(())
    }

    /// Parses key=value text: one pair per line, `#` starts a comment,
    /// blank lines ignored. Unknown keys and malformed values are errors.
    pub fn parse(text: &str) -> Result<EngineConfig> {
        let mut cfg = EngineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::validation(format!("config line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::validation(format!("config line {}: bad {what} value {value:?}", lineno + 1))
            };
            match key {
                "mode" => {
                    cfg.mode = match value {
                        "full" => Mode::Full,
                        "fast" => Mode::Fast,
                        "cold" => Mode::Cold,
                        _ => return Err(bad("mode")),
                    }
                }
                "backend" => {
                    cfg.backend = match value {
                        "reference" => Backend::Reference,
                        "gru" => Backend::Gru,
                        _ => return Err(bad("backend")),
                    }
                }
                "init" => {
                    cfg.init = match value {
                        "constant" => InitKind::Constant,
                        "blockmatch" => InitKind::BlockMatch,
                        _ => return Err(bad("init")),
                    }
                }
                "iters_per_frame" => {
                    cfg.iters_per_frame = value.parse().map_err(|_| bad("iters_per_frame"))?
                }
                "lookup_radius" => {
                    cfg.lookup_radius = value.parse().map_err(|_| bad("lookup_radius"))?
                }
                "lookup_step" => cfg.lookup_step = value.parse().map_err(|_| bad("lookup_step"))?,
                "beta" => cfg.beta = value.parse().map_err(|_| bad("beta"))?,
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad("lambda"))?,
                "max_step" => cfg.max_step = value.parse().map_err(|_| bad("max_step"))?,
                "init_disparity" => {
                    cfg.init_disparity = value.parse().map_err(|_| bad("init_disparity"))?
                }
                "ema_alpha" => cfg.ema_alpha = value.parse().map_err(|_| bad("ema_alpha"))?,
                "sigma_edge" => cfg.sigma_edge = value.parse().map_err(|_| bad("sigma_edge"))?,
                "census_radius" => {
                    cfg.census_radius = value.parse().map_err(|_| bad("census_radius"))?
                }
                "gru_weights" => cfg.gru_weights = Some(PathBuf::from(value)),
                _ => {
                    return Err(Error::validation(format!(
                        "config line {}: unknown key {key:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file in the key=value format.
    pub fn from_file(path: &std::path::Path) -> Result<EngineConfig> {
        EngineConfig::parse(&std::fs::read_to_string(path)?)
    }
}
