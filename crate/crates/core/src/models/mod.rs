//! The four networks: large and small image encoders, the latent forecaster
//! and the action decoder with its mask head.

pub mod decoder;
pub mod dual;
pub mod encoder;
pub mod forecast;
pub mod layers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::world::{ActionPlan, Conditioning, ACTION_POINTS, TARGET_COUNT};

pub use decoder::{MaskLogits, MaskSource};
pub use dual::{Batch, BatchVars, EtaModel, Forward, ReactiveInputs, ReactiveOutput};
pub use encoder::{patchify, Provenance, TokenGrid, POOLED_TOKENS, TOKENS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
    pub pool: bool,
}

/// Depth of the small encoder for a given large depth: a third, at least one.
pub fn small_depth(large_depth: usize) -> usize {
    (large_depth / 3).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub large_depth: usize,
    pub decoder_depth: usize,
    pub forecast_depth: usize,
    /// MLP hidden width as a multiple of `dim`.
    pub mlp_ratio: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 4,
            large_depth: 6,
            decoder_depth: 2,
            forecast_depth: 2,
            mlp_ratio: 2,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn large(&self) -> EncoderConfig {
        EncoderConfig {
            depth: self.large_depth,
            dim: self.dim,
            heads: self.heads,
            patch: crate::world::PATCH,
            pool: true,
        }
    }

    pub fn small(&self) -> EncoderConfig {
        EncoderConfig {
            depth: small_depth(self.large_depth),
            ..self.large()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(format!(
                "model.heads ({}) must divide model.dim ({})",
                self.heads, self.dim
            ));
        }
        if self.large_depth == 0 || self.decoder_depth == 0 || self.mlp_ratio == 0 {
            return Err("model depths and mlp_ratio must be positive".into());
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err("model.init_std must be positive".into());
        }
        Ok(())
    }
}

/// Pipeline and training variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Forecast from stale large features, fused with the small encoder.
    Full,
    /// Stale large features fused directly, no forecaster.
    NoForecast,
    /// Forecast only; the small encoder is dropped.
    NoSmall,
    /// Trained like `Full` without the mask loss.
    NoMask,
    /// Small encoder alone.
    SmallOnly,
    /// Current-frame large features computed synchronously, trained that way.
    GtForecast,
    /// A `Full` checkpoint run with current-frame large features.
    GtForecastTestOnly,
    /// Single synchronous large encoder.
    Base,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Full,
        Mode::NoForecast,
        Mode::NoSmall,
        Mode::NoMask,
        Mode::SmallOnly,
        Mode::GtForecast,
        Mode::GtForecastTestOnly,
        Mode::Base,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoForecast => "no_forecast",
            Mode::NoSmall => "no_small",
            Mode::NoMask => "no_mask",
            Mode::SmallOnly => "small_only",
            Mode::GtForecast => "gt_forecast",
            Mode::GtForecastTestOnly => "gt_forecast_test_only",
            Mode::Base => "base",
        }
    }

    /// Mode whose checkpoint this mode evaluates.
    pub fn training_mode(self) -> Mode {
        match self {
            Mode::GtForecastTestOnly => Mode::Full,
            m => m,
        }
    }

    pub fn uses_small(self) -> bool {
        !matches!(self, Mode::NoSmall | Mode::Base)
    }

    pub fn uses_forecaster(self) -> bool {
        matches!(self, Mode::Full | Mode::NoSmall | Mode::NoMask)
    }

    /// Consumes large features of the frame `Δ` old.
    pub fn uses_stale_large(self) -> bool {
        matches!(self, Mode::Full | Mode::NoSmall | Mode::NoMask | Mode::NoForecast)
    }

    /// Runs the large encoder on the current frame inside the tick.
    pub fn uses_current_large(self) -> bool {
        matches!(self, Mode::GtForecast | Mode::GtForecastTestOnly | Mode::Base)
    }

    pub fn mask_source(self) -> Option<MaskSource> {
        match self {
            Mode::NoSmall => None,
            Mode::Base => Some(MaskSource::Large),
            _ => Some(MaskSource::Small),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

pub const SPEED_SCALE: f64 = 1.0 / 6.0;
pub const TARGET_SCALE: f64 = 1.0 / 10.0;
pub const RESIDUAL_SCALE: f64 = 1.0 / 3.0;
/// Width of the conditioning row fed to the decoder.
pub const COND_DIM: usize = 1 + 2 * TARGET_COUNT;
/// Width of the forecaster's conditioning row: action residuals and
/// conditioning.
pub const FORECAST_COND_DIM: usize = 2 * ACTION_POINTS + COND_DIM;

pub fn cond_features(c: &Conditioning) -> Vec<f64> {
    let mut v = vec![c.speed * SPEED_SCALE];
    v.extend(c.targets.iter().flatten().map(|x| x * TARGET_SCALE));
    v
}

pub fn forecast_features(action: &ActionPlan, c: &Conditioning) -> Vec<f64> {
    let mut v: Vec<f64> = action.residual_vec().iter().map(|r| r * RESIDUAL_SCALE).collect();
    v.extend(cond_features(c));
    v
}
