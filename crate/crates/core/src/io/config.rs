use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{from_json, read_text};
use crate::anchors::{DEFAULT_RAYS_PER_SAMPLE, DEFAULT_SAMPLES_PER_BONE};
use crate::error::{Error, Result};
use crate::objectives::{LossWeights, SceneOptions};
use crate::optimizer::{OptimConfig, UpdateRule};
use crate::projection::{DEFAULT_K, DEFAULT_TAU};
use crate::proximity::{DEFAULT_ALPHA, D_MAX_FRACTION, D_MIN_FRACTION};

/// Every tunable of a retargeting run. Missing fields take their defaults,
/// so an empty file is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weights: LossWeights,
    pub alpha: f64,
    pub k: usize,
    pub tau_init: f64,
    pub steps: usize,
    pub lr_anchor: f64,
    pub lr_pose: f64,
    pub rule: UpdateRule,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Lower weight threshold as a fraction of the source height.
    pub d_min_fraction: f64,
    /// Upper weight threshold as a fraction of the source height.
    pub d_max_fraction: f64,
    /// Contact threshold in length units; `None` uses 1% of character height.
    pub delta_c: Option<f64>,
    pub samples_per_bone: usize,
    pub rays_per_sample: usize,
    pub seed: u64,
    pub window: Option<usize>,
    pub freeze_anchors: bool,
    pub divergence_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let optim = OptimConfig::default();
        RunConfig {
            weights: LossWeights::default(),
            alpha: DEFAULT_ALPHA,
            k: DEFAULT_K,
            tau_init: DEFAULT_TAU,
            steps: optim.steps,
            lr_anchor: optim.lr_anchor,
            lr_pose: optim.lr_pose,
            rule: optim.rule,
            momentum: optim.momentum,
            beta1: optim.beta1,
            beta2: optim.beta2,
            epsilon: optim.epsilon,
            d_min_fraction: D_MIN_FRACTION,
            d_max_fraction: D_MAX_FRACTION,
            delta_c: None,
            samples_per_bone: DEFAULT_SAMPLES_PER_BONE,
            rays_per_sample: DEFAULT_RAYS_PER_SAMPLE,
            seed: optim.seed,
            window: optim.window,
            freeze_anchors: optim.freeze_anchors,
            divergence_factor: optim.divergence_factor,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                detail: e.message().to_string(),
            }
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: RunConfig = from_json(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Load a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(self.d_min_fraction >= 0.0 && self.d_max_fraction > self.d_min_fraction) {
            return Err(Error::config("weight thresholds need 0 <= d_min_fraction < d_max_fraction"));
        }
        if let Some(d) = self.delta_c {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::config(format!("delta_c must be positive, got {d}")));
            }
        }
        if self.samples_per_bone == 0 || self.rays_per_sample == 0 {
            return Err(Error::config("samples_per_bone and rays_per_sample must be at least 1"));
        }
        self.optim().validate()
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            steps: self.steps,
            lr_anchor: self.lr_anchor,
            lr_pose: self.lr_pose,
            tau_init: self.tau_init,
            rule: self.rule,
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            window: self.window,
            seed: self.seed,
            freeze_anchors: self.freeze_anchors,
            divergence_factor: self.divergence_factor,
        }
    }

    pub fn scene_options(&self) -> SceneOptions {
        SceneOptions {
            weights: self.weights,
            alpha: self.alpha,
            k: self.k,
            d_min_fraction: self.d_min_fraction,
            d_max_fraction: self.d_max_fraction,
        }
    }
}
