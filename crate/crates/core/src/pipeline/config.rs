use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::{LossWeights, Stage};
use crate::morph::ModelDims;

/// Tetrahedral lattice used by the guide stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub res: usize,
    /// Half-width of the lattice cube around the origin.
    pub bound: f64,
    /// Band half-width in lattice spacings.
    pub band: f64,
    /// Steps between full re-evaluations of the lattice.
    pub refresh_every: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            res: 32,
            bound: 0.8,
            band: 2.0,
            refresh_every: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub lr_net: f64,
    pub lr_code: f64,
    pub lr_mean: f64,
    /// Views per step.
    pub batch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub deterministic: bool,
    pub dims: ModelDims,
    pub grid: GridConfig,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    /// Rendering happens at the image resolution divided by this, and `Psi`
    /// brings it back up.
    pub lr_factor: usize,
    pub log_every: usize,
    /// Training samples scored for the final PSNR (every n-th sample).
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::guide()
    }
}

impl TrainConfig {
    pub fn guide() -> Self {
        TrainConfig {
            stage: Stage::Guide,
            steps: 3000,
            lr_net: 1e-3,
            lr_code: 1e-3,
            lr_mean: 5e-4,
            batch: 4,
            seed: 0,
            weights: LossWeights::default(),
            deterministic: false,
            dims: ModelDims::default(),
            grid: GridConfig::default(),
            pretrain_steps: 200,
            pretrain_batch: 256,
            lr_factor: 2,
            log_every: 10,
            eval_stride: 10,
        }
    }

    pub fn gaussian() -> Self {
        TrainConfig {
            stage: Stage::Gaussian,
            steps: 5000,
            ..TrainConfig::guide()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Guide => Self::guide(),
            Stage::Gaussian => Self::gaussian(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.dims.validate()?;
        let rates = [self.lr_net, self.lr_code, self.lr_mean];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Invalid(format!("learning rates must be positive, got {rates:?}")));
        }
        if self.batch == 0 || self.lr_factor == 0 || self.log_every == 0 || self.eval_stride == 0 {
            return Err(Error::Invalid("batch, lr_factor, log_every and eval_stride must be positive".into()));
        }
        if self.grid.res < 4 || !(self.grid.bound > 0.0) || self.grid.refresh_every == 0 {
            return Err(Error::Invalid(format!("bad lattice settings {:?}", self.grid)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("train config", e.to_string()))
    }
}

/// Sets `key` (dotted, e.g. `weights.lap`) to `value` on any serializable
/// config. The value is read as JSON when it parses and as a bare string
/// otherwise. Unknown keys are rejected.
pub fn apply_override<C: Serialize + DeserializeOwned>(config: &C, key: &str, value: &str) -> Result<C> {
    let mut root = serde_json::to_value(config).map_err(|e| Error::format("config", e.to_string()))?;
    let mut node = &mut root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::Invalid(format!("unknown config key `{key}`")))?;
    }
    let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
    *node = parsed;
    serde_json::from_value(root).map_err(|e| Error::Invalid(format!("bad value for `{key}`: {e}")))
}

/// Applies `key=value` pairs in order.
pub fn apply_overrides<C: Serialize + DeserializeOwned>(config: &C, pairs: &[String]) -> Result<C> {
    let mut out = serde_json::from_value(serde_json::to_value(config).map_err(|e| Error::format("config", e.to_string()))?)
        .map_err(|e| Error::format("config", e.to_string()))?;
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("override `{pair}` is not key=value")))?;
        out = apply_override(&out, k.trim(), v.trim())?;
    }
    Ok(out)
}
