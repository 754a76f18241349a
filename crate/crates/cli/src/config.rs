use std::path::Path;

use lifecycle_rca::features::FeatureConfig;
use lifecycle_rca::gat::TrainConfig;
use lifecycle_rca::{Error, Result};
use serde::{Deserialize, Serialize};

/// Contents of the `--config` file for `train`, `fit-normal`, `localize` and
/// `eval`. Every key is optional.
///
/// ```toml
/// seed = 7
///
/// [features]
/// d_log = 32
/// standardize = "node"
///
/// [train]
/// epochs = 100
/// learning_rate = 0.004
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed`; itself overridden by `--seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply `--seed` and fold the top-level seed into the training config,
    /// then validate.
    pub fn resolve(mut self, seed_flag: Option<u64>) -> Result<Self> {
        if let Some(seed) = seed_flag.or(self.seed) {
            self.train.seed = seed;
        }
        self.seed = Some(self.train.seed);
        self.features.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}
