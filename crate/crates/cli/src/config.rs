use std::path::Path;

use amodal_ls::dataset::SceneConfig;
use amodal_ls::nn::train::TrainConfig;
use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::UserError;

/// Layered configuration: built-in defaults, then the TOML file, then flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UserError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| UserError(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Writes the resolved config next to a command's outputs.
pub fn echo(dir: &Path, name: &str, toml_text: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, toml_text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: FileConfig =
            toml::from_str("[train]\nepochs = 4\n[train.optimizer]\nlr = 0.01\n").unwrap();
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.train.optimizer.lr, 0.01);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.scene, SceneConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = FileConfig::default();
        let back: FileConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_evolution_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nepoch = 4\n").is_err());
        assert!(toml::from_str::<FileConfig>("[train.evolution]\ndt = 1.0\nmu = 0.3\n").is_err());
    }
}
