//! JSON run configurations and the manifest every CLI run leaves behind.
//!
//! Relative paths inside a config file are resolved against the directory
//! holding that file, so a run directory can be moved as a unit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cis::{CisTrainConfig, EmbeddingNetConfig};
use crate::error::{Error, Result};
use crate::nets::{DiscriminatorConfig, GeneratorConfig};
use crate::training::GenTrainConfig;

/// `<crate version>+<git describe>` when built from a checkout.
pub fn version_string() -> &'static str {
    env!("COOKCAST_VERSION")
}

/// Config types whose path fields are resolved against the config file.
pub trait RunConfig: DeserializeOwned + Serialize {
    fn resolve_paths(&mut self, base: &Path);
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

pub fn load_run_config<C: RunConfig>(path: &Path) -> Result<C> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: C = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    Ok(cfg)
}

/// `train-cis` input. `train.seed` also seeds weight initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CisRunConfig {
    /// Root of the session directories.
    pub data: PathBuf,
    /// Optional `split.json`; without it every session trains.
    #[serde(default)]
    pub split: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub net: EmbeddingNetConfig,
    #[serde(default)]
    pub train: CisTrainConfig,
}

impl RunConfig for CisRunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data);
        resolve(base, &mut self.out);
        if let Some(s) = &mut self.split {
            resolve(base, s);
        }
    }
}

/// `train-gen` input. `train.seed` seeds both networks and the data order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenRunConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub split: Option<PathBuf>,
    /// Directory of a trained CIS archive.
    pub cis: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub train: GenTrainConfig,
}

impl RunConfig for GenRunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data);
        resolve(base, &mut self.cis);
        resolve(base, &mut self.out);
        if let Some(s) = &mut self.split {
            resolve(base, s);
        }
    }
}

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance record of one CLI run. Holds no timestamps, so two runs with
/// equal inputs write equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    #[serde(default)]
    pub param_counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub start_loss: Option<f64>,
    #[serde(default)]
    pub end_loss: Option<f64>,
    /// Command-specific outcome fields.
    #[serde(default)]
    pub results: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            version: version_string().into(),
            seed,
            config,
            param_counts: BTreeMap::new(),
            start_loss: None,
            end_loss: None,
            results: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(RUN_MANIFEST_FILE),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("runs");
        fs::create_dir_all(&sub).unwrap();
        let p = sub.join("gen.json");
        fs::write(&p, r#"{"data":"../data","cis":"/abs/cis","out":"gen","train":{"epochs_const":2,"epochs_decay":2}}"#).unwrap();
        let c: GenRunConfig = load_run_config(&p).unwrap();
        assert_eq!(c.data, sub.join("../data"));
        assert_eq!(c.cis, PathBuf::from("/abs/cis"));
        assert_eq!(c.out, sub.join("gen"));
        assert_eq!(c.train.epochs_const, 2);
        assert_eq!(c.train.lambda_perc, 50.0);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cis.json");
        fs::write(&p, r#"{"data":"d","out":"o","epochs":3}"#).unwrap();
        assert!(matches!(
            load_run_config::<CisRunConfig>(&p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manifest_echoes_loss_weights() {
        let cfg = GenTrainConfig::default();
        let m = RunManifest::new(
            "train-gen",
            Some(cfg.seed),
            serde_json::to_value(&cfg).unwrap(),
        );
        let text = serde_json::to_string(&m).unwrap();
        for key in [
            "\"lambda_gan\":1.0",
            "\"lambda_perc\":50.0",
            "\"lambda_cis\":50.0",
        ] {
            assert!(text.contains(key), "{text}");
        }
        assert!(!m.version.is_empty());
    }
}
