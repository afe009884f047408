//! Run configuration, read from TOML. Every field has a default, so a
//! config file only lists what it changes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use super::Scenario;
use crate::classifiers::{ClassifierConfig, HeadKind};
use crate::error::{Error, Result};
use crate::metrics::Smoothing;
use crate::parallel::Exec;
use crate::seq2res::Seq2ResConfig;

/// Overrides `run.data_dir`.
pub const DATA_ENV: &str = "RESEP_DATA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub models: Vec<HeadKind>,
    /// Run only the first folds of the plan.
    pub max_folds: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub exec: Exec,
    /// Directory holding `instances.tsv` and `classes.txt`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Decoding limit for generated separations: a full target is at most
    /// the window plus three separators.
    pub max_len: usize,
    pub smoothing: Smoothing,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            scenarios: Scenario::ALL.to_vec(),
            models: vec![HeadKind::Bn, HeadKind::Q2l],
            max_folds: 10,
            jobs: 0,
            exec: Exec::Parallel,
            data_dir: PathBuf::from("inst"),
            out_dir: PathBuf::from("reports"),
            max_len: 19,
            smoothing: Smoothing::Half,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub seq2res: Seq2ResConfig,
    #[serde(deserialize_with = "seq2res_train")]
    pub seq2res_train: TrainConfig,
    pub classifier: ClassifierConfig,
    #[serde(deserialize_with = "classifier_train")]
    pub classifier_train: TrainConfig,
}

/// A training section where every key is optional.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainPatch {
    epochs: Option<usize>,
    lr: Option<f64>,
    lr_half_every: Option<usize>,
    batch: Option<usize>,
    shards: Option<usize>,
    checkpoint_every: Option<usize>,
}

impl TrainPatch {
    fn apply(self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            lr: self.lr.unwrap_or(base.lr),
            lr_half_every: self.lr_half_every.unwrap_or(base.lr_half_every),
            batch: self.batch.unwrap_or(base.batch),
            shards: self.shards.unwrap_or(base.shards),
            checkpoint_every: self.checkpoint_every.unwrap_or(base.checkpoint_every),
        }
    }
}

fn seq2res_train<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<TrainConfig, D::Error> {
    TrainPatch::deserialize(d).map(|p| p.apply(TrainConfig::seq2res()))
}

fn classifier_train<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<TrainConfig, D::Error> {
    TrainPatch::deserialize(d).map(|p| p.apply(TrainConfig::classifier()))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            seq2res: Seq2ResConfig::default(),
            seq2res_train: TrainConfig::seq2res(),
            classifier: ClassifierConfig::default(),
            classifier_train: TrainConfig::classifier(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.seq2res.validate()?;
        self.classifier.validate()?;
        self.seq2res_train.validate()?;
        self.classifier_train.validate()?;
        if self.run.max_folds == 0 {
            return Err(Error::Config("max_folds must be positive".into()));
        }
        if self.run.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        if self.run.scenarios.is_empty() || self.run.models.is_empty() {
            return Err(Error::Config(
                "nothing to run: empty scenarios or models".into(),
            ));
        }
        Ok(())
    }

    /// `run.data_dir`, unless the environment overrides it.
    pub fn data_dir(&self) -> PathBuf {
        std::env::var_os(DATA_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.run.data_dir.clone())
    }

    pub fn needs_seq2res(&self) -> bool {
        self.run.scenarios.contains(&Scenario::S2sSep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_file_overrides() {
        let cfg = RunConfig::from_toml(
            "[run]\nseed = 7\nscenarios = [\"GT_Sep\"]\nmodels = [\"q2l\"]\n\n[classifier]\nhidden = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.scenarios, vec![Scenario::GtSep]);
        assert_eq!(cfg.classifier.hidden, 16);
        assert_eq!(cfg.classifier.embed, 128);
        let cfg = RunConfig::from_toml("[classifier_train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.classifier_train.epochs, 3);
        assert_eq!(cfg.classifier_train.lr, 1e-4);
        assert_eq!(cfg.seq2res_train, TrainConfig::seq2res());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[run]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[seq2res]\ndec_hidden = 100\n").is_err());
        assert!(RunConfig::from_toml("[run]\nmax_folds = 0\n").is_err());
    }
}
