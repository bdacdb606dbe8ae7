//! Experiment manifests and the end-to-end audit runner.
//!
//! A manifest declares one audit: dataset source, shot grid, shadow count,
//! protocol, attack list, FPR targets, HPO budget, master seed, workers, and
//! output directory. Results are a pure function of the manifest; worker
//! count and scheduling never change an output byte.

mod runner;

pub use runner::{run_experiment, RunOutcome};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::ATTACK_NAMES;
use crate::data::SplitProtocol;
use crate::error::{Error, Result};
use crate::trainer::{HpoStrategy, TrainConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoBudget {
    pub trials: u32,
    pub strategy: HpoStrategy,
}

/// Per-attack knobs; anything unset falls back to the documented default.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AttackKnobs {
    pub rmia_gamma: Option<f64>,
    pub rmia_vote_mode: Option<crate::attacks::VoteMode>,
    pub lira_variance_mode: Option<crate::attacks::VarianceMode>,
    pub lira_query_views: Option<usize>,
    pub mlleaks_k_top: Option<usize>,
    pub qmia_reference_level: Option<f64>,
    pub qmia_hidden_width: Option<usize>,
    pub trajectory_distill_epochs: Option<u32>,
    pub trajectory_shadow_count: Option<usize>,
    /// 0 means the whole available distillation pool.
    pub trajectory_distill_size: Option<usize>,
    pub iha_lambda: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub repeats: usize,
    pub shadow_models: usize,
    pub protocol: SplitProtocol,
    pub shots: Vec<usize>,
    pub fpr_targets: Vec<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub out_dir: PathBuf,
    pub attacks: Vec<String>,
    pub dataset: DatasetSource,
    pub hpo: Option<HpoBudget>,
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub attack_config: AttackKnobs,
}

fn default_workers() -> usize {
    1
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let manifest: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("manifest parse: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_path(path: &Path) -> Result<(Self, u64)> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Config("manifest is not UTF-8".into()))?;
        let manifest = Self::from_toml(&text)?;
        Ok((manifest, hash_bytes(&bytes)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::Config("repeats: must be at least 1".into()));
        }
        for (i, &f) in self.fpr_targets.iter().enumerate() {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("fpr_targets[{i}]: {f} not in (0,1)")));
            }
        }
        if self.fpr_targets.is_empty() {
            return Err(Error::Config("fpr_targets: must not be empty".into()));
        }
        if self.shots.is_empty() {
            return Err(Error::Config("shots: must not be empty".into()));
        }
        for (i, &s) in self.shots.iter().enumerate() {
            if s < 1 {
                return Err(Error::Config(format!("shots[{i}]: must be at least 1")));
            }
        }
        if self.attacks.is_empty() {
            return Err(Error::Config("attacks: must not be empty".into()));
        }
        for (i, name) in self.attacks.iter().enumerate() {
            if !ATTACK_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "attacks[{i}]: unknown attack {name:?}; expected one of {ATTACK_NAMES:?}"
                )));
            }
        }
        if self.workers < 1 {
            return Err(Error::Config("workers: must be at least 1".into()));
        }
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "dataset: path and synthetic are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config("dataset: needs either path or synthetic".into()))
            }
            _ => {}
        }
        match (&self.hpo, &self.train) {
            (None, None) => {
                return Err(Error::Config("one of hpo or train must be given".into()))
            }
            (Some(h), _) if h.trials < 1 => {
                return Err(Error::Config("hpo.trials: must be at least 1".into()))
            }
            _ => {}
        }
        if let Some(train) = &self.train {
            train.validate()?;
        }
        if let Some(g) = self.attack_config.rmia_gamma {
            if g < 1.0 {
                return Err(Error::Config("attack_config.rmia_gamma: must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// FNV-ish rolling hash used for manifest fingerprints and resume checksums.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One row of the summary: median/IQR of TPR at one FPR target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub attack: String,
    #[serde(rename = "S")]
    pub shots: usize,
    #[serde(rename = "M")]
    pub shadow_models: usize,
    pub fpr_target: f64,
    pub median_tpr: f64,
    pub iqr: f64,
    pub n_repeats: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellError {
    pub attack: String,
    pub repeat: usize,
    #[serde(rename = "S")]
    pub shots: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub manifest_hash: String,
    pub rows: Vec<SummaryRow>,
    pub errors: Vec<CellError>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
repeats = 1
shadow_models = 4
protocol = "balanced-single-target"
shots = [4]
fpr_targets = [0.1]
out_dir = "out"
attacks = ["loss"]

[dataset.synthetic]
classes = 2
dim = 4
per_class = 50
separation = 2.0

[train]
epochs = 10
batch_size = 10
learning_rate = 0.01
"#;

    #[test]
    fn minimal_manifest_parses() {
        let m = ExperimentManifest::from_toml(MINIMAL).unwrap();
        assert_eq!(m.shots, vec![4]);
        assert_eq!(m.workers, 1);
    }

    #[test]
    fn bad_fpr_names_field() {
        let text = MINIMAL.replace("fpr_targets = [0.1]", "fpr_targets = [1.5]");
        let err = ExperimentManifest::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("fpr_targets[0]"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\ntypo_key = 3");
        assert!(ExperimentManifest::from_toml(&text).is_err());
    }

    #[test]
    fn unknown_attack_rejected() {
        let text = MINIMAL.replace("attacks = [\"loss\"]", "attacks = [\"nope\"]");
        let err = ExperimentManifest::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("attacks[0]"));
    }
}
