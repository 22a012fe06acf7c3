//! JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use charlee::data::synthetic::{generate_synthetic, ideal_table, IdealTable, SyntheticSpec};
use charlee::data::{load_csv, load_ts, Dataset};
use charlee::training::{ClassifierConfig, TrainConfig};
use charlee::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        #[serde(default = "default_per_class")]
        n_per_class: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
        /// Defaults to `seed + 1`.
        #[serde(default)]
        test_seed: Option<u64>,
    },
    /// `.ts` or long-format `.csv` files.
    Files { train: PathBuf, test: PathBuf },
}

fn default_per_class() -> usize {
    SyntheticSpec::default().n_per_class
}

fn default_noise() -> f64 {
    SyntheticSpec::default().noise_std
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            n_per_class: default_per_class(),
            noise_std: default_noise(),
            seed: 0,
            test_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset name used for the output layout.
    pub name: String,
    pub dataset: DatasetSource,
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub n_checkpoints: usize,
    /// Defaults to `min(C, 10)`.
    pub n_groups: Option<usize>,
    pub w_last: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Defaults to false for synthetic data and true for files.
    pub normalize: Option<bool>,
    pub mask_value: f64,
    pub val_fraction: f64,
    pub kernels_per_group: usize,
    pub kernel_len: usize,
    pub head_hidden: Vec<usize>,
    pub classifier_maps: usize,
    pub classifier_kernel: usize,
    /// Standalone classifier used by the time-only baseline and the viability sweep.
    pub toee: ClassifierConfig,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            name: "synthetic".into(),
            dataset: DatasetSource::default(),
            delta: t.delta,
            seeds: (0..5).collect(),
            n_checkpoints: t.n_checkpoints,
            n_groups: t.n_groups,
            w_last: t.w_last,
            gamma: t.gamma,
            epochs: t.epochs,
            warmup_epochs: t.warmup_epochs,
            minibatch: t.minibatch,
            learning_rate: t.learning_rate,
            normalize: None,
            mask_value: t.mask_value,
            val_fraction: t.val_fraction,
            kernels_per_group: t.kernels_per_group,
            kernel_len: t.kernel_len,
            head_hidden: t.head_hidden,
            classifier_maps: t.classifier_maps,
            classifier_kernel: t.classifier_kernel,
            toee: ClassifierConfig::default(),
            out: None,
        }
    }
}

/// Train and test splits of the configured dataset, plus ground truth for synthetic data.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub ideal: Option<IdealTable>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid dataset name {:?}", self.name)));
        }
        self.train_config(self.seeds[0]).validate()
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.dataset, DatasetSource::Synthetic { .. })
    }

    pub fn normalize(&self) -> bool {
        self.normalize.unwrap_or(!self.is_synthetic())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            delta: self.delta,
            gamma: self.gamma,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            minibatch: self.minibatch,
            learning_rate: self.learning_rate,
            seed,
            n_checkpoints: self.n_checkpoints,
            n_groups: self.n_groups,
            w_last: self.w_last,
            normalize: self.normalize(),
            mask_value: self.mask_value,
            val_fraction: self.val_fraction,
            kernels_per_group: self.kernels_per_group,
            kernel_len: self.kernel_len,
            head_hidden: self.head_hidden.clone(),
            classifier_maps: self.classifier_maps,
            classifier_kernel: self.classifier_kernel,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            normalize: self.normalize(),
            ..self.toee.clone()
        }
    }

    pub fn load_data(&self) -> Result<LoadedData> {
        match &self.dataset {
            DatasetSource::Synthetic {
                n_per_class,
                noise_std,
                seed,
                test_seed,
            } => {
                let spec = |seed| SyntheticSpec {
                    n_per_class: *n_per_class,
                    noise_std: *noise_std,
                    seed,
                };
                Ok(LoadedData {
                    train: generate_synthetic(&spec(*seed))?.dataset,
                    test: generate_synthetic(&spec(test_seed.unwrap_or(seed.wrapping_add(1))))?.dataset,
                    ideal: Some(ideal_table()),
                })
            }
            DatasetSource::Files { train, test } => {
                let train = load_dataset(train)?;
                let mut test = load_dataset(test)?;
                test.align_classes(train.class_names());
                Ok(LoadedData {
                    train,
                    test,
                    ideal: None,
                })
            }
        }
    }
}

/// Reads a `.ts` or long-format `.csv` file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ts") => load_ts(path),
        Some("csv") => load_csv(path),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: expected a .ts or .csv file",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let cfg = RunConfig {
            delta: 0.4,
            seeds: vec![3, 9],
            n_groups: Some(2),
            out: Some("x".into()),
            ..RunConfig::default()
        };
        cfg.save(&path).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.n_checkpoints, 4);
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.w_last, 0.1);
        assert_eq!(cfg.val_fraction, 0.2);
        assert!(!cfg.normalize());
        let files: RunConfig =
            serde_json::from_str(r#"{"dataset": {"kind": "files", "train": "a.ts", "test": "b.ts"}}"#).unwrap();
        assert!(files.normalize());
    }

    #[test]
    fn rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"detla": 0.3}"#).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }
}
