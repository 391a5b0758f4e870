use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_adult_with, load_german_with, Dataset, LoadOptions};
use crate::downstream::{FeatureRule, ForestSpec, LogRegSpec, ProbeSpec};
use crate::error::{Error, Result};
use crate::stack::{Criterion, LossWeights, ReconstructionLoss, StackSpec};
use crate::train::TrainConfig;

/// Environment variable naming the directory that holds the dataset files
/// when `dataset.path` is not set.
pub const DATA_DIR_ENV: &str = "FAIRSTACK_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Adult,
    German,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Adult => "adult",
            DatasetId::German => "german",
        }
    }

    /// Latent widths of the two-level stack.
    pub fn default_latents(self) -> Vec<usize> {
        match self {
            DatasetId::Adult => vec![20, 8],
            DatasetId::German => vec![15, 8],
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            DatasetId::Adult => 150,
            DatasetId::German => 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub id: DatasetId,
    /// File or directory; falls back to `$FAIRSTACK_DATA_DIR`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Keep gender as an input column. Downstream models refuse such data.
    #[serde(default)]
    pub keep_sensitive_feature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSection {
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub latent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSection {
    pub levels: Vec<LevelSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Defaults to 150 for adult and 1000 for german.
    pub epochs: Option<usize>,
    pub lr: f64,
    pub batch: usize,
    pub adversary_lr: f64,
    pub adversary_steps: usize,
    pub freeze_previous: bool,
    pub adversary_warm_start: bool,
    pub eopp_label: u8,
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: None,
            lr: t.lr,
            batch: t.batch_size,
            adversary_lr: t.adversary_lr,
            adversary_steps: t.adversary_steps,
            freeze_previous: t.freeze_previous,
            adversary_warm_start: t.adversary_warm_start,
            eopp_label: t.eopp_label,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub reconstruction: ReconstructionLoss,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            reconstruction: ReconstructionLoss::Mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub betas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            betas: vec![1.0, 2.0, 3.0, 5.0, 15.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeSpec::default();
        ProbeSection {
            hidden: p.hidden,
            epochs: p.epochs,
            lr: p.lr,
            batch: p.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Section {
    pub folds: usize,
    pub forest_trees: usize,
    pub forest_max_depth: Option<usize>,
    pub forest_min_samples_split: usize,
    pub logreg_epochs: usize,
    pub logreg_lr: f64,
}

impl Default for Table1Section {
    fn default() -> Self {
        let f = ForestSpec::default();
        let l = LogRegSpec::default();
        Table1Section {
            folds: 5,
            forest_trees: f.trees,
            forest_max_depth: f.max_depth,
            forest_min_samples_split: f.min_samples_split,
            logreg_epochs: l.epochs,
            logreg_lr: l.lr,
        }
    }
}

fn default_criterion() -> Criterion {
    Criterion::Dp
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything an experiment command needs. Unknown keys are rejected at every
/// level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    /// Defaults to latents 20 → 8 (adult) or 15 → 8 (german).
    #[serde(default)]
    pub stack: Option<StackSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default = "default_criterion")]
    pub criterion: Criterion,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub table1: Table1Section,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub criterion: Option<Criterion>,
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(toml_location(text, &e), e.message().to_string()))
    }

    /// Parses `path`; call [`ExperimentConfig::resolve`] before use.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// All defaults for dataset `id`.
    pub fn for_dataset(id: DatasetId, path: Option<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: DatasetSection {
                id,
                path,
                keep_sensitive_feature: false,
            },
            stack: None,
            train: TrainSection::default(),
            loss: LossSection::default(),
            criterion: Criterion::Dp,
            sweep: SweepSection::default(),
            seeds: default_seeds(),
            out_dir: default_out_dir(),
            probe: ProbeSection::default(),
            table1: Table1Section::default(),
        }
    }

    /// `--seed` replaces the seed list; `--beta` sets `loss.beta` and the
    /// sweep list.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(b) = o.beta {
            self.loss.beta = b;
            self.sweep.betas = vec![b];
        }
        if let Some(c) = o.criterion {
            self.criterion = c;
        }
    }

    /// Makes every default explicit so the stored copy fully describes the
    /// run: stack widths, epoch count and dataset path.
    pub fn resolve(&mut self) -> Result<()> {
        if self.stack.is_none() {
            self.stack = Some(StackSection {
                levels: self
                    .dataset
                    .id
                    .default_latents()
                    .into_iter()
                    .map(|latent| LevelSection {
                        hidden: vec![],
                        latent,
                    })
                    .collect(),
            });
        }
        if self.train.epochs.is_none() {
            self.train.epochs = Some(self.dataset.id.default_epochs());
        }
        if self.dataset.path.is_none() {
            match std::env::var_os(DATA_DIR_ENV) {
                Some(dir) => self.dataset.path = Some(PathBuf::from(dir)),
                None => {
                    return Err(Error::config(
                        "dataset.path",
                        format!("not set and ${DATA_DIR_ENV} is unset"),
                    ))
                }
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.dataset.path {
            if !p.exists() {
                return Err(Error::config(
                    "dataset.path",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if let Some(stack) = &self.stack {
            if stack.levels.is_empty() {
                return Err(Error::config("stack.levels", "at least one level is required"));
            }
            for (i, l) in stack.levels.iter().enumerate() {
                if l.latent == 0 || l.hidden.contains(&0) {
                    return Err(Error::config(format!("stack.levels[{i}]"), "widths must be >= 1"));
                }
                if i > 0 && l.latent >= stack.levels[i - 1].latent {
                    return Err(Error::config(
                        format!("stack.levels[{i}].latent"),
                        format!(
                            "latent widths must strictly decrease ({} after {})",
                            l.latent,
                            stack.levels[i - 1].latent
                        ),
                    ));
                }
            }
        }
        self.weights().validate()?;
        if !(0.0..1.0).contains(&self.train.validation_fraction) {
            return Err(Error::config("train.validation_fraction", "must be in [0, 1)"));
        }
        for (i, b) in self.sweep.betas.iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0) {
                return Err(Error::config(
                    format!("sweep.betas[{i}]"),
                    "must be finite and >= 0",
                ));
            }
        }
        let p = self.probe_spec(0);
        p.validate()?;
        self.forest_spec(0).validate()?;
        if self.table1.folds < 2 {
            return Err(Error::config("table1.folds", "must be >= 2"));
        }
        if self.table1.logreg_epochs == 0
            || !(self.table1.logreg_lr.is_finite() && self.table1.logreg_lr > 0.0)
        {
            return Err(Error::config(
                "table1",
                "logreg_epochs >= 1 and logreg_lr > 0 required",
            ));
        }
        self.train_config(0).validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::new(self.loss.alpha, self.loss.beta, self.loss.gamma)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self
                .train
                .epochs
                .unwrap_or_else(|| self.dataset.id.default_epochs()),
            batch_size: self.train.batch,
            lr: self.train.lr,
            adversary_lr: self.train.adversary_lr,
            adversary_steps: self.train.adversary_steps,
            seed,
            freeze_previous: self.train.freeze_previous,
            adversary_warm_start: self.train.adversary_warm_start,
            eopp_label: self.train.eopp_label,
        }
    }

    fn levels(&self) -> Vec<LevelSection> {
        match &self.stack {
            Some(s) => s.levels.clone(),
            None => self
                .dataset
                .id
                .default_latents()
                .into_iter()
                .map(|latent| LevelSection {
                    hidden: vec![],
                    latent,
                })
                .collect(),
        }
    }

    /// The configured stack over `input_dim` features with weights `weights`.
    pub fn stacked_spec(&self, input_dim: usize, weights: LossWeights) -> StackSpec {
        let levels = self.levels();
        let latents: Vec<usize> = levels.iter().map(|l| l.latent).collect();
        let mut spec = StackSpec::stacked(input_dim, &latents, self.criterion, weights);
        for (ls, l) in spec.levels.iter_mut().zip(&levels) {
            ls.hidden = l.hidden.clone();
        }
        spec.reconstruction = self.loss.reconstruction;
        spec
    }

    /// Single-adversary baseline with the same encoder widths: every stacked
    /// latent but the last becomes a hidden layer.
    pub fn vanilla_spec(&self, input_dim: usize, weights: LossWeights) -> StackSpec {
        let levels = self.levels();
        let mut hidden = Vec::new();
        for l in &levels[..levels.len() - 1] {
            hidden.extend(&l.hidden);
            hidden.push(l.latent);
        }
        let last = &levels[levels.len() - 1];
        hidden.extend(&last.hidden);
        let mut spec = StackSpec::single_level(input_dim, &hidden, last.latent, self.criterion, weights);
        spec.reconstruction = self.loss.reconstruction;
        spec
    }

    pub fn probe_spec(&self, seed: u64) -> ProbeSpec {
        ProbeSpec {
            hidden: self.probe.hidden,
            epochs: self.probe.epochs,
            lr: self.probe.lr,
            batch_size: self.probe.batch,
            seed,
        }
    }

    pub fn forest_spec(&self, seed: u64) -> ForestSpec {
        ForestSpec {
            trees: self.table1.forest_trees,
            max_depth: self.table1.forest_max_depth,
            min_samples_split: self.table1.forest_min_samples_split,
            min_samples_leaf: 1,
            features: FeatureRule::Sqrt,
            bootstrap: true,
            seed,
        }
    }

    pub fn logreg_spec(&self, seed: u64) -> LogRegSpec {
        LogRegSpec {
            epochs: self.table1.logreg_epochs,
            lr: self.table1.logreg_lr,
            seed,
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self
            .dataset
            .path
            .as_ref()
            .ok_or_else(|| Error::config("dataset.path", "unresolved"))?;
        let options = LoadOptions {
            keep_sensitive_feature: self.dataset.keep_sensitive_feature,
        };
        match self.dataset.id {
            DatasetId::Adult => load_adult_with(path, options),
            DatasetId::German => load_german_with(path, options),
        }
    }

    /// Hex SHA-256 of the JSON form of this config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn toml_location(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!("config line {}", text[..span.start].matches('\n').count() + 1),
        None => "config".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [dataset]
        id = "german"
        path = "."
    "#;

    #[test]
    fn defaults_fill_in() {
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.resolve().unwrap();
        assert_eq!(c.train.epochs, Some(1000));
        assert_eq!(c.stack.as_ref().unwrap().levels.len(), 2);
        assert_eq!(c.weights(), LossWeights::new(0.0, 1.0, 1.0));
        assert_eq!(c.sweep.betas, vec![1.0, 2.0, 3.0, 5.0, 15.0]);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{MINIMAL}\n[train]\nepochz = 3\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("epochz"), "{err}");
    }

    #[test]
    fn bad_criterion_lists_allowed_values() {
        let text = format!("criterion = \"parity\"\n{MINIMAL}");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(
            err.contains("dp") && err.contains("eo") && err.contains("eopp"),
            "{err}"
        );
    }

    #[test]
    fn vanilla_matches_stacked_widths() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let v = c.vanilla_spec(56, c.weights());
        assert_eq!(v.levels.len(), 1);
        assert_eq!(v.levels[0].encoder_dims(), vec![56, 15, 8]);
        let s = c.stacked_spec(56, c.weights());
        assert_eq!(s.levels[0].encoder_dims(), vec![56, 15]);
        assert_eq!(s.levels[1].encoder_dims(), vec![15, 8]);
    }

    #[test]
    fn overrides_apply() {
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            beta: Some(3.0),
            criterion: Some(Criterion::Eo),
            jobs: None,
        });
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.sweep.betas, vec![3.0]);
        assert_eq!(c.loss.beta, 3.0);
        assert_eq!(c.criterion, Criterion::Eo);
    }

    #[test]
    fn missing_path_is_config_error() {
        let mut c =
            ExperimentConfig::from_toml_str("[dataset]\nid = \"adult\"\npath = \"/definitely/not/here\"\n")
                .unwrap();
        let err = c.resolve().unwrap_err();
        assert!(err.to_string().contains("dataset.path"), "{err}");
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.loss.beta = 2.0;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sensitive_feature_switch_reaches_loader() {
        let german = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/german.data");
        let mut c = ExperimentConfig::for_dataset(DatasetId::German, Some(german));
        let without = c.load_dataset().unwrap();
        c.dataset.keep_sensitive_feature = true;
        let with = c.load_dataset().unwrap();
        assert!(!without.meta().sensitive_in_features);
        assert!(with.meta().sensitive_in_features);
        assert!(with.x().cols() > without.x().cols());
    }
}
