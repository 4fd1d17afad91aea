//! Run configuration file (TOML).
//!
//! Every section is optional and falls back to the defaults below; unknown keys
//! are rejected. Relative paths are resolved against the directory holding the
//! config file.
//!
//! ```toml
//! seed = 7
//!
//! [data]            # gen-data
//! classes = 20
//! dim = 32
//! samples_per_class = 200
//! mean_scale = 0.5
//! within_std = 1.0
//! outlier_fraction = 0.3
//! outlier_shift = 6.0
//!
//! [paths]
//! data_out = "data/train.csv"   # gen-data output
//! train = "data/train.csv"
//! val = "data/val.csv"
//! test = "data/test.csv"
//! checkpoint = "out/generator.ckpt"
//! train_log = "out/train_log.csv"
//! report = "out/episodes.csv"
//! summary = "out/summary.csv"
//!
//! [attention]
//! heads = 4
//! d_k = 8                       # default: d_model / heads
//! d_v = 8
//! dropout = 0.1
//! layer_norm_eps = 1e-5
//!
//! [train]
//! epochs = 200
//! episodes_per_epoch = 200
//! way = 5
//! shot = 5
//! queries_per_class = 15
//! initial_lr = 0.01
//! decay_factor = 0.618
//! patience = 7
//! momentum = 0.0
//! validation_episodes = 100
//! distance = "euclidean"        # or "squared_euclidean"
//!
//! [eval]
//! way = 5
//! shot = 5
//! queries_per_class = 15
//! episodes = 600
//! strategy = "generator"        # mean | generator | global_oracle
//! ```

use crate::error::{Error, Result};
use protogen_core::eval::DEFAULT_EPISODES;
use protogen_core::rng::{mix, Purpose};
use protogen_core::{AttentionConfig, DistanceKind, EpisodeSpec, StrategyKind, SyntheticSpec, TrainConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub attention: AttentionSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub mean_scale: f64,
    pub within_std: f64,
    pub outlier_fraction: f64,
    pub outlier_shift: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            classes: 20,
            dim: 32,
            samples_per_class: 200,
            mean_scale: 0.5,
            within_std: 1.0,
            outlier_fraction: 0.3,
            outlier_shift: 6.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_out: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub heads: usize,
    pub d_k: Option<usize>,
    pub d_v: Option<usize>,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl Default for AttentionSection {
    fn default() -> Self {
        Self {
            heads: AttentionConfig::DEFAULT_HEADS,
            d_k: None,
            d_v: None,
            dropout: AttentionConfig::DEFAULT_DROPOUT,
            layer_norm_eps: AttentionConfig::DEFAULT_LAYER_NORM_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceName {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub patience: usize,
    pub momentum: f64,
    pub validation_episodes: usize,
    pub distance: DistanceName,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: TrainConfig::DEFAULT_EPOCHS,
            episodes_per_epoch: TrainConfig::DEFAULT_EPISODES_PER_EPOCH,
            way: 5,
            shot: 5,
            queries_per_class: 15,
            initial_lr: TrainConfig::DEFAULT_LR,
            decay_factor: TrainConfig::DEFAULT_DECAY,
            patience: TrainConfig::DEFAULT_PATIENCE,
            momentum: 0.0,
            validation_episodes: 100,
            distance: DistanceName::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Mean,
    #[default]
    Generator,
    GlobalOracle,
}

impl From<StrategyName> for StrategyKind {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::Mean => StrategyKind::Mean,
            StrategyName::Generator => StrategyKind::Generator,
            StrategyName::GlobalOracle => StrategyKind::GlobalOracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub strategy: StrategyName,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 5,
            queries_per_class: 15,
            episodes: DEFAULT_EPISODES,
            strategy: StrategyName::Generator,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.resolve_against(base);
        Ok(config)
    }

    /// Parses without touching relative paths; `path` labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let d = &self.data;
        SyntheticSpec {
            classes: d.classes,
            dim: d.dim,
            samples_per_class: d.samples_per_class,
            mean_scale: d.mean_scale,
            within_std: d.within_std,
            outlier_fraction: d.outlier_fraction,
            outlier_shift: d.outlier_shift,
            seed: self.seed,
        }
    }

    /// Attention hyper-parameters for embeddings of dimension `d_model`.
    pub fn attention_config(&self, d_model: usize) -> AttentionConfig {
        let a = &self.attention;
        let per_head = d_model.checked_div(a.heads).unwrap_or(0);
        AttentionConfig {
            heads: a.heads,
            d_model,
            d_k: a.d_k.unwrap_or(per_head),
            d_v: a.d_v.unwrap_or(per_head),
            dropout_rate: a.dropout,
            layer_norm_eps: a.layer_norm_eps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let episode = EpisodeSpec {
            way: t.way,
            shot: t.shot,
            queries_per_class: t.queries_per_class,
            seed: self.seed,
        };
        let validation = EpisodeSpec {
            seed: mix(self.seed ^ Purpose::Validation as u64),
            ..episode
        };
        let mut c = TrainConfig::new(episode, validation);
        c.epochs = t.epochs;
        c.episodes_per_epoch = t.episodes_per_epoch;
        c.initial_lr = t.initial_lr;
        c.decay_factor = t.decay_factor;
        c.patience = t.patience;
        c.momentum = t.momentum;
        c.validation_episodes = t.validation_episodes;
        c.distance = match t.distance {
            DistanceName::Euclidean => DistanceKind::Euclidean,
            DistanceName::SquaredEuclidean => DistanceKind::SquaredEuclidean,
        };
        c.seed = self.seed;
        c
    }

    pub fn eval_spec(&self) -> EpisodeSpec {
        let e = &self.eval;
        EpisodeSpec {
            way: e.way,
            shot: e.shot,
            queries_per_class: e.queries_per_class,
            seed: self.seed,
        }
    }
}

impl PathsSection {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.data_out,
            &mut self.train,
            &mut self.val,
            &mut self.test,
            &mut self.checkpoint,
            &mut self.train_log,
            &mut self.report,
            &mut self.summary,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// The path stored under `paths.<key>`, or an error naming the missing key.
pub fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Usage(format!("`paths.{key}` is required for this command")))
}
