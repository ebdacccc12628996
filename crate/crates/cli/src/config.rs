//! `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use attkgcn_core::data::{AttributeBlock, SplitProtocol, SynthConfig};
use attkgcn_core::eval::Distance;
use attkgcn_core::experiment::{Descriptor, EvalOptions};
use attkgcn_core::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key:?}: {reason}")]
    Value {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Synthetic dataset settings; `c` attributes in `blocks` equal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub identities: usize,
    pub images: usize,
    pub attributes: usize,
    pub dim: usize,
    pub blocks: usize,
    pub cameras: usize,
    pub activation: f64,
    pub within: f64,
    pub background: f64,
    pub base_rate: f64,
    pub noise: f64,
    pub identity_scale: f64,
    pub grid: Option<(usize, usize)>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            identities: 200,
            images: 6,
            attributes: 12,
            dim: 32,
            blocks: 3,
            cameras: 4,
            activation: 0.5,
            within: 0.85,
            background: 0.1,
            base_rate: 0.3,
            noise: 0.5,
            identity_scale: 0.0,
            grid: None,
        }
    }
}

impl SynthSettings {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::with_blocks(
            self.identities,
            self.images,
            self.attributes,
            self.dim,
            self.blocks,
            seed,
        );
        cfg.blocks = cfg
            .blocks
            .into_iter()
            .map(|b| AttributeBlock {
                activation: self.activation,
                within: self.within,
                ..b
            })
            .collect();
        cfg.n_cameras = self.cameras;
        cfg.background = self.background;
        cfg.base_rate = self.base_rate;
        cfg.noise_scale = self.noise;
        cfg.identity_scale = self.identity_scale;
        cfg.grid = self.grid;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub schema: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train_fraction: f64,
    pub train_count: Option<usize>,
    pub distance: Distance,
    pub descriptor: Descriptor,
    pub eval_batch_size: usize,
    pub oracle: bool,
    pub top_k: usize,
    pub synth: SynthSettings,
    pub sweep_lambda: Vec<f64>,
    pub sweep_layers: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            schema: None,
            annotations: None,
            features: None,
            graph: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            train_fraction: 0.5,
            train_count: None,
            distance: Distance::Cosine,
            descriptor: Descriptor::Fused,
            eval_batch_size: 256,
            oracle: false,
            top_k: 5,
            synth: SynthSettings::default(),
            sweep_lambda: (1..=8).map(f64::from).collect(),
            sweep_layers: vec![2, 3, 4, 5],
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "seed",
    "batch_size",
    "epochs",
    "lr_backbone",
    "lr_gcn",
    "lambda",
    "gcn_layers",
    "hidden_width",
    "feature_dim",
    "variant",
    "head",
    "shared_gcn",
    "backbone",
    "tiny_kernel",
    "momentum",
    "weight_decay",
    "schema",
    "annotations",
    "features",
    "graph",
    "checkpoint",
    "out_dir",
    "train_fraction",
    "train_count",
    "distance",
    "descriptor",
    "eval_batch_size",
    "oracle",
    "top_k",
    "synth_identities",
    "synth_images",
    "synth_attributes",
    "synth_dim",
    "synth_blocks",
    "synth_cameras",
    "synth_activation",
    "synth_within",
    "synth_background",
    "synth_base_rate",
    "synth_noise",
    "synth_identity_scale",
    "synth_grid",
    "sweep_lambda",
    "sweep_layers",
];

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn parse_grid(v: &str) -> Result<Option<(usize, usize)>, String> {
    if v == "none" {
        return Ok(None);
    }
    let (h, w) = v.split_once('x').ok_or("expected HxW or none")?;
    let h: usize = h.trim().parse().map_err(|e| format!("{e}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(Some((h, w)))
}

fn parse<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

impl ExperimentConfig {
    /// Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.into(),
                });
            }
            cfg.set(key, value, base).map_err(|reason| ConfigError::Value {
                line,
                key: key.into(),
                value: value.into(),
                reason,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), String> {
        let path = || Some(base.join(v));
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => t.seed = parse(v)?,
            "batch_size" => t.batch_size = parse(v)?,
            "epochs" => t.epochs = parse(v)?,
            "lr_backbone" => t.lr_backbone = parse(v)?,
            "lr_gcn" => t.lr_gcn = parse(v)?,
            "lambda" => t.lambda = parse(v)?,
            "gcn_layers" => t.gcn_layers = parse(v)?,
            "hidden_width" => t.hidden_width = Some(parse(v)?),
            "feature_dim" => t.feature_dim = Some(parse(v)?),
            "variant" => t.variant = parse(v)?,
            "head" => t.head = parse(v)?,
            "shared_gcn" => t.shared_gcn = parse_bool(v)?,
            "backbone" => t.backbone = parse(v)?,
            "tiny_kernel" => t.tiny_kernel = parse(v)?,
            "momentum" => t.momentum = parse(v)?,
            "weight_decay" => t.weight_decay = parse(v)?,
            "schema" => self.schema = path(),
            "annotations" => self.annotations = path(),
            "features" => self.features = path(),
            "graph" => self.graph = path(),
            "checkpoint" => self.checkpoint = path(),
            "out_dir" => self.out_dir = base.join(v),
            "train_fraction" => self.train_fraction = parse(v)?,
            "train_count" => self.train_count = Some(parse(v)?),
            "distance" => self.distance = parse(v)?,
            "descriptor" => self.descriptor = parse(v)?,
            "eval_batch_size" => self.eval_batch_size = parse(v)?,
            "oracle" => self.oracle = parse_bool(v)?,
            "top_k" => self.top_k = parse(v)?,
            "synth_identities" => s.identities = parse(v)?,
            "synth_images" => s.images = parse(v)?,
            "synth_attributes" => s.attributes = parse(v)?,
            "synth_dim" => s.dim = parse(v)?,
            "synth_blocks" => s.blocks = parse(v)?,
            "synth_cameras" => s.cameras = parse(v)?,
            "synth_activation" => s.activation = parse(v)?,
            "synth_within" => s.within = parse(v)?,
            "synth_background" => s.background = parse(v)?,
            "synth_base_rate" => s.base_rate = parse(v)?,
            "synth_noise" => s.noise = parse(v)?,
            "synth_identity_scale" => s.identity_scale = parse(v)?,
            "synth_grid" => s.grid = parse_grid(v)?,
            "sweep_lambda" => self.sweep_lambda = parse_list(v)?,
            "sweep_layers" => self.sweep_layers = parse_list(v)?,
            other => return Err(format!("unhandled key {other}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) && self.train_count.is_none() {
            return Err(ConfigError::Invalid(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.eval_batch_size == 0 {
            return Err(ConfigError::Invalid("eval_batch_size must be >= 1".into()));
        }
        if self.annotations.is_some() && self.schema.is_none() {
            return Err(ConfigError::Invalid("annotations require a schema".into()));
        }
        self.synth
            .to_config(self.train.seed)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn split_protocol(&self) -> SplitProtocol {
        let seed = self.train.seed;
        match self.train_count {
            Some(train) => SplitProtocol::TrainCount { train, seed },
            None => SplitProtocol::Fraction {
                train: self.train_fraction,
                seed,
            },
        }
    }

    /// `threads` caps ranking workers; 0 means no cap.
    pub fn eval_options(&self, threads: usize) -> EvalOptions {
        EvalOptions {
            distance: self.distance,
            descriptor: self.descriptor,
            threads,
            oracle: self.oracle,
            batch_size: self.eval_batch_size,
        }
    }
}
