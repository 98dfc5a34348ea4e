//! Flat `section.key=value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{BackgroundStyle, OodVariant, SceneParams, SyntheticSplit, DEFAULT_OOD_CAP};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scoring::{Method, DEFAULT_DROPOUT_PASSES};
use crate::train::TrainConfig;

/// Training harnesses with their own `train.<name>.*` overrides.
pub const HARNESSES: [&str; 6] = ["depth", "decoder", "log", "drop", "sim", "ae"];

const TRAIN_FIELDS: [&str; 4] = ["lr", "batch_size", "epochs", "lambda"];

const CHECKPOINTS: [&str; 8] = [
    "depth",
    "decoder",
    "log",
    "drop",
    "sim_model",
    "sim_decoder",
    "ae_encoder",
    "ae_decoder",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    /// `train` and `test` roots in the `images/` + `depth/` layout.
    Directory { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub split: SyntheticSplit,
    pub k_min: usize,
    pub k_max: usize,
    pub background: BackgroundStyle,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OodSource {
    Synthetic(OodVariant),
    Directory { name: String, path: PathBuf },
}

impl OodSource {
    pub fn name(&self) -> &str {
        match self {
            OodSource::Synthetic(v) => v.as_str(),
            OodSource::Directory { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub ood: Vec<OodSource>,
    pub ood_cap: usize,
    pub dropout_passes: usize,
    pub methods: Vec<Method>,
    /// Samples per evaluation set rendered as PNG panels.
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: BTreeMap<String, TrainConfig>,
    pub eval: EvalConfig,
    pub checkpoints: BTreeMap<String, PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = HARNESSES
            .iter()
            .map(|h| (h.to_string(), TrainConfig::default()))
            .collect();
        let scene = SceneParams::default();
        Self {
            seed: 0,
            dataset: DatasetConfig {
                source: DatasetSource::Synthetic,
                split: SyntheticSplit::default(),
                k_min: scene.k_min,
                k_max: scene.k_max,
                background: scene.background,
            },
            model: ModelConfig::default(),
            train,
            eval: EvalConfig {
                ood: OodVariant::ALL.into_iter().map(OodSource::Synthetic).collect(),
                ood_cap: DEFAULT_OOD_CAP,
                dropout_passes: DEFAULT_DROPOUT_PASSES,
                methods: vec![Method::Ours, Method::Post, Method::Log, Method::Drop, Method::Sim, Method::Ae],
                samples: 4,
            },
            checkpoints: BTreeMap::new(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn set_train_field(cfg: &mut TrainConfig, key: &str, field: &str, value: &str) -> Result<()> {
    match field {
        "lr" => cfg.lr = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "epochs" => cfg.epochs = parse_value(key, value)?,
        "lambda" => cfg.lambda = parse_value(key, value)?,
        _ => return Err(Error::config(key, "unknown key")),
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses `key=value` lines; `#` starts a comment. Shared `train.*`
    /// values apply to every harness before `train.<harness>.*` overrides,
    /// regardless of line order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut shared: Vec<(String, String, String)> = Vec::new();
        let mut overrides: Vec<(String, String, String, String)> = Vec::new();
        let mut ood_dirs: Vec<(String, PathBuf)> = Vec::new();
        let mut ood_variants: Option<Vec<OodVariant>> = None;
        let (mut train_dir, mut test_dir) = (None, None);
        let mut source = "synthetic".to_string();
        let mut seen = std::collections::HashSet::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {} is not `key=value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "key given twice"));
            }
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["seed"] => cfg.seed = parse_value(key, value)?,
                ["dataset", "source"] => source = value.to_string(),
                ["dataset", "train_dir"] => train_dir = Some(PathBuf::from(value)),
                ["dataset", "test_dir"] => test_dir = Some(PathBuf::from(value)),
                ["dataset", "train_size"] => cfg.dataset.split.train = parse_value(key, value)?,
                ["dataset", "test_size"] => cfg.dataset.split.test_id = parse_value(key, value)?,
                ["dataset", "ood_size"] => cfg.dataset.split.test_ood = parse_value(key, value)?,
                ["dataset", "k_min"] => cfg.dataset.k_min = parse_value(key, value)?,
                ["dataset", "k_max"] => cfg.dataset.k_max = parse_value(key, value)?,
                ["dataset", "background"] => {
                    cfg.dataset.background = match value {
                        "gradient" => BackgroundStyle::Gradient,
                        "flat" => BackgroundStyle::Flat,
                        _ => return Err(Error::config(key, format!("expected gradient or flat, got `{value}`"))),
                    }
                }
                ["model", "height"] => cfg.model.height = parse_value(key, value)?,
                ["model", "width"] => cfg.model.width = parse_value(key, value)?,
                ["model", "d_max"] => cfg.model.d_max = parse_value(key, value)?,
                ["model", "skips"] => cfg.model.skips = parse_bool(key, value)?,
                ["model", "dropout"] => cfg.model.dropout = parse_value(key, value)?,
                ["model", "encoder_channels"] => cfg.model.encoder_channels = parse_list(key, value)?,
                ["model", "decoder_channels"] => cfg.model.decoder_channels = parse_list(key, value)?,
                ["train", field] if TRAIN_FIELDS.contains(field) => {
                    shared.push((key.to_string(), field.to_string(), value.to_string()))
                }
                ["train", harness, field] if HARNESSES.contains(harness) && TRAIN_FIELDS.contains(field) => overrides
                    .push((key.to_string(), harness.to_string(), field.to_string(), value.to_string())),
                ["eval", "ood"] => ood_variants = Some(parse_list(key, value)?),
                ["eval", "ood_dir", name] if !name.is_empty() => ood_dirs.push((name.to_string(), PathBuf::from(value))),
                ["eval", "ood_cap"] => cfg.eval.ood_cap = parse_value(key, value)?,
                ["eval", "dropout_passes"] => cfg.eval.dropout_passes = parse_value(key, value)?,
                ["eval", "methods"] => cfg.eval.methods = parse_list(key, value)?,
                ["eval", "samples"] => cfg.eval.samples = parse_value(key, value)?,
                ["checkpoint", name] if CHECKPOINTS.contains(name) => {
                    cfg.checkpoints.insert(name.to_string(), PathBuf::from(value));
                }
                _ => return Err(Error::config(key, "unknown key")),
            }
        }

        for t in cfg.train.values_mut() {
            for (key, field, value) in &shared {
                set_train_field(t, key, field, value)?;
            }
        }
        for (key, harness, field, value) in &overrides {
            set_train_field(cfg.train.get_mut(harness).expect("known harness"), key, field, value)?;
        }

        cfg.dataset.source = match source.as_str() {
            "synthetic" => DatasetSource::Synthetic,
            "directory" => DatasetSource::Directory {
                train: train_dir.ok_or_else(|| Error::config("dataset.train_dir", "required for directory datasets"))?,
                test: test_dir.ok_or_else(|| Error::config("dataset.test_dir", "required for directory datasets"))?,
            },
            other => {
                return Err(Error::config(
                    "dataset.source",
                    format!("expected synthetic or directory, got `{other}`"),
                ))
            }
        };
        if ood_variants.is_some() || !ood_dirs.is_empty() {
            cfg.eval.ood = ood_variants
                .unwrap_or_default()
                .into_iter()
                .map(OodSource::Synthetic)
                .chain(ood_dirs.into_iter().map(|(name, path)| OodSource::Directory { name, path }))
                .collect();
        }
        cfg.eval.methods.sort();
        cfg.eval.methods.dedup();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| Error::config("model", e.to_string()))?;
        for (name, t) in &self.train {
            t.validate().map_err(|e| match e {
                Error::Config { key, message } => {
                    Error::config(key.replacen("train.", &format!("train.{name}."), 1), message)
                }
                other => other,
            })?;
        }
        let scene = self.scene_params();
        scene
            .validate()
            .map_err(|e| Error::config("dataset.k_min", e.to_string()))?;
        if self.eval.ood.is_empty() {
            return Err(Error::config("eval.ood", "at least one OOD set is required"));
        }
        let mut names: Vec<&str> = self.eval.ood.iter().map(OodSource::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("eval.ood", "OOD set names must be unique"));
        }
        if self.eval.methods.is_empty() {
            return Err(Error::config("eval.methods", "at least one method is required"));
        }
        if self.eval.ood_cap == 0 {
            return Err(Error::config("eval.ood_cap", "cap must be at least 1"));
        }
        if self.eval.dropout_passes < 2 {
            return Err(Error::config("eval.dropout_passes", "at least 2 passes are required"));
        }
        if self.dataset.source == DatasetSource::Synthetic
            && (self.dataset.split.train == 0 || self.dataset.split.test_id == 0 || self.dataset.split.test_ood == 0)
        {
            return Err(Error::config("dataset", "synthetic split sizes must be positive"));
        }
        Ok(())
    }

    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            height: self.model.height,
            width: self.model.width,
            k_min: self.dataset.k_min,
            k_max: self.dataset.k_max,
            d_max: self.model.d_max,
            background: self.dataset.background,
            ..SceneParams::default()
        }
    }

    /// Model configuration for a harness, seeded with the run seed.
    pub fn model_config(&self) -> ModelConfig {
        self.model.clone().with_seed(self.seed)
    }

    /// Training configuration for `harness`, seeded with the run seed.
    pub fn train_config(&self, harness: &str) -> TrainConfig {
        let mut t = self.train.get(harness).cloned().unwrap_or_default();
        t.seed = self.seed;
        t
    }

    pub fn checkpoint(&self, name: &str) -> Option<&Path> {
        self.checkpoints.get(name).map(PathBuf::as_path)
    }

    /// Canonical text form: every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("seed={}", self.seed)];
        match &self.dataset.source {
            DatasetSource::Synthetic => lines.push("dataset.source=synthetic".into()),
            DatasetSource::Directory { train, test } => {
                lines.push("dataset.source=directory".into());
                lines.push(format!("dataset.train_dir={}", train.display()));
                lines.push(format!("dataset.test_dir={}", test.display()));
            }
        }
        let d = &self.dataset;
        lines.push(format!("dataset.train_size={}", d.split.train));
        lines.push(format!("dataset.test_size={}", d.split.test_id));
        lines.push(format!("dataset.ood_size={}", d.split.test_ood));
        lines.push(format!("dataset.k_min={}", d.k_min));
        lines.push(format!("dataset.k_max={}", d.k_max));
        lines.push(format!(
            "dataset.background={}",
            match d.background {
                BackgroundStyle::Gradient => "gradient",
                BackgroundStyle::Flat => "flat",
            }
        ));
        let m = &self.model;
        lines.push(format!("model.height={}", m.height));
        lines.push(format!("model.width={}", m.width));
        lines.push(format!("model.d_max={}", m.d_max));
        lines.push(format!("model.skips={}", m.skips));
        lines.push(format!("model.dropout={}", m.dropout));
        lines.push(format!("model.encoder_channels={}", join(&m.encoder_channels)));
        lines.push(format!("model.decoder_channels={}", join(&m.decoder_channels)));
        for (name, t) in &self.train {
            lines.push(format!("train.{name}.lr={}", t.lr));
            lines.push(format!("train.{name}.batch_size={}", t.batch_size));
            lines.push(format!("train.{name}.epochs={}", t.epochs));
            lines.push(format!("train.{name}.lambda={}", t.lambda));
        }
        let synthetic: Vec<&str> = self
            .eval
            .ood
            .iter()
            .filter_map(|o| match o {
                OodSource::Synthetic(v) => Some(v.as_str()),
                OodSource::Directory { .. } => None,
            })
            .collect();
        lines.push(format!("eval.ood={}", synthetic.join(",")));
        for o in &self.eval.ood {
            if let OodSource::Directory { name, path } = o {
                lines.push(format!("eval.ood_dir.{name}={}", path.display()));
            }
        }
        lines.push(format!("eval.ood_cap={}", self.eval.ood_cap));
        lines.push(format!("eval.dropout_passes={}", self.eval.dropout_passes));
        lines.push(format!("eval.methods={}", join(&self.eval.methods)));
        lines.push(format!("eval.samples={}", self.eval.samples));
        for (name, path) in &self.checkpoints {
            lines.push(format!("checkpoint.{name}={}", path.display()));
        }
        lines.join("\n") + "\n"
    }

    /// SHA-256 of the canonical text form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
