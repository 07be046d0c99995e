//! Flat `key = value` run configuration with defaults < file < flags
//! precedence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::ModelKind;
use crate::train::{TrainConfig, LR_GRID, MARGIN_GRID};

/// Environment variable naming the directory that relative `data` paths
/// (and a missing `data` setting) resolve against.
pub const DATA_ROOT_ENV: &str = "SKGE_DATA_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no dataset given: pass --data or set {DATA_ROOT_ENV}")]
    NoData,
}

/// Every setting a command can consume.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub record_timing: bool,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub checkpoint: Option<PathBuf>,
    pub split: String,
    pub by_relation_type: bool,
    pub queries: usize,
    pub k_neg: usize,
    pub bins: usize,
    pub entity: Option<String>,
    pub k: usize,
    /// Optional `id<TAB>name` file for entity display names.
    pub names: Option<PathBuf>,
    pub ranks_a: Option<PathBuf>,
    pub ranks_b: Option<PathBuf>,
    pub grid_margins: Vec<f64>,
    pub grid_lrs: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: ModelKind::Skge,
            train: TrainConfig::default(),
            out: PathBuf::from("out"),
            record_timing: true,
            threads: 0,
            checkpoint: None,
            split: "test".into(),
            by_relation_type: false,
            queries: 1000,
            k_neg: 1024,
            bins: 100,
            entity: None,
            k: 5,
            names: None,
            ranks_a: None,
            ranks_b: None,
            grid_margins: MARGIN_GRID.to_vec(),
            grid_lrs: LR_GRID.to_vec(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "data" => self.data = opt_path(v),
            "model" => self.model = parse(key, v)?,
            "dim" => t.dim = parse(key, v)?,
            "margin" => t.margin = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "negatives" => t.negatives = parse(key, v)?,
            "eval_every" => t.eval_every = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "adam_eps" => t.adam_eps = parse(key, v)?,
            "transe_normalize_entities" => t.transe_normalize_entities = parse(key, v)?,
            "filter_negatives" => t.filter_negatives = parse(key, v)?,
            "radius" => t.radius = parse(key, v)?,
            "delta" => t.delta = parse(key, v)?,
            "epsilon" => t.epsilon = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "record_timing" => self.record_timing = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "checkpoint" => self.checkpoint = opt_path(v),
            "split" => {
                if v != "test" && v != "valid" && v != "train" {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: v.into(),
                        reason: "expected train, valid or test".into(),
                    });
                }
                self.split = v.to_owned();
            }
            "by_relation_type" => self.by_relation_type = parse(key, v)?,
            "queries" => self.queries = parse(key, v)?,
            "k_neg" => self.k_neg = parse(key, v)?,
            "bins" => self.bins = parse(key, v)?,
            "entity" => self.entity = (!v.is_empty()).then(|| v.to_owned()),
            "k" => self.k = parse(key, v)?,
            "names" => self.names = opt_path(v),
            "ranks_a" => self.ranks_a = opt_path(v),
            "ranks_b" => self.ranks_b = opt_path(v),
            "grid_margins" => self.grid_margins = parse_list(key, v)?,
            "grid_lrs" => self.grid_lrs = parse_list(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_owned())),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, path)
    }

    /// Every key with its resolved value, in a stable order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("data", path(&self.data)),
            ("model", self.model.to_string()),
            ("dim", t.dim.to_string()),
            ("margin", t.margin.to_string()),
            ("lr", t.lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("negatives", t.negatives.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("patience", t.patience.to_string()),
            ("seed", t.seed.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("transe_normalize_entities", t.transe_normalize_entities.to_string()),
            ("filter_negatives", t.filter_negatives.to_string()),
            ("radius", t.radius.to_string()),
            ("delta", t.delta.to_string()),
            ("epsilon", t.epsilon.to_string()),
            ("out", self.out.display().to_string()),
            ("record_timing", self.record_timing.to_string()),
            ("threads", self.threads.to_string()),
            ("checkpoint", path(&self.checkpoint)),
            ("split", self.split.clone()),
            ("by_relation_type", self.by_relation_type.to_string()),
            ("queries", self.queries.to_string()),
            ("k_neg", self.k_neg.to_string()),
            ("bins", self.bins.to_string()),
            ("entity", self.entity.clone().unwrap_or_default()),
            ("k", self.k.to_string()),
            ("names", path(&self.names)),
            ("ranks_a", path(&self.ranks_a)),
            ("ranks_b", path(&self.ranks_b)),
            ("grid_margins", join_list(&self.grid_margins)),
            ("grid_lrs", join_list(&self.grid_lrs)),
        ]
    }

    /// The resolved configuration in the same format [`apply_text`](Self::apply_text) reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    /// Dataset directory after applying the data-root environment variable.
    pub fn data_dir(&self) -> Result<PathBuf, ConfigError> {
        resolve_data(self.data.as_deref(), std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}

fn resolve_data(data: Option<&Path>, root: Option<PathBuf>) -> Result<PathBuf, ConfigError> {
    match (data, root) {
        (Some(d), Some(root)) if d.is_relative() && !d.exists() => Ok(root.join(d)),
        (Some(d), _) => Ok(d.to_path_buf()),
        (None, Some(root)) => Ok(root),
        (None, None) => Err(ConfigError::NoData),
    }
}
