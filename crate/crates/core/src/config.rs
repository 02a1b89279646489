//! Flat `key=value` run configuration. Every key is declared up front;
//! unknown keys are rejected. Later assignments override earlier ones.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::autodiff::{AdamConfig, SegmentMode};
use crate::error::{Error, Result};
use crate::propagation::{parse_aggregation, Activation, MessageOp};
use crate::sampler::Estimator;
use crate::scheme::{SchemeConfig, SchemeKind};

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($(($n:literal, $d:literal, $h:literal)),* $(,)?) => {
        &[$(KeySpec { name: $n, default: $d, help: $h }),*]
    };
}

/// Every recognized key with its default.
pub const KEYS: &[KeySpec] = keys![
    (
        "data",
        "",
        "dataset directory, or a name under $ADAPROP_DATA"
    ),
    ("mode", "transductive", "transductive | inductive"),
    (
        "inductive_dir",
        "",
        "test graph directory (default: <data>_ind)"
    ),
    ("out", "out", "output directory"),
    (
        "checkpoint",
        "",
        "checkpoint file (default: <out>/checkpoint.txt)"
    ),
    ("d", "64", "representation width"),
    ("L", "5", "propagation depth"),
    ("mess", "add", "message operator: add | mul | rotate"),
    ("agg", "sum", "aggregation: sum | mean | max"),
    ("act", "relu", "activation: relu | tanh"),
    (
        "scheme",
        "incremental",
        "full | progressive | nodewise | layerwise | subgraph | incremental"
    ),
    ("learned", "true", "learned sampling distribution"),
    ("K", "100", "entities sampled per step"),
    ("tau", "1.0", "sampling temperature"),
    ("estimator", "st", "sampler gradient: st | reinforce"),
    (
        "num_walks",
        "10",
        "random walks per query (subgraph scheme)"
    ),
    ("walk_len", "5", "random walk length (subgraph scheme)"),
    ("lr", "0.001", "Adam learning rate"),
    ("weight_decay", "0", "decoupled weight decay"),
    ("batch_size", "20", "queries per optimizer step"),
    ("max_epochs", "100", "epoch cap"),
    (
        "patience",
        "10",
        "epochs without validation gain before stopping"
    ),
    ("seed", "1", "master random seed"),
    ("workers", "1", "concurrent queries"),
    ("greedy_eval", "true", "deterministic top-K at evaluation"),
    (
        "select_metric",
        "auto",
        "model selection: auto | mrr | hit10"
    ),
    (
        "train_limit",
        "0",
        "cap on training queries per epoch (0 = all)"
    ),
    ("valid_limit", "0", "cap on validation queries (0 = all)"),
    ("test_limit", "0", "cap on test queries (0 = all)"),
    (
        "split",
        "test",
        "split used by analyze / export-path: train | valid | test"
    ),
    (
        "pairs",
        "100",
        "same-entity query pairs for overlap (0 = all)"
    ),
    ("query", "0", "query index for export-path"),
    ("format", "json", "export format: json | dot"),
    (
        "export_paths",
        "0",
        "analyze: number of per-query path files to write"
    ),
];

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// Resolved settings, one value per declared key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: KEYS.iter().map(|k| k.default.to_string()).collect(),
        }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = KEYS
            .iter()
            .position(|k| k.name == key)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        self.values[i] = value.trim().to_string();
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, arg: &str) -> Result<()> {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{arg}`")))?;
        self.set(k.trim(), v)
    }

    /// Applies a config file body: `key=value` lines, `#` comments, blanks.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.assign(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        let i = KEYS
            .iter()
            .position(|k| k.name == key)
            .unwrap_or_else(|| panic!("undeclared key {key}"));
        &self.values[i]
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("{key}={raw}: {e}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!(
                "{key}={other}: expected true or false"
            ))),
        }
    }

    /// All settings in declaration order, one `key=value` per line.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(&self.values) {
            let _ = writeln!(s, "{}={v}", k.name);
        }
        s
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let positive = |key: &str| -> Result<usize> {
            let v: usize = self.parse(key)?;
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
            Ok(v)
        };
        let message: MessageOp = self.get("mess").parse()?;
        let dim = positive("d")?;
        if message == MessageOp::Rotate && dim % 2 == 1 {
            return Err(Error::Config(format!(
                "mess=rotate needs an even d, got {dim}"
            )));
        }
        let tau: f64 = self.parse("tau")?;
        let lr: f64 = self.parse("lr")?;
        let weight_decay: f64 = self.parse("weight_decay")?;
        if !(lr > 0.0 && lr.is_finite()) || !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(
                "lr must be positive and weight_decay non-negative".into(),
            ));
        }
        let scheme = SchemeConfig {
            kind: self.get("scheme").parse::<SchemeKind>()?,
            learned: self.flag("learned")?,
            k: positive("K")?,
            tau,
            estimator: self.get("estimator").parse::<Estimator>()?,
            num_walks: self.parse("num_walks")?,
            walk_len: self.parse("walk_len")?,
        };
        scheme.validate()?;
        let select = match self.get("select_metric") {
            "auto" => None,
            "mrr" => Some(SelectMetric::Mrr),
            "hit10" => Some(SelectMetric::Hit10),
            other => {
                return Err(Error::Config(format!(
                    "select_metric={other}: expected auto|mrr|hit10"
                )))
            }
        };
        Ok(TrainConfig {
            dim,
            layers: positive("L")?,
            message,
            aggregation: parse_aggregation(self.get("agg"))?,
            activation: self.get("act").parse()?,
            scheme,
            adam: AdamConfig {
                lr,
                weight_decay,
                ..AdamConfig::default()
            },
            batch_size: positive("batch_size")?,
            max_epochs: self.parse("max_epochs")?,
            patience: positive("patience")?,
            seed: self.parse("seed")?,
            workers: positive("workers")?,
            greedy_eval: self.flag("greedy_eval")?,
            select,
            train_limit: self.parse("train_limit")?,
            valid_limit: self.parse("valid_limit")?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMetric {
    Mrr,
    Hit10,
}

/// Typed training settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub message: MessageOp,
    pub aggregation: SegmentMode,
    pub activation: Activation,
    pub scheme: SchemeConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub workers: usize,
    pub greedy_eval: bool,
    /// `None` picks MRR for transductive and Hit@10 for inductive data.
    pub select: Option<SelectMetric>,
    pub train_limit: usize,
    pub valid_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Config::default()
            .train_config()
            .expect("defaults are valid")
    }
}
