use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use textrec_core::catalog::InputLimits;
use textrec_core::encoder::EncoderConfig;
use textrec_core::objectives::LossConfig;
use textrec_core::trainer::TrainConfig;

use crate::CliError;

/// Encoder hyperparameters minus the vocabulary size, which comes from the vocab file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub window: usize,
    pub ffn_dim: usize,
    pub max_tokens: usize,
    pub max_items: usize,
    pub attr_token_cap: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            window: 64,
            ffn_dim: 256,
            max_tokens: 1024,
            max_items: 50,
            attr_token_cap: 16,
            dropout: 0.1,
        }
    }
}

impl ModelSection {
    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            window: self.window,
            ffn_dim: self.ffn_dim,
            vocab_size,
            max_tokens: self.max_tokens,
            max_items: self.max_items,
            dropout: self.dropout,
        }
    }

    pub fn limits(&self) -> InputLimits {
        InputLimits {
            max_tokens: self.max_tokens,
            max_items: self.max_items,
            attr_token_cap: self.attr_token_cap,
        }
    }
}

/// Data locations. A data directory holds `items.jsonl` and `interactions.jsonl`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub vocab: PathBuf,
    #[serde(default)]
    pub pretrain: Vec<PathBuf>,
    #[serde(default)]
    pub pretrain_valid: Option<PathBuf>,
    #[serde(default)]
    pub finetune: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("data", &["vocab", "pretrain", "pretrain_valid", "finetune"]),
    (
        "model",
        &["d_model", "n_layers", "n_heads", "window", "ffn_dim", "max_tokens", "max_items", "attr_token_cap", "dropout"],
    ),
    (
        "train",
        &["epochs", "pretrain_batch_size", "finetune_batch_size", "lr", "patience", "grad_clip", "seed", "threads"],
    ),
    ("loss", &["tau", "lambda"]),
];

fn unknown_keys(value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(top) = value.as_object() else {
        return out;
    };
    for (key, inner) in top {
        match SECTIONS.iter().find(|(s, _)| s == key) {
            None => out.push(key.clone()),
            Some((section, fields)) => {
                if let Some(obj) = inner.as_object() {
                    out.extend(obj.keys().filter(|k| !fields.contains(&k.as_str())).map(|k| format!("{section}.{k}")));
                }
            }
        }
    }
    out
}

fn strip_keys(value: &mut Value, keys: &[String]) {
    let Some(top) = value.as_object_mut() else {
        return;
    };
    for key in keys {
        match key.split_once('.') {
            Some((section, field)) => {
                if let Some(obj) = top.get_mut(section).and_then(Value::as_object_mut) {
                    obj.remove(field);
                }
            }
            None => {
                top.remove(key);
            }
        }
    }
}

impl RunConfig {
    /// Parse, reject unknown keys, validate values; paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let unknown = unknown_keys(&value);
        let mut problems = Vec::new();
        if !unknown.is_empty() {
            problems.push(format!("unknown config keys: {}", unknown.join(", ")));
            strip_keys(&mut value, &unknown);
        }
        let mut cfg: RunConfig = match serde_json::from_value(value) {
            Ok(cfg) => cfg,
            Err(e) => {
                problems.push(e.to_string());
                return Err(CliError::Config(problems.join("; ")));
            }
        };
        problems.extend(cfg.problems());
        if !problems.is_empty() {
            return Err(CliError::Config(problems.join("; ")));
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.vocab);
        cfg.data.pretrain.iter_mut().for_each(resolve);
        cfg.data.pretrain_valid.iter_mut().for_each(resolve);
        cfg.data.finetune.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Every invalid value, prefixed by its key.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        // vocab_size is checked once the vocabulary is loaded.
        let enc = self.model.encoder(usize::MAX);
        out.extend(enc.problems().into_iter().map(|p| format!("model.{p}")));
        if self.model.attr_token_cap == 0 {
            out.push("model.attr_token_cap must be positive".into());
        }
        out.extend(self.train.problems().into_iter().map(|p| format!("train.{p}")));
        out.extend(self.loss.problems().into_iter().map(|p| format!("loss.{p}")));
        out
    }
}
