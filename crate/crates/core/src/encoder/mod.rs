//! Bidirectional transformer over item sentences.
//!
//! Each token embeds as `LayerNorm(A[token] + B[position] + C[type] + D[item])`;
//! a post-LN transformer stack with local windowed attention (plus global
//! `[CLS]`) produces per-token states, and row 0 is the sequence
//! representation. An item is encoded as the one-item history `[CLS], T_i`.

mod forward;

pub use forward::{AttentionKind, EncodeOptions};

use serde::{Deserialize, Serialize};

use crate::catalog::{item_input, Catalog, InputLimits, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Real, SeededRng, Tape, Tensor};

pub(crate) const LN_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// One-sided window: token `q` attends `[q - window, q + window]`.
    pub window: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Token budget `l`; the position table has `l + 1` rows.
    pub max_tokens: usize,
    /// Item budget `n`; the item-position table has `n + 1` rows.
    pub max_items: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            window: 8,
            ffn_dim: 256,
            vocab_size,
            max_tokens: 1024,
            max_items: 50,
            dropout: 0.1,
        }
    }

    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("window", self.window),
            ("ffn_dim", self.ffn_dim),
            ("max_tokens", self.max_tokens),
            ("max_items", self.max_items),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if self.n_heads > 0 && self.d_model % self.n_heads != 0 {
            out.push(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab_size <= crate::catalog::RESERVED.len() {
            out.push(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct EmbeddingIds {
    pub token: ParamId,
    pub token_position: ParamId,
    pub token_type: ParamId,
    pub item_position: ParamId,
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerIds {
    pub query: (ParamId, ParamId),
    pub key: (ParamId, ParamId),
    pub value: (ParamId, ParamId),
    pub output: (ParamId, ParamId),
    pub attention_norm: (ParamId, ParamId),
    pub up: (ParamId, ParamId),
    pub down: (ParamId, ParamId),
    pub ffn_norm: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub(crate) struct MlmHeadIds {
    pub dense: (ParamId, ParamId),
    pub norm: (ParamId, ParamId),
    pub decoder: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub(crate) struct ParamIds {
    pub embeddings: EmbeddingIds,
    pub layers: Vec<LayerIds>,
    pub mlm: MlmHeadIds,
}

/// Expected `(name, shape, init)` for every parameter, in creation order.
fn layout(c: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let mut out = vec![
        ("embeddings.token".to_string(), vec![c.vocab_size, d], Init::Normal),
        ("embeddings.token_position".into(), vec![c.max_tokens + 1, d], Init::Normal),
        ("embeddings.token_type".into(), vec![3, d], Init::Normal),
        ("embeddings.item_position".into(), vec![c.max_items + 1, d], Init::Normal),
    ];
    let norm = |out: &mut Vec<_>, prefix: &str| {
        out.push((format!("{prefix}.gamma"), vec![d], Init::One));
        out.push((format!("{prefix}.beta"), vec![d], Init::Zero));
    };
    let linear = |out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, o: usize, i: usize| {
        out.push((format!("{prefix}.weight"), vec![o, i], Init::Normal));
        out.push((format!("{prefix}.bias"), vec![o], Init::Zero));
    };
    norm(&mut out, "embeddings.norm");
    for l in 0..c.n_layers {
        for proj in ["query", "key", "value", "output"] {
            linear(&mut out, &format!("layers.{l}.attention.{proj}"), d, d);
        }
        norm(&mut out, &format!("layers.{l}.attention_norm"));
        linear(&mut out, &format!("layers.{l}.ffn.up"), c.ffn_dim, d);
        linear(&mut out, &format!("layers.{l}.ffn.down"), d, c.ffn_dim);
        norm(&mut out, &format!("layers.{l}.ffn_norm"));
    }
    linear(&mut out, "mlm.dense", d, d);
    norm(&mut out, "mlm.norm");
    linear(&mut out, "mlm.decoder", c.vocab_size, d);
    out
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal,
    Zero,
    One,
}

/// Encoder parameters plus the MLM head.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: EncoderConfig,
    params: ParamStore<T>,
    pub(crate) ids: ParamIds,
}

impl<T: Real> Model<T> {
    /// Fresh parameters: truncated normal (σ = 0.02) weights, zero biases,
    /// unit LayerNorm gains.
    pub fn new(config: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            match init {
                Init::Normal => params.add_normal(&name, &shape, rng)?,
                Init::Zero => params.add_filled(&name, &shape, 0.0)?,
                Init::One => params.add_filled(&name, &shape, 1.0)?,
            };
        }
        Self::from_params(config, params)
    }

    /// Wrap existing parameters, checking names and shapes against `config`.
    pub fn from_params(config: EncoderConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters for this config, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            let p = params
                .by_name(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    p.value.shape(),
                    shape
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let pair = |prefix: &str, a: &str, b: &str| (id(&format!("{prefix}.{a}")), id(&format!("{prefix}.{b}")));
        let lin = |prefix: &str| pair(prefix, "weight", "bias");
        let norm = |prefix: &str| pair(prefix, "gamma", "beta");
        let ids = ParamIds {
            embeddings: EmbeddingIds {
                token: id("embeddings.token"),
                token_position: id("embeddings.token_position"),
                token_type: id("embeddings.token_type"),
                item_position: id("embeddings.item_position"),
                norm_gamma: id("embeddings.norm.gamma"),
                norm_beta: id("embeddings.norm.beta"),
            },
            layers: (0..config.n_layers)
                .map(|l| LayerIds {
                    query: lin(&format!("layers.{l}.attention.query")),
                    key: lin(&format!("layers.{l}.attention.key")),
                    value: lin(&format!("layers.{l}.attention.value")),
                    output: lin(&format!("layers.{l}.attention.output")),
                    attention_norm: norm(&format!("layers.{l}.attention_norm")),
                    up: lin(&format!("layers.{l}.ffn.up")),
                    down: lin(&format!("layers.{l}.ffn.down")),
                    ffn_norm: norm(&format!("layers.{l}.ffn_norm")),
                })
                .collect(),
            mlm: MlmHeadIds {
                dense: lin("mlm.dense"),
                norm: norm("mlm.norm"),
                decoder: lin("mlm.decoder"),
            },
        };
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Parameters of the MLM head, which only the MLM objective touches.
    pub fn mlm_param_ids(&self) -> Vec<ParamId> {
        let m = &self.ids.mlm;
        vec![m.dense.0, m.dense.1, m.norm.0, m.norm.1, m.decoder.0, m.decoder.1]
    }

    /// Per-token hidden states `[len × d]`, dropout off.
    pub fn encode_tensor(&self, input: &crate::catalog::ModelInput) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let h = self.encode(&mut tape, input)?;
        Ok(tape.value(h).clone())
    }

    /// `h_[CLS]` as a plain vector, dropout off.
    pub fn sequence_vector(&self, input: &crate::catalog::ModelInput) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let h = self.sequence_repr(&mut tape, input)?;
        Ok(tape.value(h).data().to_vec())
    }

    /// Representation of one item: the sequence representation of `[CLS], T_i`.
    pub fn item_repr(&self, item_id: &str, catalog: &Catalog, vocab: &Vocabulary, limits: &InputLimits) -> Result<Vec<T>> {
        self.sequence_vector(&item_input(item_id, catalog, vocab, limits)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_problems_are_all_listed() {
        let mut c = EncoderConfig::desk(100);
        c.d_model = 10;
        c.n_heads = 3;
        c.window = 0;
        c.dropout = 1.5;
        let p = c.problems();
        assert_eq!(p.len(), 3, "{p:?}");
    }

    #[test]
    fn table_shapes_follow_config() {
        let c = EncoderConfig::desk(40);
        let m = Model::<f32>::new(c.clone(), &mut SeededRng::new(0)).unwrap();
        let p = m.params();
        assert_eq!(p.by_name("embeddings.token").unwrap().value.shape(), &[40, 64]);
        assert_eq!(p.by_name("embeddings.token_position").unwrap().value.shape(), &[1025, 64]);
        assert_eq!(p.by_name("embeddings.token_type").unwrap().value.shape(), &[3, 64]);
        assert_eq!(p.by_name("embeddings.item_position").unwrap().value.shape(), &[51, 64]);
        assert_eq!(p.by_name("mlm.decoder.weight").unwrap().value.shape(), &[40, 64]);
        assert!(p.iter().all(|(_, q)| q.value.data().iter().all(|v| v.abs() <= 0.04 + 1e-7 || *v == 1.0)));
    }

    #[test]
    fn from_params_rejects_mismatched_config() {
        let c = EncoderConfig::desk(40);
        let m = Model::<f32>::new(c.clone(), &mut SeededRng::new(0)).unwrap();
        let mut other = c;
        other.d_model = 32;
        assert!(Model::from_params(other, m.into_params()).is_err());
    }
}
