use std::sync::Arc;

use super::{LayerIds, Model, LN_EPS};
use crate::catalog::ModelInput;
use crate::error::{Error, Result};
use crate::numeric::{AttentionPattern, NodeId, Real, SeededRng, Tape, Tensor};

/// How self-attention is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionKind {
    /// Sparse kernel over the window pattern.
    #[default]
    Windowed,
    /// Full score matrix with an additive mask; reference only.
    DenseReference,
}

/// Per-call switches for a forward pass.
#[derive(Debug, Default)]
pub struct EncodeOptions<'a> {
    pub attention: AttentionKind,
    /// Dropout is active only when a generator is supplied.
    pub dropout_rng: Option<&'a mut SeededRng>,
}

impl<T: Real> Model<T> {
    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let c = &self.config;
        let len = input.len();
        if len == 0 {
            return Err(Error::contract("empty model input"));
        }
        if input.token_positions.len() != len
            || input.token_types.len() != len
            || input.item_positions.len() != len
            || input.global_mask.len() != len
        {
            return Err(Error::contract("model input fields differ in length"));
        }
        let bad = |what: &str, v: usize, bound: usize| {
            Error::Config(format!("{what} {v} is outside the embedding table of size {bound}"))
        };
        if let Some(&t) = input.token_ids.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(bad("token id", t as usize, c.vocab_size));
        }
        if let Some(&p) = input.token_positions.iter().find(|&&p| p as usize > c.max_tokens) {
            return Err(bad("token position", p as usize, c.max_tokens + 1));
        }
        if let Some(&p) = input.item_positions.iter().find(|&&p| p as usize > c.max_items) {
            return Err(bad("item position", p as usize, c.max_items + 1));
        }
        Ok(())
    }

    /// `LayerNorm(A[token] + B[position] + C[type] + D[item])`, `[len × d]`.
    pub fn embed(&self, tape: &mut Tape<T>, input: &ModelInput) -> Result<NodeId> {
        self.check_input(input)?;
        let e = &self.ids.embeddings;
        let p = &self.params;
        let ids = |v: &[u32]| v.iter().map(|&x| x as usize).collect::<Vec<_>>();
        let types: Vec<usize> = input.token_types.iter().map(|t| t.index()).collect();

        let a = tape.param(p, e.token);
        let a = tape.embedding(a, &ids(&input.token_ids))?;
        let b = tape.param(p, e.token_position);
        let b = tape.embedding(b, &ids(&input.token_positions))?;
        let c = tape.param(p, e.token_type);
        let c = tape.embedding(c, &types)?;
        let d = tape.param(p, e.item_position);
        let d = tape.embedding(d, &ids(&input.item_positions))?;
        let s = tape.add(a, b)?;
        let s = tape.add(s, c)?;
        let s = tape.add(s, d)?;
        let g = tape.param(p, e.norm_gamma);
        let beta = tape.param(p, e.norm_beta);
        tape.layer_norm(s, g, beta, T::of(LN_EPS))
    }

    /// Final hidden states `[len × d]` with dropout off and windowed attention.
    pub fn encode(&self, tape: &mut Tape<T>, input: &ModelInput) -> Result<NodeId> {
        self.encode_with(tape, input, EncodeOptions::default())
    }

    pub fn encode_with(&self, tape: &mut Tape<T>, input: &ModelInput, mut opts: EncodeOptions<'_>) -> Result<NodeId> {
        let mut h = self.embed(tape, input)?;
        let pattern = Arc::new(AttentionPattern::new(input.len(), self.config.window, &input.global_mask)?);
        for layer in &self.ids.layers {
            h = self.layer(tape, h, layer, &pattern, &mut opts)?;
        }
        Ok(h)
    }

    /// `h_[CLS]`, shape `[1 × d]`.
    pub fn sequence_repr(&self, tape: &mut Tape<T>, input: &ModelInput) -> Result<NodeId> {
        let h = self.encode(tape, input)?;
        tape.gather_rows(h, &[0])
    }

    /// Vocabulary logits at `positions` of hidden states `h`: `[positions × V]`.
    pub fn mlm_logits(&self, tape: &mut Tape<T>, h: NodeId, positions: &[usize]) -> Result<NodeId> {
        let m = &self.ids.mlm;
        let x = tape.gather_rows(h, positions)?;
        let x = self.linear(tape, x, m.dense)?;
        let x = tape.gelu(x);
        let (g, b) = (tape.param(&self.params, m.norm.0), tape.param(&self.params, m.norm.1));
        let x = tape.layer_norm(x, g, b, T::of(LN_EPS))?;
        self.linear(tape, x, m.decoder)
    }

    fn linear(&self, tape: &mut Tape<T>, x: NodeId, (w, b): (crate::numeric::ParamId, crate::numeric::ParamId)) -> Result<NodeId> {
        let w = tape.param(&self.params, w);
        let b = tape.param(&self.params, b);
        tape.linear(x, w, b)
    }

    fn norm(&self, tape: &mut Tape<T>, x: NodeId, (g, b): (crate::numeric::ParamId, crate::numeric::ParamId)) -> Result<NodeId> {
        let g = tape.param(&self.params, g);
        let b = tape.param(&self.params, b);
        tape.layer_norm(x, g, b, T::of(LN_EPS))
    }

    fn dropout(&self, tape: &mut Tape<T>, x: NodeId, rng: &mut Option<&mut SeededRng>) -> Result<NodeId> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = T::of(1.0 / (1.0 - p));
                let mask = (0..tape.value(x).numel())
                    .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
                    .collect();
                tape.mul_mask(x, mask)
            }
            _ => Ok(x),
        }
    }

    fn layer(
        &self,
        tape: &mut Tape<T>,
        h: NodeId,
        ids: &LayerIds,
        pattern: &Arc<AttentionPattern>,
        opts: &mut EncodeOptions<'_>,
    ) -> Result<NodeId> {
        let q = self.linear(tape, h, ids.query)?;
        let k = self.linear(tape, h, ids.key)?;
        let v = self.linear(tape, h, ids.value)?;
        let a = match opts.attention {
            AttentionKind::Windowed => tape.attention(q, k, v, self.config.n_heads, pattern.clone())?,
            AttentionKind::DenseReference => self.dense_attention(tape, q, k, v, pattern)?,
        };
        let a = self.linear(tape, a, ids.output)?;
        let a = self.dropout(tape, a, &mut opts.dropout_rng)?;
        let h = tape.add(h, a)?;
        let h = self.norm(tape, h, ids.attention_norm)?;

        let f = self.linear(tape, h, ids.up)?;
        let f = tape.gelu(f);
        let f = self.linear(tape, f, ids.down)?;
        let f = self.dropout(tape, f, &mut opts.dropout_rng)?;
        let h = tape.add(h, f)?;
        self.norm(tape, h, ids.ffn_norm)
    }

    fn dense_attention(
        &self,
        tape: &mut Tape<T>,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        pattern: &AttentionPattern,
    ) -> Result<NodeId> {
        let len = pattern.len();
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let mut mask = vec![T::of(-1e9); len * len];
        for i in 0..len {
            for &j in pattern.keys(i) {
                mask[i * len + j as usize] = T::zero();
            }
        }
        let mask = tape.constant(Tensor::new(vec![len, len], mask)?);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.matmul_bt(qh, kh)?;
            let s = tape.scale(s, T::of(1.0 / (dh as f64).sqrt()));
            let s = tape.add(s, mask)?;
            let p = tape.softmax(s);
            outs.push(tape.matmul(p, vh)?);
        }
        tape.concat_cols(&outs)
    }
}
