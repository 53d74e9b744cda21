//! Local windowed attention with symmetric global tokens.
//!
//! A query `q` may attend key `k` iff `|q - k| <= window`, or either of them is
//! global. Padding positions neither attend nor are attended. Allowed pairs are
//! stored once in CSR form so the kernel touches `O(len · (2w + 1 + g))` pairs
//! for `g` global tokens.

use super::{axpy, dot, Real};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionPattern {
    len: usize,
    window: usize,
    global: Vec<bool>,
    padding: Vec<bool>,
    offsets: Vec<usize>,
    keys: Vec<u32>,
}

impl AttentionPattern {
    pub fn new(len: usize, window: usize, global: &[bool]) -> Result<Self> {
        Self::with_padding(len, window, global, &vec![false; len])
    }

    pub fn with_padding(len: usize, window: usize, global: &[bool], padding: &[bool]) -> Result<Self> {
        if len == 0 {
            return Err(Error::contract("attention pattern over an empty sequence"));
        }
        if global.len() != len || padding.len() != len {
            return Err(Error::Dimension {
                op: "attention_pattern",
                left: vec![len],
                right: vec![global.len(), padding.len()],
            });
        }
        let globals: Vec<usize> = (0..len).filter(|&i| global[i] && !padding[i]).collect();
        let mut offsets = Vec::with_capacity(len + 1);
        let mut keys = Vec::with_capacity(len * (2 * window + 1 + globals.len()));
        offsets.push(0);
        for q in 0..len {
            if padding[q] {
                offsets.push(keys.len());
                continue;
            }
            if global[q] {
                keys.extend((0..len).filter(|&k| !padding[k]).map(|k| k as u32));
            } else {
                let lo = q.saturating_sub(window);
                let hi = (q + window).min(len - 1);
                let start = keys.len();
                keys.extend(globals.iter().filter(|&&g| g < lo).map(|&g| g as u32));
                keys.extend((lo..=hi).filter(|&k| !padding[k]).map(|k| k as u32));
                keys.extend(globals.iter().filter(|&&g| g > hi).map(|&g| g as u32));
                debug_assert!(keys[start..].windows(2).all(|w| w[0] < w[1]));
            }
            offsets.push(keys.len());
        }
        Ok(Self {
            len,
            window,
            global: global.to_vec(),
            padding: padding.to_vec(),
            offsets,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// The allowed-pairs predicate, evaluated directly from the rule.
    pub fn allows(&self, q: usize, k: usize) -> bool {
        if q >= self.len || k >= self.len || self.padding[q] || self.padding[k] {
            return false;
        }
        q.abs_diff(k) <= self.window || self.global[q] || self.global[k]
    }

    /// Keys attended by query `q`, ascending.
    pub fn keys(&self, q: usize) -> &[u32] {
        &self.keys[self.offsets[q]..self.offsets[q + 1]]
    }

    /// Number of allowed (query, key) pairs.
    pub fn pair_count(&self) -> usize {
        self.keys.len()
    }
}

/// Multi-head attention over the pattern. `q`, `k`, `v` are `[len × d]`.
/// Returns the output and the per-head attention probabilities in CSR order.
pub(crate) fn forward<T: Real>(
    pattern: &AttentionPattern,
    heads: usize,
    d: usize,
    q: &[T],
    k: &[T],
    v: &[T],
) -> (Vec<T>, Vec<T>) {
    let len = pattern.len;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let nnz = pattern.pair_count();
    let mut out = vec![T::zero(); len * d];
    let mut probs = vec![T::zero(); heads * nnz];
    for h in 0..heads {
        let col = h * dh;
        for i in 0..len {
            let (start, end) = (pattern.offsets[i], pattern.offsets[i + 1]);
            if start == end {
                continue;
            }
            let qi = &q[i * d + col..i * d + col + dh];
            let p = &mut probs[h * nnz + start..h * nnz + end];
            let mut max = T::neg_infinity();
            for (slot, &j) in p.iter_mut().zip(&pattern.keys[start..end]) {
                let j = j as usize;
                *slot = dot(qi, &k[j * d + col..j * d + col + dh]) * scale;
                max = max.max(*slot);
            }
            let mut sum = T::zero();
            for s in p.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let inv = sum.recip();
            let oi = &mut out[i * d + col..i * d + col + dh];
            for (s, &j) in p.iter_mut().zip(&pattern.keys[start..end]) {
                *s *= inv;
                let j = j as usize;
                axpy(*s, &v[j * d + col..j * d + col + dh], oi);
            }
        }
    }
    (out, probs)
}

pub(crate) struct AttentionGrads<T> {
    pub dq: Vec<T>,
    pub dk: Vec<T>,
    pub dv: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    pattern: &AttentionPattern,
    heads: usize,
    d: usize,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out: &[T],
) -> AttentionGrads<T> {
    let len = pattern.len;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let nnz = pattern.pair_count();
    let mut dq = vec![T::zero(); len * d];
    let mut dk = vec![T::zero(); len * d];
    let mut dv = vec![T::zero(); len * d];
    let mut dp = Vec::new();
    for h in 0..heads {
        let col = h * dh;
        for i in 0..len {
            let (start, end) = (pattern.offsets[i], pattern.offsets[i + 1]);
            if start == end {
                continue;
            }
            let keys = &pattern.keys[start..end];
            let p = &probs[h * nnz + start..h * nnz + end];
            let doi = &d_out[i * d + col..i * d + col + dh];
            dp.clear();
            let mut weighted = T::zero();
            for (&pij, &j) in p.iter().zip(keys) {
                let j = j as usize;
                axpy(pij, doi, &mut dv[j * d + col..j * d + col + dh]);
                let g = dot(doi, &v[j * d + col..j * d + col + dh]);
                weighted += pij * g;
                dp.push(g);
            }
            let qi = &q[i * d + col..i * d + col + dh];
            for ((&pij, &g), &j) in p.iter().zip(&dp).zip(keys) {
                let j = j as usize;
                let ds = pij * (g - weighted) * scale;
                axpy(ds, &k[j * d + col..j * d + col + dh], &mut dq[i * d + col..i * d + col + dh]);
                axpy(ds, qi, &mut dk[j * d + col..j * d + col + dh]);
            }
        }
    }
    AttentionGrads { dq, dk, dv }
}
