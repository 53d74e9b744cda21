//! Training losses, cosine scoring and next-item prediction.

mod masking;

pub use masking::{make_masking_plan, MaskAction, MaskedPosition, MaskingPlan, MASK_PROB, MASK_SPLIT};

use serde::{Deserialize, Serialize};

use crate::catalog::ModelInput;
use crate::encoder::{AttentionKind, EncodeOptions, Model};
use crate::error::{Error, Result};
use crate::numeric::{NodeId, Real, SeededRng, Tape, Tensor};

/// Guard against zero-norm vectors in cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Softmax temperature τ.
    pub tau: f64,
    /// MLM weight λ.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.05, lambda: 0.1 }
    }
}

impl LossConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            out.push(format!("tau {} must be positive", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda {} must be non-negative", self.lambda));
        }
        out
    }
}

/// `a·b / (max(‖a‖, ε) · max(‖b‖, ε))`; zero vectors score 0.
pub fn cosine_sim<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine_sim",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let eps = T::of(COSINE_EPS);
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt().max(eps);
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt().max(eps);
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Cosine score of `query` against every row of `rows`.
pub fn cosine_scores<T: Real>(query: &[T], rows: &Tensor<T>) -> Result<Vec<T>> {
    if rows.shape().len() != 2 || rows.cols() != query.len() {
        return Err(Error::Dimension {
            op: "cosine_scores",
            left: vec![query.len()],
            right: rows.shape().to_vec(),
        });
    }
    (0..rows.rows()).map(|r| cosine_sim(query, rows.row(r))).collect()
}

/// Index of the best-scoring row; ties go to the lowest index.
pub fn predict_next<T: Real>(query: &[T], rows: &Tensor<T>) -> Result<usize> {
    if rows.numel() == 0 {
        return Err(Error::contract("cannot predict from an empty item matrix"));
    }
    let scores = cosine_scores(query, rows)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Mean cross-entropy of the MLM head's predictions against the original
/// tokens, pooled over every selected position of every sequence.
///
/// Returns `None` when no position is selected.
pub fn mlm_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    hidden: &[NodeId],
    plans: &[MaskingPlan],
) -> Result<Option<NodeId>> {
    if hidden.len() != plans.len() {
        return Err(Error::contract(format!("{} hidden states for {} masking plans", hidden.len(), plans.len())));
    }
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for (&h, plan) in hidden.iter().zip(plans) {
        if plan.is_empty() {
            continue;
        }
        logits.push(model.mlm_logits(tape, h, &plan.positions())?);
        targets.extend(plan.entries().iter().map(|p| p.original as usize));
    }
    if logits.is_empty() {
        return Ok(None);
    }
    let all = tape.concat_rows(&logits)?;
    tape.cross_entropy(all, &targets).map(Some)
}

/// In-batch contrastive loss: row `b` of `seq` against every row of `pos`,
/// positive on the diagonal. Duplicated positives are left in place.
pub fn iic_inbatch_loss<T: Real>(tape: &mut Tape<T>, seq: NodeId, pos: NodeId, tau: f64) -> Result<NodeId> {
    if tape.shape(seq) != tape.shape(pos) {
        return Err(Error::Dimension {
            op: "iic_inbatch_loss",
            left: tape.shape(seq).to_vec(),
            right: tape.shape(pos).to_vec(),
        });
    }
    let b = tape.shape(seq)[0];
    let s = tape.row_normalize(seq, T::of(COSINE_EPS));
    let p = tape.row_normalize(pos, T::of(COSINE_EPS));
    let sim = tape.matmul_bt(s, p)?;
    let logits = tape.scale(sim, T::of(1.0 / tau));
    tape.cross_entropy(logits, &(0..b).collect::<Vec<_>>())
}

/// Full-softmax loss of sequence representations `[B × d]` against a frozen
/// item matrix. No gradient reaches `items`.
pub fn finetune_loss<T: Real>(
    tape: &mut Tape<T>,
    seq: NodeId,
    targets: &[usize],
    items: &Tensor<T>,
    tau: f64,
) -> Result<NodeId> {
    let n = items.rows();
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::Index {
            what: "positive item",
            index: t,
            bound: n,
        });
    }
    let mut normed = items.clone();
    let c = normed.cols();
    for row in normed.data_mut().chunks_exact_mut(c) {
        let inv = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::of(COSINE_EPS)).recip();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    let items = tape.constant(normed);
    let s = tape.row_normalize(seq, T::of(COSINE_EPS));
    let sim = tape.matmul_bt(s, items)?;
    let logits = tape.scale(sim, T::of(1.0 / tau));
    tape.cross_entropy(logits, targets)
}

/// One pretraining batch: contexts, their positive items, and masking plans
/// applied to the contexts (empty when MLM is off).
#[derive(Clone, Debug)]
pub struct PretrainBatch {
    pub contexts: Vec<ModelInput>,
    pub positives: Vec<ModelInput>,
    pub plans: Vec<MaskingPlan>,
}

/// Nodes and values of one `L_IIC + λ·L_MLM` evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PretrainLoss {
    pub total: NodeId,
    pub iic: f64,
    pub mlm: f64,
    pub masked: usize,
}

/// `L_IIC + λ·L_MLM`. Contexts are encoded once, corrupted by their plans;
/// the same pass feeds the MLM head and supplies `h_[CLS]`.
pub fn pretrain_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    batch: &PretrainBatch,
    cfg: &LossConfig,
    mut dropout: Option<&mut SeededRng>,
) -> Result<PretrainLoss> {
    let b = batch.contexts.len();
    if b == 0 || batch.positives.len() != b {
        return Err(Error::contract(format!(
            "pretrain batch has {b} contexts and {} positives",
            batch.positives.len()
        )));
    }
    let use_mlm = cfg.lambda > 0.0 && !batch.plans.is_empty();
    if use_mlm && batch.plans.len() != b {
        return Err(Error::contract("one masking plan per context required"));
    }
    let mut hidden = Vec::with_capacity(b);
    let mut cls = Vec::with_capacity(b);
    for (i, x) in batch.contexts.iter().enumerate() {
        let corrupted;
        let input = if use_mlm {
            corrupted = batch.plans[i].apply(x);
            &corrupted
        } else {
            x
        };
        let opts = EncodeOptions {
            attention: AttentionKind::Windowed,
            dropout_rng: dropout.as_deref_mut(),
        };
        let h = model.encode_with(tape, input, opts)?;
        cls.push(tape.gather_rows(h, &[0])?);
        hidden.push(h);
    }
    let mut pos = Vec::with_capacity(b);
    for x in &batch.positives {
        let opts = EncodeOptions {
            attention: AttentionKind::Windowed,
            dropout_rng: dropout.as_deref_mut(),
        };
        let h = model.encode_with(tape, x, opts)?;
        pos.push(tape.gather_rows(h, &[0])?);
    }
    let seq = tape.concat_rows(&cls)?;
    let pos = tape.concat_rows(&pos)?;
    let iic = iic_inbatch_loss(tape, seq, pos, cfg.tau)?;
    let iic_value = tape.value(iic).data()[0].as_f64();

    let mlm = if use_mlm {
        mlm_loss(tape, model, &hidden, &batch.plans)?
    } else {
        None
    };
    let masked = if use_mlm { batch.plans.iter().map(MaskingPlan::len).sum() } else { 0 };
    match mlm {
        Some(m) => {
            let mlm_value = tape.value(m).data()[0].as_f64();
            let weighted = tape.scale(m, T::of(cfg.lambda));
            let total = tape.add(iic, weighted)?;
            Ok(PretrainLoss {
                total,
                iic: iic_value,
                mlm: mlm_value,
                masked,
            })
        }
        None => Ok(PretrainLoss {
            total: iic,
            iic: iic_value,
            mlm: 0.0,
            masked,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = [1.0f64, 2.0, -3.0];
        assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let u = [0.5f64, -1.0, 2.0];
        let scaled: Vec<f64> = v.iter().map(|x| x * 7.5).collect();
        assert!((cosine_sim(&scaled, &u).unwrap() - cosine_sim(&v, &u).unwrap()).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0, 0.0], &u[..2]).unwrap(), 0.0);
        assert!(cosine_sim(&[1.0], &u).is_err());
    }

    #[test]
    fn predict_examples() {
        let m = t(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(predict_next(&[0.0, 1.0], &m).unwrap(), 1);
        let same = t(3, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(predict_next(&[0.3, 0.2], &same).unwrap(), 0);
    }

    #[test]
    fn predict_matches_full_scan() {
        let mut rng = SeededRng::new(11);
        let data: Vec<f64> = (0..20 * 6).map(|_| rng.normal()).collect();
        let m = t(20, 6, data);
        for _ in 0..50 {
            let q: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let mut best = (f64::NEG_INFINITY, 0);
            for r in 0..20 {
                let row = m.row(r);
                let dot: f64 = row.iter().zip(&q).map(|(a, b)| a * b).sum();
                let s = dot / (row.iter().map(|a| a * a).sum::<f64>().sqrt() * q.iter().map(|a| a * a).sum::<f64>().sqrt());
                if s > best.0 {
                    best = (s, r);
                }
            }
            assert_eq!(predict_next(&q, &m).unwrap(), best.1);
        }
    }

    fn iic(seq: Tensor<f64>, pos: Tensor<f64>) -> f64 {
        let mut tape = Tape::new();
        let s = tape.constant(seq);
        let p = tape.constant(pos);
        let l = iic_inbatch_loss(&mut tape, s, p, 0.05).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn iic_single_item_is_zero() {
        assert_eq!(iic(t(1, 3, vec![0.3, -1.0, 2.0]), t(1, 3, vec![1.0, 5.0, 0.1])), 0.0);
    }

    #[test]
    fn iic_uniform_similarity_is_ln_b() {
        let b = 5;
        let loss = iic(Tensor::filled(&[b, 4], 1.0), Tensor::filled(&[b, 4], 2.0));
        assert!((loss - (b as f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn iic_matches_enumeration() {
        let mut rng = SeededRng::new(5);
        let seq: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let pos: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let mut expect = 0.0;
        for i in 0..3 {
            let e: Vec<f64> = (0..3).map(|j| (cos(&seq[i * 4..i * 4 + 4], &pos[j * 4..j * 4 + 4]) / 0.05).exp()).collect();
            expect += -(e[i] / (e[0] + e[1] + e[2])).ln();
        }
        expect /= 3.0;
        let got = iic(t(3, 4, seq), t(3, 4, pos));
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
        assert!(got >= 0.0);
    }

    fn ft(seq: Vec<f64>, target: usize, items: Tensor<f64>) -> Result<f64> {
        let mut tape = Tape::new();
        let d = seq.len();
        let s = tape.constant(t(1, d, seq));
        let l = finetune_loss(&mut tape, s, &[target], &items, 0.05)?;
        Ok(tape.value(l).data()[0])
    }

    #[test]
    fn finetune_identities() {
        assert_eq!(ft(vec![1.0, 2.0], 0, t(1, 2, vec![-3.0, 0.5])).unwrap(), 0.0);
        let loss = ft(vec![1.0, 2.0], 3, Tensor::filled(&[9, 2], 0.7)).unwrap();
        assert!((loss - 9f64.ln()).abs() < 1e-6);
        assert!(matches!(ft(vec![1.0], 2, t(2, 1, vec![1.0, 2.0])), Err(Error::Index { .. })));
    }

    #[test]
    fn finetune_matches_enumeration() {
        let mut rng = SeededRng::new(9);
        let items = t(7, 5, (0..35).map(|_| rng.normal()).collect());
        let q: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let logits: Vec<f64> = (0..7).map(|r| cosine_sim(&q, items.row(r)).unwrap() / 0.05).collect();
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        let expect = -(logits[4].exp() / z).ln();
        let got = ft(q, 4, items).unwrap();
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn finetune_leaves_items_without_gradient() {
        let mut store = crate::numeric::ParamStore::new();
        let id = store.add("h", t(1, 2, vec![0.2, 0.9])).unwrap();
        let items = t(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let mut tape = Tape::new();
        let s = tape.param(&store, id);
        let l = finetune_loss(&mut tape, s, &[1], &items, 0.05).unwrap();
        tape.backward_into(l, &mut store).unwrap();
        assert!(store.get(id).grad.data().iter().any(|v| *v != 0.0));
        assert_eq!(items, t(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn finetune_decreases_as_positive_aligns() {
        let items = t(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let a = k as f64 / 10.0 * std::f64::consts::FRAC_PI_2;
            let loss = ft(vec![a.sin(), a.cos()], 0, items.clone()).unwrap();
            assert!(loss <= last);
            last = loss;
        }
    }

    #[test]
    fn loss_config_problems() {
        assert!(LossConfig::default().problems().is_empty());
        assert_eq!(LossConfig { tau: 0.0, lambda: -1.0 }.problems().len(), 2);
    }
}
