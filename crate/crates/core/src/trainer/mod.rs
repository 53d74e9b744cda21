//! Pretraining loop, two-stage finetuning and the item feature matrix.

mod finetune;
mod pretrain;

pub use finetune::{two_stage_finetune, FinetuneOutcome, NdcgValidator, Validator};
pub use pretrain::{pretrain, pretrain_examples};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{item_input, Catalog, InputLimits, Vocabulary};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Epoch budget for pretraining and for each finetuning stage.
    pub epochs: usize,
    pub pretrain_batch_size: usize,
    pub finetune_batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    /// Global gradient-norm cap.
    pub grad_clip: f64,
    pub seed: u64,
    /// Worker threads for encoding; 0 picks the machine's parallelism.
    #[serde(default)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            pretrain_batch_size: 64,
            finetune_batch_size: 16,
            lr: 5e-5,
            patience: 5,
            grad_clip: 1.0,
            seed: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("epochs", self.epochs),
            ("pretrain_batch_size", self.pretrain_batch_size),
            ("finetune_batch_size", self.finetune_batch_size),
            ("patience", self.patience),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("lr {} must be positive", self.lr));
        }
        if !(self.grad_clip > 0.0) {
            out.push(format!("grad_clip {} must be positive", self.grad_clip));
        }
        out
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub losses: BTreeMap<String, f64>,
    pub valid_metric: Option<f64>,
    pub snapshot_taken: bool,
}

/// Non-trainable `|I| × d` matrix of item representations.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemFeatureMatrix<T: Real = f32> {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    rows: Tensor<T>,
    built_from: u64,
}

impl<T: Real> ItemFeatureMatrix<T> {
    pub fn new(ids: Vec<String>, rows: Tensor<T>, built_from: u64) -> Result<Self> {
        if rows.shape().len() != 2 || rows.rows() != ids.len() {
            return Err(Error::Dimension {
                op: "item_matrix",
                left: vec![ids.len()],
                right: rows.shape().to_vec(),
            });
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect::<HashMap<_, _>>();
        if index.len() != ids.len() {
            return Err(Error::contract("duplicate item id in item matrix"));
        }
        Ok(Self {
            ids,
            index,
            rows,
            built_from,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &Tensor<T> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Fingerprint of the parameters the rows were encoded with.
    pub fn built_from(&self) -> u64 {
        self.built_from
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Map `f` over `items` on up to `threads` scoped workers; output keeps input order.
pub fn parallel_map<I, O, F>(items: &[I], threads: usize, f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync,
{
    let threads = match threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<O>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("encoding worker panicked")?);
        }
        Ok(out)
    })
}

/// Encode every catalog item, in catalog order, under the current parameters.
pub fn encode_all_items<T: Real>(
    model: &Model<T>,
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
    threads: usize,
) -> Result<ItemFeatureMatrix<T>> {
    if catalog.is_empty() {
        return Err(Error::contract("cannot encode an empty catalog"));
    }
    let ids: Vec<String> = catalog.ids().map(str::to_string).collect();
    let rows = parallel_map(&ids, threads, |id| model.sequence_vector(&item_input(id, catalog, vocab, limits)?))?;
    let d = model.config().d_model;
    let rows = Tensor::new(vec![ids.len(), d], rows.concat())?;
    ItemFeatureMatrix::new(ids, rows, model.params().fingerprint())
}

/// True when none of the last `patience` entries beats everything before them.
pub fn early_stop(history: &[f64], patience: usize) -> bool {
    let patience = patience.max(1);
    if history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let best_before = history[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    history[split..].iter().all(|&v| v <= best_before)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        assert!(early_stop(&[0.1, 0.2, 0.19, 0.18, 0.17, 0.16, 0.15], 5));
        assert!(!early_stop(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], 5));
        assert!(!early_stop(&[0.5, 0.1, 0.1], 5));
        assert!(!early_stop(&[0.5, 0.1, 0.1, 0.1, 0.1, 0.6], 5));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..37).collect();
        let out = parallel_map(&items, 4, |&x| Ok(x * 2)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        let err = parallel_map(&items, 3, |&x| if x == 20 { Err(Error::contract("boom")) } else { Ok(x) });
        assert!(err.is_err());
    }

    #[test]
    fn matrix_rejects_shape_mismatch() {
        let rows = Tensor::<f32>::zeros(&[2, 3]);
        assert!(ItemFeatureMatrix::new(vec!["a".into()], rows.clone(), 0).is_err());
        assert!(ItemFeatureMatrix::new(vec!["a".into(), "a".into()], rows.clone(), 0).is_err());
        let m = ItemFeatureMatrix::new(vec!["a".into(), "b".into()], rows, 7).unwrap();
        assert_eq!(m.index_of("b"), Some(1));
        assert_eq!(m.built_from(), 7);
    }
}
