use std::collections::BTreeMap;

use super::{early_stop, encode_all_items, pretrain_examples, EpochLog, ItemFeatureMatrix, TrainConfig};
use crate::catalog::{build_model_input, Catalog, InputLimits, InteractionSequence, ModelInput, Vocabulary};
use crate::encoder::{AttentionKind, EncodeOptions, Model};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalCase};
use crate::numeric::{AdamConfig, AdamState, ParamStore, Real, RngStream, SeededRng, Tape};
use crate::objectives::{finetune_loss, LossConfig};

/// Validation score of a model paired with an item matrix; higher is better.
pub trait Validator<T: Real> {
    fn validate(&mut self, model: &Model<T>, items: &ItemFeatureMatrix<T>) -> Result<f64>;
}

impl<T: Real, F> Validator<T> for F
where
    F: FnMut(&Model<T>, &ItemFeatureMatrix<T>) -> Result<f64>,
{
    fn validate(&mut self, model: &Model<T>, items: &ItemFeatureMatrix<T>) -> Result<f64> {
        self(model, items)
    }
}

/// NDCG@10 over validation cases.
pub struct NdcgValidator<'a> {
    cases: &'a [EvalCase],
    catalog: &'a Catalog,
    vocab: &'a Vocabulary,
    limits: InputLimits,
    threads: usize,
}

impl<'a> NdcgValidator<'a> {
    pub fn new(
        cases: &'a [EvalCase],
        catalog: &'a Catalog,
        vocab: &'a Vocabulary,
        limits: InputLimits,
        threads: usize,
    ) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::contract("validation set is empty"));
        }
        Ok(Self {
            cases,
            catalog,
            vocab,
            limits,
            threads,
        })
    }
}

impl<T: Real> Validator<T> for NdcgValidator<'_> {
    fn validate(&mut self, model: &Model<T>, items: &ItemFeatureMatrix<T>) -> Result<f64> {
        Ok(evaluate(model, items, self.cases, self.catalog, self.vocab, &self.limits, self.threads)?.ndcg())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome<T: Real> {
    /// Best parameters over both stages.
    pub model: Model<T>,
    /// Item matrix of the best stage-1 epoch, frozen during stage 2.
    pub items: ItemFeatureMatrix<T>,
    /// Best validation score over both stages.
    pub best_metric: f64,
    pub stage1_best: f64,
    pub stage1_params: ParamStore<T>,
    pub log: Vec<EpochLog>,
}

struct Examples {
    inputs: Vec<ModelInput>,
    targets: Vec<usize>,
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    loss_cfg: &'a LossConfig,
    order_rng: SeededRng,
    dropout_rng: SeededRng,
}

impl Loop<'_> {
    /// One pass over the examples against a fixed item matrix; mean loss.
    fn epoch<T: Real>(
        &mut self,
        model: &mut Model<T>,
        adam: &mut AdamState<T>,
        ex: &Examples,
        items: &ItemFeatureMatrix<T>,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..ex.inputs.len()).collect();
        self.order_rng.shuffle(&mut order);
        let (mut total, mut weight) = (0.0, 0.0);
        for chunk in order.chunks(self.cfg.finetune_batch_size) {
            let mut tape = Tape::new();
            let mut rows = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let opts = EncodeOptions {
                    attention: AttentionKind::Windowed,
                    dropout_rng: Some(&mut self.dropout_rng),
                };
                let h = model.encode_with(&mut tape, &ex.inputs[i], opts)?;
                rows.push(tape.gather_rows(h, &[0])?);
            }
            let seq = tape.concat_rows(&rows)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| ex.targets[i]).collect();
            let loss = finetune_loss(&mut tape, seq, &targets, items.rows(), self.loss_cfg.tau)?;
            total += tape.value(loss).data()[0].as_f64() * chunk.len() as f64;
            weight += chunk.len() as f64;
            tape.backward_into(loss, model.params_mut())?;
            model.params_mut().clip_grad_norm(self.cfg.grad_clip);
            adam.step(model.params_mut());
        }
        Ok(total / weight)
    }
}

fn log_line(stage: &str, epoch: usize, loss: f64, metric: f64, snapshot: bool) -> EpochLog {
    log::info!("{stage} epoch {epoch}: loss {loss:.5} valid {metric:.5}{}", if snapshot { " *" } else { "" });
    EpochLog {
        stage: stage.into(),
        epoch,
        losses: BTreeMap::from([("finetune".to_string(), loss)]),
        valid_metric: Some(metric),
        snapshot_taken: snapshot,
    }
}

/// Two-stage finetuning.
///
/// Stage 1 trains against a matrix re-encoded after every epoch and keeps the
/// best `(M', I', p)`. Stage 2 restarts from `M'` with a fresh optimizer and
/// trains against the frozen `I'`, replacing `M'` only when `p` improves.
/// Each stage stops early after `patience` epochs without a new best.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_finetune<T: Real>(
    mut model: Model<T>,
    train: &[InteractionSequence],
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    validator: &mut dyn Validator<T>,
) -> Result<FinetuneOutcome<T>> {
    let pairs = pretrain_examples(train);
    if pairs.is_empty() {
        return Err(Error::contract("finetuning needs at least one training sequence of two or more items"));
    }
    let ex = Examples {
        inputs: pairs
            .iter()
            .map(|(prefix, _)| build_model_input(prefix, catalog, vocab, limits))
            .collect::<Result<_>>()?,
        targets: pairs.iter().map(|(_, last)| catalog.index_of(last)).collect::<Result<_>>()?,
    };
    let mut lp = Loop {
        cfg,
        loss_cfg,
        order_rng: SeededRng::stream(cfg.seed, RngStream::DataOrder),
        dropout_rng: SeededRng::stream(cfg.seed, RngStream::Dropout),
    };
    let threads = cfg.threads;
    let mut log = Vec::new();

    let mut p = 0.0;
    let mut items = encode_all_items(&model, catalog, vocab, limits, threads)?;
    let mut best_model = model.clone();
    let mut best_items = items.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut history = vec![p];
    for epoch in 1..=cfg.epochs {
        let loss = lp.epoch(&mut model, &mut adam, &ex, &items)?;
        items = encode_all_items(&model, catalog, vocab, limits, threads)?;
        let metric = validator.validate(&model, &items)?;
        let improved = metric > p;
        if improved {
            p = metric;
            best_model = model.clone();
            best_items = items.clone();
        }
        history.push(metric);
        log.push(log_line("stage1", epoch, loss, metric, improved));
        if early_stop(&history, cfg.patience) {
            break;
        }
    }
    let stage1_best = p;
    let stage1_params = best_model.params().clone();

    let mut model = best_model.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut history = vec![p];
    for epoch in 1..=cfg.epochs {
        let loss = lp.epoch(&mut model, &mut adam, &ex, &best_items)?;
        let metric = validator.validate(&model, &best_items)?;
        let improved = metric > p;
        if improved {
            p = metric;
            best_model = model.clone();
        }
        history.push(metric);
        log.push(log_line("stage2", epoch, loss, metric, improved));
        if early_stop(&history, cfg.patience) {
            break;
        }
    }

    Ok(FinetuneOutcome {
        model: best_model,
        items: best_items,
        best_metric: p,
        stage1_best,
        stage1_params,
        log,
    })
}
