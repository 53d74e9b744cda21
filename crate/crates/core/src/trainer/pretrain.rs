use std::collections::BTreeMap;

use super::{EpochLog, TrainConfig};
use crate::catalog::{build_model_input, item_input, Catalog, InputLimits, InteractionSequence, ModelInput, Vocabulary};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::numeric::{AdamConfig, AdamState, Real, RngStream, SeededRng, Tape};
use crate::objectives::{make_masking_plan, pretrain_loss, LossConfig, PretrainBatch};

/// `(prefix, final item)` for every sequence with at least two items.
pub fn pretrain_examples(sequences: &[InteractionSequence]) -> Vec<(&[String], &str)> {
    sequences
        .iter()
        .filter_map(|s| {
            let (last, prefix) = s.item_ids.split_last()?;
            (!prefix.is_empty()).then_some((prefix, last.as_str()))
        })
        .collect()
}

/// Multi-task pretraining with `L_IIC + λ·L_MLM`; one example per sequence
/// per epoch. `validate`, when given, is called after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn pretrain<T: Real>(
    model: &mut Model<T>,
    sequences: &[InteractionSequence],
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    mut validate: Option<&mut dyn FnMut(&Model<T>) -> Result<f64>>,
) -> Result<Vec<EpochLog>> {
    let examples = pretrain_examples(sequences);
    if examples.is_empty() {
        return Err(Error::contract("pretraining needs at least one sequence of two or more items"));
    }
    let skipped = sequences.len() - examples.len();
    if skipped > 0 {
        log::warn!("{skipped} single-item sequences skipped for pretraining");
    }
    let inputs: Vec<(ModelInput, ModelInput)> = examples
        .iter()
        .map(|(prefix, last)| {
            Ok((
                build_model_input(prefix, catalog, vocab, limits)?,
                item_input(last, catalog, vocab, limits)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut order_rng = SeededRng::stream(cfg.seed, RngStream::DataOrder);
    let mut mask_rng = SeededRng::stream(cfg.seed, RngStream::Masking);
    let mut dropout_rng = SeededRng::stream(cfg.seed, RngStream::Dropout);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let vocab_size = model.config().vocab_size;
    let use_mlm = loss_cfg.lambda > 0.0;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order_rng.shuffle(&mut order);
        let (mut total, mut iic, mut mlm, mut weight) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.pretrain_batch_size) {
            let contexts: Vec<ModelInput> = chunk.iter().map(|&i| inputs[i].0.clone()).collect();
            let positives = chunk.iter().map(|&i| inputs[i].1.clone()).collect();
            let plans = if use_mlm {
                contexts
                    .iter()
                    .map(|x| make_masking_plan(x, vocab_size, &mut mask_rng))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let batch = PretrainBatch {
                contexts,
                positives,
                plans,
            };
            let mut tape = Tape::new();
            let loss = pretrain_loss(&mut tape, model, &batch, loss_cfg, Some(&mut dropout_rng))?;
            let value = tape.value(loss.total).data()[0].as_f64();
            tape.backward_into(loss.total, model.params_mut())?;
            model.params_mut().clip_grad_norm(cfg.grad_clip);
            adam.step(model.params_mut());

            let w = chunk.len() as f64;
            total += value * w;
            iic += loss.iic * w;
            mlm += loss.mlm * w;
            weight += w;
        }
        let valid_metric = match validate.as_mut() {
            Some(f) => Some(f(model)?),
            None => None,
        };
        let losses = BTreeMap::from([
            ("total".to_string(), total / weight),
            ("iic".to_string(), iic / weight),
            ("mlm".to_string(), mlm / weight),
        ]);
        log::info!("pretrain epoch {epoch}: loss {:.5}", total / weight);
        log.push(EpochLog {
            stage: "pretrain".into(),
            epoch,
            losses,
            valid_metric,
            snapshot_taken: false,
        });
    }
    Ok(log)
}
