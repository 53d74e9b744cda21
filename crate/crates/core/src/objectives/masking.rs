use crate::catalog::{ModelInput, TokenType, Vocabulary, MASK, RESERVED};
use crate::error::{Error, Result};
use crate::numeric::SeededRng;

/// Probability that a candidate position is selected.
pub const MASK_PROB: f64 = 0.15;
/// Shares of MASK, RANDOM and KEEP among selected positions.
pub const MASK_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedPosition {
    pub position: usize,
    pub original: u32,
    pub action: MaskAction,
    /// Token fed to the encoder at this position.
    pub replacement: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskingPlan {
    entries: Vec<MaskedPosition>,
}

impl MaskingPlan {
    pub fn entries(&self) -> &[MaskedPosition] {
        &self.entries
    }

    pub fn positions(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.position).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy of `x` with the replacements written in.
    pub fn apply(&self, x: &ModelInput) -> ModelInput {
        let mut out = x.clone();
        for e in &self.entries {
            out.token_ids[e.position] = e.replacement;
        }
        out
    }

    /// Positions eligible for selection: word tokens only.
    pub fn candidates(x: &ModelInput) -> Vec<usize> {
        (0..x.len())
            .filter(|&i| x.token_types[i] != TokenType::Cls && !Vocabulary::is_reserved(x.token_ids[i]))
            .collect()
    }
}

/// Select each word position with probability 0.15, then corrupt it to
/// `[MASK]` (80%), a uniformly drawn non-reserved token (10%) or leave it (10%).
pub fn make_masking_plan(x: &ModelInput, vocab_size: usize, rng: &mut SeededRng) -> Result<MaskingPlan> {
    let reserved = RESERVED.len();
    if vocab_size <= reserved {
        return Err(Error::contract(format!("vocabulary of {vocab_size} has no word tokens")));
    }
    let mut entries = Vec::new();
    for position in MaskingPlan::candidates(x) {
        if !rng.bernoulli(MASK_PROB) {
            continue;
        }
        let original = x.token_ids[position];
        let u = rng.uniform(0.0, 1.0);
        let (action, replacement) = if u < MASK_SPLIT[0] {
            (MaskAction::Mask, MASK)
        } else if u < MASK_SPLIT[0] + MASK_SPLIT[1] {
            (MaskAction::Random, (reserved + rng.below(vocab_size - reserved)) as u32)
        } else {
            (MaskAction::Keep, original)
        };
        entries.push(MaskedPosition {
            position,
            original,
            action,
            replacement,
        });
    }
    Ok(MaskingPlan { entries })
}
