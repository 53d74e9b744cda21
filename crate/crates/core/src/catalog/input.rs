use serde::{Deserialize, Serialize};

use super::{tokenize, AttributeDict, Catalog, Vocabulary, CLS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenType {
    Cls,
    Key,
    Value,
}

impl TokenType {
    /// Row in the token-type embedding table.
    pub fn index(self) -> usize {
        match self {
            TokenType::Cls => 0,
            TokenType::Key => 1,
            TokenType::Value => 2,
        }
    }
}

/// Size limits applied when building model inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLimits {
    /// Token budget excluding `[CLS]`.
    pub max_tokens: usize,
    /// Most recent items kept from a history.
    pub max_items: usize,
    /// Token cap applied separately to each key and each value.
    pub attr_token_cap: usize,
}

impl Default for InputLimits {
    fn default() -> Self {
        Self {
            max_tokens: 1024,
            max_items: 50,
            attr_token_cap: 16,
        }
    }
}

/// A flattened item: `k1 v1 k2 v2 ...` with per-token key/value tags.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemSentence {
    pub token_ids: Vec<u32>,
    pub token_types: Vec<TokenType>,
}

impl ItemSentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub fn flatten_item(item: &AttributeDict, vocab: &Vocabulary, cap: usize) -> Result<ItemSentence> {
    if cap == 0 {
        return Err(Error::contract("attribute token cap must be at least 1"));
    }
    if item.pairs.is_empty() {
        log::debug!("item `{}` has no attributes; empty sentence", item.item_id);
    }
    let mut out = ItemSentence::default();
    for (key, value) in &item.pairs {
        for (text, ty) in [(key, TokenType::Key), (value, TokenType::Value)] {
            for tok in tokenize(text).into_iter().take(cap) {
                out.token_ids.push(vocab.id(&tok));
                out.token_types.push(ty);
            }
        }
    }
    Ok(out)
}

/// Encoder input `[CLS], T_n, T_{n-1}, ..., T_1` for one history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelInput {
    pub token_ids: Vec<u32>,
    pub token_positions: Vec<u32>,
    pub token_types: Vec<TokenType>,
    /// 0 for `[CLS]`, 1 for the most recent item, 2 for the one before, ...
    pub item_positions: Vec<u32>,
    pub global_mask: Vec<bool>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn with_cls(capacity: usize) -> Self {
        let mut x = Self {
            token_ids: Vec::with_capacity(capacity),
            token_positions: Vec::with_capacity(capacity),
            token_types: Vec::with_capacity(capacity),
            item_positions: Vec::with_capacity(capacity),
            global_mask: Vec::with_capacity(capacity),
        };
        x.push(CLS, TokenType::Cls, 0, true);
        x
    }

    fn push(&mut self, token: u32, ty: TokenType, item_position: u32, global: bool) {
        self.token_positions.push(self.token_ids.len() as u32);
        self.token_ids.push(token);
        self.token_types.push(ty);
        self.item_positions.push(item_position);
        self.global_mask.push(global);
    }
}

/// Build the reversed, truncated input for a history given oldest first.
///
/// Keeps the `max_items` most recent items, emits them most recent first and
/// cuts the whole input at `max_tokens + 1` tokens, so truncation drops
/// tokens of the oldest retained items.
pub fn build_model_input<S: AsRef<str>>(
    history: &[S],
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
) -> Result<ModelInput> {
    if history.is_empty() {
        return Err(Error::contract("model input needs at least one item"));
    }
    let budget = limits.max_tokens + 1;
    let start = history.len().saturating_sub(limits.max_items);
    let mut x = ModelInput::with_cls(budget.min(64));
    for (k, id) in history[start..].iter().rev().enumerate() {
        let item = catalog.get(id.as_ref())?;
        if x.len() >= budget {
            continue;
        }
        let sentence = flatten_item(item, vocab, limits.attr_token_cap)?;
        for (&tok, &ty) in sentence.token_ids.iter().zip(&sentence.token_types) {
            if x.len() >= budget {
                break;
            }
            x.push(tok, ty, k as u32 + 1, false);
        }
    }
    Ok(x)
}

/// `[CLS], T_i`: an item viewed as a one-item history.
pub fn item_input(item_id: &str, catalog: &Catalog, vocab: &Vocabulary, limits: &InputLimits) -> Result<ModelInput> {
    build_model_input(&[item_id], catalog, vocab, limits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{InteractionSequence, UNK};

    fn words(n: usize, prefix: &str) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn fixture() -> (Catalog, Vocabulary) {
        let items = vec![
            AttributeDict::from_pairs("i1", &[("Title", "red mug")]).unwrap(),
            AttributeDict::from_pairs("i2", &[("Title", "blue shirt"), ("Brand", "acme")]).unwrap(),
            AttributeDict::from_pairs("i3", &[("Brand", "zeta")]).unwrap(),
        ];
        let vocab = Vocabulary::build(&items, 1).unwrap();
        (Catalog::new(items).unwrap(), vocab)
    }

    #[test]
    fn flatten_orders_keys_and_values() {
        let (catalog, vocab) = fixture();
        let s = flatten_item(catalog.get("i2").unwrap(), &vocab, 16).unwrap();
        let toks: Vec<&str> = s.token_ids.iter().map(|&t| vocab.token(t).unwrap()).collect();
        assert_eq!(toks, ["title", "blue", "shirt", "brand", "acme"]);
        use TokenType::*;
        assert_eq!(s.token_types, [Key, Value, Value, Key, Value]);
    }

    #[test]
    fn flatten_caps_each_field() {
        let item = AttributeDict::new("x", vec![("Title".into(), words(40, "w"))]).unwrap();
        let vocab = Vocabulary::build(std::slice::from_ref(&item), 1).unwrap();
        let s = flatten_item(&item, &vocab, 16).unwrap();
        assert_eq!(s.len(), 17);
        assert_eq!(vocab.token(s.token_ids[16]), Some("w15"));
        assert!(flatten_item(&item, &vocab, 0).is_err());
    }

    #[test]
    fn flatten_empty_item() {
        let (_, vocab) = fixture();
        let item = AttributeDict::new("e", vec![]).unwrap();
        assert_eq!(flatten_item(&item, &vocab, 16).unwrap(), ItemSentence::default());
    }

    #[test]
    fn reversed_layout() {
        let (catalog, vocab) = fixture();
        let x = build_model_input(&["i1", "i2", "i3"], &catalog, &vocab, &InputLimits::default()).unwrap();
        // CLS, i3 (2 tokens), i2 (5 tokens), i1 (3 tokens)
        assert_eq!(x.item_positions, [0, 1, 1, 2, 2, 2, 2, 2, 3, 3, 3]);
        assert_eq!(x.token_ids[0], CLS);
        assert_eq!(vocab.token(x.token_ids[2]), Some("zeta"));
        assert_eq!(x.token_positions, (0..11).collect::<Vec<u32>>());
        assert_eq!(x.global_mask.iter().filter(|&&g| g).count(), 1);
        assert!(x.global_mask[0]);
    }

    #[test]
    fn keeps_most_recent_items() {
        let items: Vec<AttributeDict> = (1..=60)
            .map(|i| AttributeDict::new(format!("i{i}"), vec![("T".into(), format!("w{i}"))]).unwrap())
            .collect();
        let vocab = Vocabulary::build(&items, 1).unwrap();
        let catalog = Catalog::new(items).unwrap();
        let history: Vec<String> = (1..=60).map(|i| format!("i{i}")).collect();
        let x = build_model_input(&history, &catalog, &vocab, &InputLimits::default()).unwrap();
        assert_eq!(*x.item_positions.iter().max().unwrap(), 50);
        let values: Vec<&str> = x
            .token_ids
            .iter()
            .zip(&x.token_types)
            .filter(|(_, &t)| t == TokenType::Value)
            .map(|(&id, _)| vocab.token(id).unwrap())
            .collect();
        assert_eq!(values.first(), Some(&"w60"));
        assert_eq!(values.last(), Some(&"w11"));
        assert_eq!(values.len(), 50);
    }

    #[test]
    fn truncates_oldest_tokens() {
        // 13 items of 100 tokens each = 1300 tokens.
        let items: Vec<AttributeDict> = (0..13)
            .map(|i| AttributeDict::new(format!("i{i}"), vec![("k".into(), words(99, &format!("t{i}_")))]).unwrap())
            .collect();
        let vocab = Vocabulary::build(&items, 1).unwrap();
        let catalog = Catalog::new(items).unwrap();
        let history: Vec<String> = (0..13).map(|i| format!("i{i}")).collect();
        let limits = InputLimits {
            attr_token_cap: 128,
            ..InputLimits::default()
        };
        let x = build_model_input(&history, &catalog, &vocab, &limits).unwrap();
        assert_eq!(x.len(), 1025);
        // Most recent item fully present, the oldest items cut.
        assert_eq!(x.item_positions[1], 1);
        assert_eq!(vocab.token(x.token_ids[2]), Some("t12_0"));
        assert_eq!(*x.item_positions.last().unwrap(), 11);
    }

    #[test]
    fn item_input_is_single_item_history() {
        let (catalog, vocab) = fixture();
        let limits = InputLimits::default();
        let a = item_input("i1", &catalog, &vocab, &limits).unwrap();
        let seq = InteractionSequence::new("u", vec!["i1".into()]).unwrap();
        assert_eq!(a, build_model_input(&seq.item_ids, &catalog, &vocab, &limits).unwrap());
        assert_eq!(a.len(), 4);
        assert_eq!(a.item_positions, [0, 1, 1, 1]);
        assert_eq!(a.token_types[0], TokenType::Cls);
    }

    #[test]
    fn unresolvable_item_errors() {
        let (catalog, vocab) = fixture();
        let err = build_model_input(&["i1", "ghost"], &catalog, &vocab, &InputLimits::default()).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let (_, vocab) = fixture();
        let item = AttributeDict::from_pairs("n", &[("Colour", "teal")]).unwrap();
        let s = flatten_item(&item, &vocab, 4).unwrap();
        assert_eq!(s.token_ids, [UNK, UNK]);
    }
}
