//! Item text: attribute dictionaries, tokenization, vocabulary, item sentences
//! and full model inputs.

mod input;
mod io;
mod vocab;

pub use input::{build_model_input, flatten_item, item_input, InputLimits, ItemSentence, ModelInput, TokenType};
pub use io::{load_interactions, load_items, write_interactions, write_items};
pub use vocab::{tokenize, Vocabulary, CLS, MASK, PAD, RESERVED, UNK};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered key-value text attributes of one item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDict {
    pub item_id: String,
    #[serde(rename = "attributes")]
    pub pairs: Vec<(String, String)>,
}

impl AttributeDict {
    pub fn new(item_id: impl Into<String>, pairs: Vec<(String, String)>) -> Result<Self> {
        let item_id = item_id.into();
        if let Some((k, _)) = pairs.iter().find(|(k, _)| k.trim().is_empty()) {
            return Err(Error::contract(format!("item `{item_id}` has an empty attribute key `{k}`")));
        }
        Ok(Self { item_id, pairs })
    }

    pub fn from_pairs(item_id: &str, pairs: &[(&str, &str)]) -> Result<Self> {
        Self::new(item_id, pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

/// A user's items, oldest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user_id: String,
    #[serde(rename = "items")]
    pub item_ids: Vec<String>,
}

impl InteractionSequence {
    pub fn new(user_id: impl Into<String>, item_ids: Vec<String>) -> Result<Self> {
        let user_id = user_id.into();
        if item_ids.is_empty() {
            return Err(Error::contract(format!("user `{user_id}` has an empty interaction sequence")));
        }
        Ok(Self { user_id, item_ids })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

/// Immutable item set in ingestion order.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    items: Vec<AttributeDict>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(items: Vec<AttributeDict>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate item id `{}`", item.item_id)));
            }
        }
        Ok(Self { items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[AttributeDict] {
        &self.items
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.item_id.as_str())
    }

    pub fn index_of(&self, item_id: &str) -> Result<usize> {
        self.index
            .get(item_id)
            .copied()
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))
    }

    pub fn get(&self, item_id: &str) -> Result<&AttributeDict> {
        self.index_of(item_id).map(|i| &self.items[i])
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    /// Check that every item in every sequence resolves.
    pub fn check_sequences(&self, sequences: &[InteractionSequence]) -> Result<()> {
        for s in sequences {
            for id in &s.item_ids {
                self.index_of(id)?;
            }
        }
        Ok(())
    }
}
