//! Binary tensor container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "TXRC" | u32 version | u32 n | n bytes of JSON metadata
//! u32 tensor count | per tensor: u32 name length, name, u8 dtype, u32 rank, u32 dims..., f32 payload
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use textrec_core::catalog::{InputLimits, Vocabulary};
use textrec_core::encoder::{EncoderConfig, Model};
use textrec_core::numeric::{ParamStore, Tensor};
use textrec_core::trainer::ItemFeatureMatrix;

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"TXRC";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const ITEM_MATRIX: &str = "items.matrix";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `model` or `items`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<InputLimits>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocab: Vec<String>,
    /// Row ids of the item matrix, when one is stored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub item_ids: Vec<String>,
    /// Fingerprint of the parameters the item matrix was encoded with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_built_from: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(corrupt(format!("checkpoint is corrupted: CRC {actual:08x} does not match stored {stored:08x}")));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(n)?).map_err(|e| corrupt(format!("bad checkpoint metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(corrupt(format!("tensor `{name}` has unknown dtype {dtype}")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor too large"))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| corrupt(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after tensor directory"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| corrupt(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Model parameters, vocabulary, limits and optionally the frozen item matrix.
    pub fn from_model(
        model: &Model<f32>,
        vocab: &Vocabulary,
        limits: &InputLimits,
        items: Option<&ItemFeatureMatrix<f32>>,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            model.params().iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        let mut meta = CheckpointMeta {
            kind: "model".into(),
            encoder: Some(model.config().clone()),
            limits: Some(*limits),
            vocab: vocab.tokens().to_vec(),
            item_ids: Vec::new(),
            items_built_from: None,
        };
        if let Some(m) = items {
            meta.item_ids = m.ids().to_vec();
            meta.items_built_from = Some(format!("{:016x}", m.built_from()));
            tensors.push((ITEM_MATRIX.into(), m.rows().clone()));
        }
        Self { meta, tensors }
    }

    /// A stand-alone item matrix.
    pub fn from_items(items: &ItemFeatureMatrix<f32>) -> Self {
        Self {
            meta: CheckpointMeta {
                kind: "items".into(),
                encoder: None,
                limits: None,
                vocab: Vec::new(),
                item_ids: items.ids().to_vec(),
                items_built_from: Some(format!("{:016x}", items.built_from())),
            },
            tensors: vec![(ITEM_MATRIX.into(), items.rows().clone())],
        }
    }

    pub fn model(&self) -> Result<(Model<f32>, Vocabulary, InputLimits), CliError> {
        if self.meta.kind != "model" {
            return Err(corrupt(format!("checkpoint holds `{}`, not a model", self.meta.kind)));
        }
        let config = self.meta.encoder.clone().ok_or_else(|| corrupt("model checkpoint without encoder config"))?;
        let limits = self.meta.limits.ok_or_else(|| corrupt("model checkpoint without input limits"))?;
        let vocab = Vocabulary::from_tokens(self.meta.vocab.clone()).map_err(|e| corrupt(e.to_string()))?;
        let mut params = ParamStore::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| n != ITEM_MATRIX) {
            params.add(name.clone(), t.clone()).map_err(|e| corrupt(e.to_string()))?;
        }
        let model = Model::from_params(config, params).map_err(|e| corrupt(e.to_string()))?;
        Ok((model, vocab, limits))
    }

    pub fn items(&self) -> Result<Option<ItemFeatureMatrix<f32>>, CliError> {
        let Some((_, rows)) = self.tensors.iter().find(|(n, _)| n == ITEM_MATRIX) else {
            return Ok(None);
        };
        let built_from = self
            .meta
            .items_built_from
            .as_deref()
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .ok_or_else(|| corrupt("item matrix without a valid fingerprint"))?;
        ItemFeatureMatrix::new(self.meta.item_ids.clone(), rows.clone(), built_from)
            .map(Some)
            .map_err(|e| corrupt(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use textrec_core::numeric::SeededRng;

    fn sample() -> Checkpoint {
        let vocab = Vocabulary::from_tokens(
            ["[PAD]", "[CLS]", "[MASK]", "[UNK]", "red", "mug"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let mut c = EncoderConfig::desk(vocab.len());
        c.d_model = 8;
        c.ffn_dim = 16;
        c.n_layers = 1;
        c.max_tokens = 16;
        let model = Model::<f32>::new(c, &mut SeededRng::new(2)).unwrap();
        let items = ItemFeatureMatrix::new(vec!["a".into()], Tensor::filled(&[1, 8], 0.5f32), 99).unwrap();
        Checkpoint::from_model(&model, &vocab, &InputLimits::default(), Some(&items))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"TXRC");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let (model, vocab, _) = back.model().unwrap();
        assert_eq!(vocab.len(), 6);
        assert_eq!(model.params().len(), ck.tensors.len() - 1);
        assert_eq!(back.items().unwrap().unwrap().built_from(), 99);
    }

    #[test]
    fn flipped_byte_fails_crc() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
        assert_eq!(err.exit_code(), 4);
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
