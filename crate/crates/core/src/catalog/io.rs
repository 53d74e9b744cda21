//! JSON Lines readers and writers for items and interactions.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AttributeDict, InteractionSequence};
use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).expect("plain data serializes");
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `{"item_id": str, "attributes": [[key, value], ...]}` per line.
pub fn load_items(path: &Path) -> Result<Vec<AttributeDict>> {
    let items: Vec<AttributeDict> = read_jsonl(path)?;
    items
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            AttributeDict::new(d.item_id, d.pairs).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// `{"user_id": str, "items": [item_id, ...]}` per line, oldest first.
pub fn load_interactions(path: &Path) -> Result<Vec<InteractionSequence>> {
    let seqs: Vec<InteractionSequence> = read_jsonl(path)?;
    seqs.into_iter()
        .enumerate()
        .map(|(i, s)| {
            InteractionSequence::new(s.user_id, s.item_ids).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_items(path: &Path, items: &[AttributeDict]) -> Result<()> {
    write_jsonl(path, items)
}

pub fn write_interactions(path: &Path, seqs: &[InteractionSequence]) -> Result<()> {
    write_jsonl(path, seqs)
}
