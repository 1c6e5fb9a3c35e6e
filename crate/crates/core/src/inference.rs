//! Scoring, top-K ranking and the model file format.
//!
//! # Model file layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic       6 bytes   "TALEB1"
//! n           u32
//! item vocab  n x (u32 byte length, UTF-8 bytes)
//! precision   u8        8 = f64 values, 4 = f32 values
//! weights     n*n values, row-major
//! config len  u32
//! config      JSON training configuration
//! ```

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{read_exact_or_format, read_u32, read_vocab, write_vocab_table, Vocab};
use crate::error::{Error, Result};
use crate::solver::{DenseMatrix, Model};
use crate::train::TrainingConfig;
use crate::weighting::inference_weights;

const MODEL_MAGIC: &[u8; 6] = b"TALEB1";

/// A user's history, oldest first, as item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub history: Vec<(u32, i64)>,
    pub exclude_seen: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    /// Sorted by index, no duplicates.
    pub entries: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredItem {
    pub item: u32,
    pub score: f64,
}

pub type Ranking = Vec<ScoredItem>;

/// Weighted indicator vector of `items`. Repeated items sum their
/// weights; indices `>= dim` are skipped and counted.
pub fn build_input_vector(items: &[u32], weights: &[f64], dim: usize) -> Result<(SparseVector, usize)> {
    if items.len() != weights.len() {
        return Err(Error::Dimension(format!("{} history items, {} weights", items.len(), weights.len())));
    }
    let mut skipped = 0;
    let mut entries: Vec<(u32, f64)> = Vec::with_capacity(items.len());
    for (&i, &w) in items.iter().zip(weights) {
        if (i as usize) < dim {
            entries.push((i, w));
        } else {
            skipped += 1;
        }
    }
    entries.sort_by_key(|&(i, _)| i);
    entries.dedup_by(|next, kept| {
        if next.0 == kept.0 {
            kept.1 += next.1;
            true
        } else {
            false
        }
    });
    Ok((SparseVector { dim, entries }, skipped))
}

/// Input vector of a query using the model's inference weights.
pub fn query_vector(model: &Model, query: &Query) -> Result<(SparseVector, usize)> {
    let items: Vec<u32> = query.history.iter().map(|&(i, _)| i).collect();
    let w = inference_weights(items.len(), &model.config.inference);
    build_input_vector(&items, &w, model.num_items())
}

/// `xᵀB` as a weighted sum of the rows of `B` selected by `x`.
pub fn score(x: &SparseVector, model: &Model) -> Result<Vec<f64>> {
    let n = model.num_items();
    if x.dim != n {
        return Err(Error::Dimension(format!("input of length {} for {n} items", x.dim)));
    }
    let mut out = vec![0.0; n];
    for &(i, w) in &x.entries {
        for (o, &b) in out.iter_mut().zip(model.weights.row(i as usize)) {
            *o += w * b;
        }
    }
    Ok(out)
}

/// Descending score, then ascending index.
#[inline]
pub(crate) fn rank_order(a: (u32, f64), b: (u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best items outside `mask`. Returns fewer when not enough
/// items are left.
pub fn topk(scores: &[f64], k: usize, mask: &[u32]) -> Ranking {
    let mut masked = vec![false; scores.len()];
    for &m in mask {
        if let Some(x) = masked.get_mut(m as usize) {
            *x = true;
        }
    }
    let mut cands: Vec<(u32, f64)> = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| !masked[i])
        .map(|(i, &s)| (i as u32, s))
        .collect();
    let k = k.min(cands.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, |&a, &b| rank_order(a, b));
        cands.truncate(k);
    }
    cands.sort_unstable_by(|&a, &b| rank_order(a, b));
    cands.into_iter().map(|(item, score)| ScoredItem { item, score }).collect()
}

/// Top-`k` recommendations for one query.
pub fn recommend(model: &Model, query: &Query, k: usize) -> Result<(Ranking, usize)> {
    let (x, skipped) = query_vector(model, query)?;
    let scores = score(&x, model)?;
    let mask: Vec<u32> = if query.exclude_seen {
        x.entries.iter().map(|&(i, _)| i).collect()
    } else {
        Vec::new()
    };
    Ok((topk(&scores, k, &mask), skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

pub fn write_model(w: &mut impl Write, model: &Model, precision: Precision) -> Result<()> {
    let n = model.num_items();
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(n as u32).to_le_bytes())?;
    write_vocab_table(w, &model.items)?;
    match precision {
        Precision::F64 => {
            w.write_all(&[8])?;
            for v in model.weights.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Precision::F32 => {
            w.write_all(&[4])?;
            for v in model.weights.as_slice() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    let cfg = serde_json::to_vec(&model.config)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<Model> {
    let mut magic = [0u8; 6];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let n = read_u32(r, "item count")? as usize;
    let items = read_vocab(r, n)?;
    let mut flag = [0u8; 1];
    read_exact_or_format(r, &mut flag, "precision flag")?;
    let width = match flag[0] {
        8 => 8,
        4 => 4,
        other => return Err(Error::Format(format!("unknown precision flag {other}"))),
    };
    let mut raw = vec![0u8; n * n * width];
    read_exact_or_format(r, &mut raw, "weights")?;
    let data: Vec<f64> = if width == 8 {
        raw.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect()
    } else {
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect()
    };
    let len = read_u32(r, "config length")? as usize;
    let mut cfg = vec![0u8; len];
    read_exact_or_format(r, &mut cfg, "config")?;
    let config: TrainingConfig = serde_json::from_slice(&cfg)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    Model::new(DenseMatrix::from_row_major(n, n, data)?, items, config)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model, precision: Precision) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model, precision)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(&mut BufReader::new(File::open(path)?))
}

/// Maps external item ids onto model indices; unknown ids become `u32::MAX`
/// so [`build_input_vector`] skips them.
pub fn resolve_items<'a>(items: &Vocab, ids: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
    ids.into_iter().map(|id| items.get(id).unwrap_or(u32::MAX)).collect()
}
