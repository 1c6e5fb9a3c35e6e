//! Diagnostics over consecutive training pairs and trained models:
//! interval/weight correlation, interval histograms, attribute transition
//! rates and per-item score profiles.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::dataio::{InteractionLog, SplitDataset, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::inference::{build_input_vector, score, SparseVector};
use crate::solver::Model;
use crate::weighting::inference_weights;

pub const DEFAULT_EPSILON_DAYS: f64 = 1.0;
pub const DEFAULT_EDGES_DAYS: [f64; 5] = [0.0, 1.0 / 24.0, 1.0, 7.0, 30.0];

/// Summed interval (days) and count of every consecutive pair `a -> b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalMatrix {
    pub entries: BTreeMap<(u32, u32), (f64, u64)>,
}

impl IntervalMatrix {
    pub fn average(&self, a: u32, b: u32) -> Option<f64> {
        self.entries.get(&(a, b)).map(|&(s, c)| s / c as f64)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn consecutive_pairs(train: &InteractionLog) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
    train.sequences().flat_map(|seq| {
        seq.windows(2)
            .map(|w| (w[0].item, w[1].item, (w[1].t - w[0].t).max(0) as f64 / SECONDS_PER_DAY))
    })
}

pub fn avg_interval_matrix(train: &InteractionLog) -> IntervalMatrix {
    let mut m = IntervalMatrix::default();
    for (a, b, days) in consecutive_pairs(train) {
        let e = m.entries.entry((a, b)).or_insert((0.0, 0));
        e.0 += days;
        e.1 += 1;
    }
    m
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between `1 / (avg interval + epsilon)` and the model weight
/// over the observed pairs. `None` with fewer than two pairs or zero variance.
pub fn temporal_pearson(model: &Model, intervals: &IntervalMatrix, epsilon_days: f64) -> Result<Option<f64>> {
    if !(epsilon_days > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {epsilon_days}")));
    }
    let n = model.num_items() as u32;
    let mut xs = Vec::with_capacity(intervals.len());
    let mut ys = Vec::with_capacity(intervals.len());
    for (&(a, b), &(sum, count)) in &intervals.entries {
        if a >= n || b >= n {
            return Err(Error::Dimension(format!("pair ({a}, {b}) outside a {n}-item model")));
        }
        xs.push(1.0 / (sum / count as f64 + epsilon_days));
        ys.push(model.weights.get(a as usize, b as usize));
    }
    Ok(pearson(&xs, &ys))
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bucket edges must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Index of the bucket `(e[i-1], e[i]]` holding `x`; bucket 0 is
/// `(-inf, e[0]]` and the last is `(e[last], inf)`.
fn bucket(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e < x)
}

fn bucket_bounds(edges: &[f64], i: usize) -> (f64, f64) {
    let lo = if i == 0 { f64::NEG_INFINITY } else { edges[i - 1] };
    let hi = edges.get(i).copied().unwrap_or(f64::INFINITY);
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalHistogram {
    pub edges_days: Vec<f64>,
    /// `edges_days.len() + 1` buckets.
    pub counts: Vec<u64>,
}

impl IntervalHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "lower_days,upper_days,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            let (lo, hi) = bucket_bounds(&self.edges_days, i);
            writeln!(w, "{lo},{hi},{c}")?;
        }
        Ok(())
    }
}

/// Counts consecutive pairs by their interval in days.
pub fn cooccurrence_by_interval(train: &InteractionLog, edges_days: &[f64]) -> Result<IntervalHistogram> {
    check_edges(edges_days)?;
    let mut counts = vec![0u64; edges_days.len() + 1];
    for (_, _, days) in consecutive_pairs(train) {
        counts[bucket(edges_days, days)] += 1;
    }
    Ok(IntervalHistogram {
        edges_days: edges_days.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTransitions {
    pub edges_days: Vec<f64>,
    pub pairs: Vec<u64>,
    pub changed: Vec<u64>,
    /// Pairs with an item missing from the attribute map.
    pub skipped: u64,
}

impl AttributeTransitions {
    /// Fraction of pairs whose attribute changed; `None` for empty groups.
    pub fn probabilities(&self) -> Vec<Option<f64>> {
        self.pairs
            .iter()
            .zip(&self.changed)
            .map(|(&p, &c)| (p > 0).then(|| c as f64 / p as f64))
            .collect()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "lower_days,upper_days,pairs,probability")?;
        for (i, p) in self.probabilities().iter().enumerate() {
            let (lo, hi) = bucket_bounds(&self.edges_days, i);
            let p = p.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{lo},{hi},{},{p}", self.pairs[i])?;
        }
        Ok(())
    }
}

/// Per interval group, how often consecutive items differ in attribute.
/// `attributes` is indexed by item.
pub fn attribute_transition_prob(
    train: &InteractionLog,
    attributes: &[Option<String>],
    edges_days: &[f64],
) -> Result<AttributeTransitions> {
    check_edges(edges_days)?;
    let groups = edges_days.len() + 1;
    let mut out = AttributeTransitions {
        edges_days: edges_days.to_vec(),
        pairs: vec![0; groups],
        changed: vec![0; groups],
        skipped: 0,
    };
    let attr = |i: u32| attributes.get(i as usize).and_then(Option::as_ref);
    for (a, b, days) in consecutive_pairs(train) {
        match (attr(a), attr(b)) {
            (Some(x), Some(y)) => {
                let g = bucket(edges_days, days);
                out.pairs[g] += 1;
                out.changed[g] += u64::from(x != y);
            }
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Reads `item_id<TAB>attribute` lines. Items outside `train` are ignored.
pub fn read_attributes(path: impl AsRef<Path>, train: &InteractionLog) -> Result<Vec<Option<String>>> {
    let path = path.as_ref();
    let mut out = vec![None; train.num_items()];
    for (no, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, attribute) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            msg: "expected item_id<TAB>attribute".into(),
        })?;
        if let Some(i) = train.items().get(id.trim()) {
            out[i as usize] = Some(attribute.trim().to_string());
        }
    }
    Ok(out)
}

/// Input vectors of every test user (train history plus validation item).
pub fn test_queries(model: &Model, split: &SplitDataset) -> Result<Vec<SparseVector>> {
    split
        .test
        .keys()
        .map(|&u| {
            let mut h: Vec<u32> = split.train.sequence(u).iter().map(|x| x.item).collect();
            if let Some(v) = split.valid.get(&u) {
                h.push(v.item);
            }
            let w = inference_weights(h.len(), &model.config.inference);
            build_input_vector(&h, &w, model.num_items()).map(|(x, _)| x)
        })
        .collect()
}

/// Mean predicted score of every item over `queries`.
pub fn avg_item_score(model: &Model, queries: &[SparseVector]) -> Result<Vec<f64>> {
    let n = model.num_items();
    let mut sum = vec![0.0; n];
    for q in queries {
        for (s, v) in sum.iter_mut().zip(score(q, model)?) {
            *s += v;
        }
    }
    if !queries.is_empty() {
        let count = queries.len() as f64;
        sum.iter_mut().for_each(|s| *s /= count);
    }
    Ok(sum)
}

/// Mean of every column of the weight matrix.
pub fn column_means(model: &Model) -> Vec<f64> {
    let n = model.num_items();
    let mut sum = vec![0.0; n];
    for r in 0..n {
        for (s, v) in sum.iter_mut().zip(model.weights.row(r)) {
            *s += v;
        }
    }
    if n > 0 {
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemScoreRow {
    pub popularity_rank: usize,
    pub item: u32,
    pub popularity: usize,
    pub mean_score: f64,
}

/// Pairs per-item values with training popularity, most popular first.
pub fn popularity_profile(train: &InteractionLog, values: &[f64]) -> Vec<ItemScoreRow> {
    let counts = train.item_counts();
    let mut order: Vec<usize> = (0..counts.len().min(values.len())).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| ItemScoreRow {
            popularity_rank: rank + 1,
            item: i as u32,
            popularity: counts[i],
            mean_score: values[i],
        })
        .collect()
}

pub fn write_profile_csv(w: &mut impl Write, rows: &[ItemScoreRow], train: &InteractionLog) -> Result<()> {
    writeln!(w, "popularity_rank,item,popularity,mean_score")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.popularity_rank, train.items().id(r.item), r.popularity, r.mean_score)?;
    }
    Ok(())
}

pub fn write_pearson_csv(w: &mut impl Write, value: Option<f64>, pairs: usize) -> Result<()> {
    writeln!(w, "pearson,pairs")?;
    writeln!(w, "{},{pairs}", value.map(|v| v.to_string()).unwrap_or_default())?;
    Ok(())
}
