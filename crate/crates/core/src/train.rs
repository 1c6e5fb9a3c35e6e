//! End-to-end training: augment every training sequence, weight the pairs,
//! stream the rows into the Gram system and solve.
//!
//! Rows are produced one chunk of users at a time so the weighted source
//! matrix never exists in full. The accumulation order is the row order of
//! [`crate::augment::assemble_matrices`], so both routes give the same `G`
//! and `C` bit for bit.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, weighted_row, AugmentedPair, Augmentation, PairEntry, WeightedRow};
use crate::dataio::{Interaction, SplitDataset};
use crate::error::{Error, Result};
use crate::solver::{dense_training_bytes, solve_ridge_with, GramAccumulator, Model};
use crate::weighting::{
    InferenceWeightConfig, Normalization, TimeUnit, TimeWeightConfig, TrainingWeights, TrendNormConfig,
};

/// Source entries per chunk of users handed to the accumulator.
const CHUNK_ENTRIES: usize = 1 << 22;

/// Everything that determines a trained model apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub augmentation: Augmentation,
    pub lambda: f64,
    /// `None` disables time weighting.
    pub time: Option<TimeWeightConfig>,
    pub normalization: Normalization,
    pub trend: TrendNormConfig,
    pub tau_pos: Option<f64>,
    pub inference: InferenceWeightConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::tale(100.0, 0.2, 1.0, 180.0)
    }
}

impl TrainingConfig {
    pub fn tale(lambda: f64, c: f64, tau_time: f64, window_n_days: f64) -> Self {
        Self {
            augmentation: Augmentation::Single,
            lambda,
            time: Some(TimeWeightConfig {
                tau_time,
                c,
                unit: TimeUnit::Days,
            }),
            normalization: Normalization::Trend,
            trend: TrendNormConfig {
                window_n_days,
                ..TrendNormConfig::default()
            },
            tau_pos: None,
            inference: InferenceWeightConfig { tau_inf: 8.0, c_inf: c },
        }
    }

    /// Multi-target, position-weighted baseline without time information.
    pub fn slit(lambda: f64, tau_pos: Option<f64>) -> Self {
        Self {
            augmentation: Augmentation::Multi,
            lambda,
            time: None,
            normalization: Normalization::None,
            trend: TrendNormConfig::default(),
            tau_pos,
            inference: InferenceWeightConfig { tau_inf: 8.0, c_inf: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if let Some(t) = &self.time {
            t.validate()?;
        }
        self.trend.validate()?;
        self.inference.validate()?;
        if let Some(tp) = self.tau_pos {
            if !(tp > 0.0) {
                return Err(Error::Config(format!("tau_pos must be > 0, got {tp}")));
            }
        }
        Ok(())
    }

    pub fn weights(&self, split: &SplitDataset) -> Result<TrainingWeights> {
        TrainingWeights::new(&split.train, self.time, self.normalization, self.trend, self.tau_pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub threads: usize,
    /// Refuse to train when the dense matrices would exceed this.
    pub memory_cap_bytes: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            threads: rayon::current_num_threads(),
            memory_cap_bytes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TrainTimings {
    pub augment_secs: f64,
    pub weight_secs: f64,
    pub gram_secs: f64,
    pub solve_secs: f64,
    pub pairs: u64,
}

fn add(acc: &mut f64, d: Duration) {
    *acc += d.as_secs_f64();
}

/// Streams the weighted rows of `split.train` into `acc`, returning the
/// number of rows seen.
pub fn accumulate_gram(
    split: &SplitDataset,
    cfg: &TrainingConfig,
    weights: &TrainingWeights,
    acc: &mut GramAccumulator,
    timings: &mut TrainTimings,
) -> Result<u64> {
    let sequences: Vec<&[Interaction]> = split.train.sequences().collect();
    let mut next_pair = 0usize;
    let mut start = 0;
    while start < sequences.len() {
        let mut end = start;
        let mut entries = 0usize;
        while end < sequences.len() && (end == start || entries < CHUNK_ENTRIES) {
            let l = sequences[end].len();
            entries += l * l.saturating_sub(1) / 2;
            end += 1;
        }

        let t0 = Instant::now();
        let pairs: Vec<Vec<AugmentedPair<'_>>> =
            sequences[start..end].iter().map(|seq| augment(seq, cfg.augmentation)).collect();
        add(&mut timings.augment_secs, t0.elapsed());

        let t1 = Instant::now();
        let mut offsets = Vec::with_capacity(pairs.len());
        for p in &pairs {
            offsets.push(next_pair);
            next_pair += p.len();
        }
        let src = |p: &AugmentedPair<'_>, e: &PairEntry| weights.source(p, e);
        let tgt = |p: &AugmentedPair<'_>, e: &PairEntry| weights.target(p, e);
        let rows: Vec<Vec<WeightedRow>> = pairs
            .par_iter()
            .zip(offsets.par_iter())
            .map(|(user_pairs, &first)| {
                user_pairs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| weighted_row(p, first + k, &src, &tgt))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        add(&mut timings.weight_secs, t1.elapsed());

        let t2 = Instant::now();
        let flat: Vec<WeightedRow> = rows.into_iter().flatten().collect();
        acc.add_rows(&flat);
        add(&mut timings.gram_secs, t2.elapsed());
        start = end;
    }
    Ok(next_pair as u64)
}

/// Trains on `split.train`. Items that never occur in train keep all-zero
/// rows and columns in `B`.
pub fn train_model(split: &SplitDataset, cfg: &TrainingConfig, opts: &TrainOptions) -> Result<(Model, TrainTimings)> {
    cfg.validate()?;
    let n = split.num_items();
    let needed = dense_training_bytes(n);
    if let Some(cap) = opts.memory_cap_bytes {
        if needed > cap {
            return Err(Error::MemoryCap {
                needed_bytes: needed,
                cap_bytes: cap,
            });
        }
    }
    let mut timings = TrainTimings::default();
    let t0 = Instant::now();
    let weights = cfg.weights(split)?;
    add(&mut timings.weight_secs, t0.elapsed());

    let mut acc = GramAccumulator::new(n);
    timings.pairs = accumulate_gram(split, cfg, &weights, &mut acc, &mut timings)?;
    let t1 = Instant::now();
    let system = acc.finish(cfg.lambda);
    add(&mut timings.gram_secs, t1.elapsed());

    let t2 = Instant::now();
    let b = solve_ridge_with(system, opts.threads.max(1))?;
    add(&mut timings.solve_secs, t2.elapsed());
    log::info!(
        "trained {n} items from {} pairs: augment {:.2}s weight {:.2}s gram {:.2}s solve {:.2}s",
        timings.pairs,
        timings.augment_secs,
        timings.weight_secs,
        timings.gram_secs,
        timings.solve_secs
    );
    Ok((Model::new(b, split.train.items().clone(), cfg.clone())?, timings))
}

/// Search space of the grid driver.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub tau_time: Vec<f64>,
    pub c: Vec<f64>,
    pub window_n_days: Vec<f64>,
    /// Keep the inference floor equal to `c` for every grid point.
    pub c_inf_follows_c: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub tau_time: f64,
    pub c: f64,
    pub window_n_days: f64,
    /// `None` when the solve failed for this point.
    pub valid_ndcg10: Option<f64>,
}

impl GridPoint {
    pub fn apply(&self, base: &TrainingConfig, c_inf_follows_c: bool) -> TrainingConfig {
        let mut cfg = base.clone();
        cfg.lambda = self.lambda;
        if let Some(t) = cfg.time.as_mut() {
            t.tau_time = self.tau_time;
            t.c = self.c;
        }
        if c_inf_follows_c {
            cfg.inference.c_inf = self.c;
        }
        cfg.trend.window_n_days = self.window_n_days;
        cfg
    }
}

/// Trains every grid point and scores it by validation NDCG@10. The Gram
/// system is built once per weighting and reused for every `lambda`.
pub fn grid_search(
    split: &SplitDataset,
    base: &TrainingConfig,
    grid: &GridSpec,
    opts: &TrainOptions,
    exclude_seen: bool,
) -> Result<Vec<GridPoint>> {
    let eval = crate::evaluation::EvalConfig {
        ks: vec![10],
        exclude_seen,
        target: crate::evaluation::EvalTarget::Valid,
    };
    if grid.lambda.is_empty() || grid.tau_time.is_empty() || grid.c.is_empty() || grid.window_n_days.is_empty() {
        return Err(Error::Config("every grid dimension needs at least one value".into()));
    }
    let n = split.num_items();
    if let Some(cap) = opts.memory_cap_bytes {
        // one extra copy of the Gram system is alive while solving
        let needed = dense_training_bytes(n) / 3 * 5;
        if needed > cap {
            return Err(Error::MemoryCap {
                needed_bytes: needed,
                cap_bytes: cap,
            });
        }
    }
    let mut out = Vec::new();
    for &window in &grid.window_n_days {
        for &tau in &grid.tau_time {
            for &c in &grid.c {
                let proto = GridPoint {
                    lambda: grid.lambda[0],
                    tau_time: tau,
                    c,
                    window_n_days: window,
                    valid_ndcg10: None,
                };
                let cfg = proto.apply(base, grid.c_inf_follows_c);
                cfg.validate()?;
                let weights = cfg.weights(split)?;
                let mut acc = GramAccumulator::new(n);
                accumulate_gram(split, &cfg, &weights, &mut acc, &mut TrainTimings::default())?;
                let system = acc.finish(0.0);
                for &lambda in &grid.lambda {
                    let point = GridPoint { lambda, ..proto.clone() };
                    let cfg = point.apply(base, grid.c_inf_follows_c);
                    cfg.validate()?;
                    let mut sys = system.clone();
                    sys.lambda = lambda;
                    let score = match solve_ridge_with(sys, opts.threads.max(1)) {
                        Ok(b) => {
                            let model = Model::new(b, split.train.items().clone(), cfg)?;
                            crate::evaluation::evaluate(&model, split, &eval)?.ndcg("All", 10)
                        }
                        Err(e @ (Error::Factorization { .. } | Error::Residual { .. })) => {
                            log::warn!("grid point {point:?} skipped: {e}");
                            None
                        }
                        Err(e) => return Err(e),
                    };
                    log::info!(
                        "grid lambda={lambda} tau_time={tau} c={c} window_n_days={window}: ndcg@10={score:?}"
                    );
                    out.push(GridPoint {
                        valid_ndcg10: score,
                        ..point
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Highest validation NDCG@10; the earliest point wins ties.
pub fn best_grid_point(points: &[GridPoint]) -> Option<&GridPoint> {
    points.iter().filter(|p| p.valid_ndcg10.is_some()).fold(None, |best: Option<&GridPoint>, p| match best {
        Some(b) if b.valid_ndcg10 >= p.valid_ndcg10 => Some(b),
        _ => Some(p),
    })
}
