//! Per-entry weights for the source and target matrices, and the recency
//! weights applied to a query history at inference time.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentedPair, PairEntry};
use crate::dataio::{InteractionLog, SECONDS_PER_DAY};
use crate::error::{Error, Result};

static OUT_OF_ORDER_INTERVALS: AtomicU64 = AtomicU64::new(0);

/// Number of times [`time_interval_weight`] saw a target earlier than its source.
pub fn out_of_order_intervals() -> u64 {
    OUT_OF_ORDER_INTERVALS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Seconds,
    Minutes,
    Hours,
    #[default]
    Days,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Minutes => 60.0,
            TimeUnit::Hours => 3_600.0,
            TimeUnit::Days => SECONDS_PER_DAY,
        }
    }
}

/// Decay of source items by their distance in time from the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWeightConfig {
    /// Decay constant, expressed in `unit`.
    pub tau_time: f64,
    /// Lower bound on the weight.
    pub c: f64,
    pub unit: TimeUnit,
}

impl TimeWeightConfig {
    pub fn new(tau_time: f64, c: f64) -> Result<Self> {
        let cfg = Self {
            tau_time,
            c,
            unit: TimeUnit::Days,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_time > 0.0) {
            return Err(Error::Config(format!("tau_time must be > 0, got {}", self.tau_time)));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::Config(format!("c must lie in [0, 1], got {}", self.c)));
        }
        Ok(())
    }
}

/// `max(exp(-(t_target - t_source) / tau), c)` with the interval expressed in `cfg.unit`.
pub fn time_interval_weight(t_target: i64, t_source: i64, cfg: &TimeWeightConfig) -> f64 {
    let mut delta = t_target - t_source;
    if delta < 0 {
        OUT_OF_ORDER_INTERVALS.fetch_add(1, Ordering::Relaxed);
        delta = 0;
    }
    let interval = delta as f64 / cfg.unit.seconds();
    (-interval / cfg.tau_time).exp().max(cfg.c)
}

/// Trend-aware item popularity window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendNormConfig {
    pub window_n_days: f64,
    pub gamma: f64,
    /// Count `[t - 2N, t]` instead of `[t - N, t + N]`.
    pub past_only: bool,
}

impl Default for TrendNormConfig {
    fn default() -> Self {
        Self {
            window_n_days: 180.0,
            gamma: 0.5,
            past_only: false,
        }
    }
}

impl TrendNormConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_n_days > 0.0) {
            return Err(Error::Config(format!("window_n_days must be > 0, got {}", self.window_n_days)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    fn half_width_seconds(&self) -> i64 {
        let w = self.window_n_days * SECONDS_PER_DAY;
        if w.is_finite() && w < i64::MAX as f64 / 4.0 {
            w.floor() as i64
        } else {
            i64::MAX / 4
        }
    }
}

/// Sorted training timestamps of every item.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityIndex {
    per_item: Vec<Vec<i64>>,
}

impl PopularityIndex {
    pub fn build(train: &InteractionLog) -> Self {
        let mut per_item = vec![Vec::new(); train.num_items()];
        for x in train.interactions() {
            per_item[x.item as usize].push(x.t);
        }
        for ts in &mut per_item {
            ts.sort_unstable();
        }
        Self { per_item }
    }

    pub fn num_items(&self) -> usize {
        self.per_item.len()
    }

    pub fn timestamps(&self, item: u32) -> &[i64] {
        self.per_item.get(item as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Whole-period popularity.
    pub fn global(&self, item: u32) -> u64 {
        self.timestamps(item).len() as u64
    }

    /// Number of timestamps in the closed range `[lo, hi]`.
    pub fn count_in(&self, item: u32, lo: i64, hi: i64) -> u64 {
        let ts = self.timestamps(item);
        let start = ts.partition_point(|&x| x < lo);
        let end = ts.partition_point(|&x| x <= hi);
        end.saturating_sub(start) as u64
    }
}

/// Training interactions of `item` within the trend window around `t`.
pub fn trend_popularity(index: &PopularityIndex, item: u32, t: i64, cfg: &TrendNormConfig) -> u64 {
    let w = cfg.half_width_seconds();
    if cfg.past_only {
        index.count_in(item, t.saturating_sub(w.saturating_mul(2)), t)
    } else {
        index.count_in(item, t.saturating_sub(w), t.saturating_add(w))
    }
}

/// `popularity^-gamma`; popularity 0 maps to the neutral weight 1.
pub fn trend_norm_weight(popularity: u64, cfg: &TrendNormConfig) -> f64 {
    if popularity == 0 {
        return 1.0;
    }
    (popularity as f64).powf(-cfg.gamma)
}

/// Whole-period user/item degree normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricNorm {
    user_pop: Vec<usize>,
    item_pop: Vec<usize>,
    gamma: f64,
}

impl SymmetricNorm {
    pub fn weight(&self, user: u32, item: u32) -> f64 {
        let pu = self.user_pop.get(user as usize).copied().unwrap_or(0);
        let pi = self.item_pop.get(item as usize).copied().unwrap_or(0);
        degree_weight(pu, self.gamma) * degree_weight(pi, self.gamma)
    }
}

fn degree_weight(p: usize, gamma: f64) -> f64 {
    if p == 0 {
        1.0
    } else {
        (p as f64).powf(-gamma)
    }
}

pub fn symmetric_norm_weights(log: &InteractionLog, gamma: f64) -> SymmetricNorm {
    SymmetricNorm {
        user_pop: log.user_counts(),
        item_pop: log.item_counts(),
        gamma,
    }
}

/// `exp(-gap / tau_pos)`.
pub fn position_weight(position_gap: usize, tau_pos: f64) -> f64 {
    (-(position_gap as f64) / tau_pos).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceWeightConfig {
    /// Decay constant in positions.
    pub tau_inf: f64,
    pub c_inf: f64,
}

impl InferenceWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_inf > 0.0) {
            return Err(Error::Config(format!("tau_inf must be > 0, got {}", self.tau_inf)));
        }
        if !(0.0..=1.0).contains(&self.c_inf) {
            return Err(Error::Config(format!("c_inf must lie in [0, 1], got {}", self.c_inf)));
        }
        Ok(())
    }
}

/// Recency weights for a history of `len` items; the last item gets 1.
pub fn inference_weights(len: usize, cfg: &InferenceWeightConfig) -> Vec<f64> {
    (1..=len)
        .map(|s| (-((len - s) as f64) / cfg.tau_inf).exp().max(cfg.c_inf))
        .collect()
}

/// Normalization applied to both source and target entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    Trend,
    Symmetric,
}

#[derive(Debug, Clone)]
enum NormWeights {
    None,
    Trend(PopularityIndex, TrendNormConfig),
    Symmetric(SymmetricNorm),
}

/// The full weighting scheme used during training:
///
/// ```text
/// source entry: time(target, source) * norm(entry) * position(source gap)
/// target entry: norm(entry) * position(target gap)
/// ```
///
/// The time factor uses the first target's timestamp. Position gaps are
/// measured to the last source item and from the first target item.
#[derive(Debug, Clone)]
pub struct TrainingWeights {
    time: Option<TimeWeightConfig>,
    norm: NormWeights,
    tau_pos: Option<f64>,
}

impl TrainingWeights {
    pub fn new(
        train: &InteractionLog,
        time: Option<TimeWeightConfig>,
        normalization: Normalization,
        trend: TrendNormConfig,
        tau_pos: Option<f64>,
    ) -> Result<Self> {
        if let Some(t) = &time {
            t.validate()?;
        }
        trend.validate()?;
        if let Some(tp) = tau_pos {
            if !(tp > 0.0) {
                return Err(Error::Config(format!("tau_pos must be > 0, got {tp}")));
            }
        }
        let norm = match normalization {
            Normalization::None => NormWeights::None,
            Normalization::Trend => NormWeights::Trend(PopularityIndex::build(train), trend),
            Normalization::Symmetric => NormWeights::Symmetric(symmetric_norm_weights(train, trend.gamma)),
        };
        Ok(Self { time, norm, tau_pos })
    }

    /// No weighting at all.
    pub fn unit() -> Self {
        Self {
            time: None,
            norm: NormWeights::None,
            tau_pos: None,
        }
    }

    fn norm(&self, user: u32, e: &PairEntry) -> f64 {
        match &self.norm {
            NormWeights::None => 1.0,
            NormWeights::Trend(index, cfg) => trend_norm_weight(trend_popularity(index, e.item, e.t, cfg), cfg),
            NormWeights::Symmetric(sym) => sym.weight(user, e.item),
        }
    }

    pub fn source(&self, pair: &AugmentedPair<'_>, e: &PairEntry) -> f64 {
        let time = match &self.time {
            Some(cfg) => time_interval_weight(pair.first_target().t, e.t, cfg),
            None => 1.0,
        };
        let pos = match self.tau_pos {
            Some(tau) => position_weight(pair.source_len() - e.position, tau),
            None => 1.0,
        };
        time * self.norm(pair.user(), e) * pos
    }

    pub fn target(&self, pair: &AugmentedPair<'_>, e: &PairEntry) -> f64 {
        let pos = match self.tau_pos {
            Some(tau) => position_weight(e.position - pair.first_target().position, tau),
            None => 1.0,
        };
        self.norm(pair.user(), e) * pos
    }
}
