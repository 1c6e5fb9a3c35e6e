//! Run configuration: a flat TOML file, optionally layered on a named
//! dataset preset. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::Augmentation;
use crate::analysis::{DEFAULT_EDGES_DAYS, DEFAULT_EPSILON_DAYS};
use crate::dataio::{ColumnMapping, Delimiter};
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, EvalTarget, DEFAULT_KS};
use crate::inference::Precision;
use crate::train::{TrainOptions, TrainingConfig};
use crate::weighting::{InferenceWeightConfig, Normalization, TimeUnit, TimeWeightConfig, TrendNormConfig};

const PRESETS: [(&str, &str); 5] = [
    ("ml-1m", include_str!("../presets/ml-1m.toml")),
    ("beauty", include_str!("../presets/beauty.toml")),
    ("toys", include_str!("../presets/toys.toml")),
    ("sports", include_str!("../presets/sports.toml")),
    ("yelp", include_str!("../presets/yelp.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// Which per-item quantity the score profile reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemScoreMode {
    #[default]
    Queries,
    ColumnMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,

    pub input_path: Option<PathBuf>,
    pub delimiter: Delimiter,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    pub has_header: bool,
    pub min_timestamp: Option<i64>,
    pub max_timestamp: Option<i64>,
    /// 0 disables k-core filtering.
    pub k_core: usize,

    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/split.bin`.
    pub split_path: Option<PathBuf>,
    /// Defaults to `<output_dir>/model.bin`.
    pub model_path: Option<PathBuf>,

    pub augmentation: Augmentation,
    pub lambda: f64,
    pub time_weighting: bool,
    pub tau_time: f64,
    pub c: f64,
    pub time_unit: TimeUnit,
    pub normalization: Normalization,
    pub window_n_days: f64,
    pub gamma: f64,
    pub trend_past_only: bool,
    pub tau_pos: Option<f64>,
    pub tau_inf: f64,
    /// Defaults to `c`.
    pub c_inf: Option<f64>,

    pub eval_ks: Vec<usize>,
    pub exclude_seen: bool,
    pub eval_target: EvalTarget,
    pub dump_ranks: bool,

    /// 0 uses every available core.
    pub threads: usize,
    pub memory_cap_gib: Option<f64>,
    pub model_precision: Precision,

    /// Model to blend into the trained one as `alpha * other + (1 - alpha) * trained`.
    pub mix_model_path: Option<PathBuf>,
    pub mix_alpha: f64,

    pub analyze_pearson: bool,
    pub analyze_histogram: bool,
    pub analyze_attributes: bool,
    pub analyze_item_scores: bool,
    pub pearson_epsilon_days: f64,
    pub histogram_edges_days: Vec<f64>,
    pub attribute_path: Option<PathBuf>,
    pub item_score_mode: ItemScoreMode,

    pub grid_lambda: Vec<f64>,
    pub grid_tau_time: Vec<f64>,
    pub grid_c: Vec<f64>,
    pub grid_window_n_days: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let map = ColumnMapping::default();
        Self {
            preset: None,
            input_path: None,
            delimiter: map.delimiter,
            user_col: map.user_col,
            item_col: map.item_col,
            time_col: map.time_col,
            has_header: map.has_header,
            min_timestamp: None,
            max_timestamp: None,
            k_core: 5,
            output_dir: PathBuf::from("run"),
            split_path: None,
            model_path: None,
            augmentation: Augmentation::Single,
            lambda: 100.0,
            time_weighting: true,
            tau_time: 1.0,
            c: 0.2,
            time_unit: TimeUnit::Days,
            normalization: Normalization::Trend,
            window_n_days: 180.0,
            gamma: 0.5,
            trend_past_only: false,
            tau_pos: None,
            tau_inf: 8.0,
            c_inf: None,
            eval_ks: DEFAULT_KS.to_vec(),
            exclude_seen: true,
            eval_target: EvalTarget::Test,
            dump_ranks: true,
            threads: 0,
            memory_cap_gib: None,
            model_precision: Precision::F64,
            mix_model_path: None,
            mix_alpha: 0.9,
            analyze_pearson: true,
            analyze_histogram: true,
            analyze_attributes: false,
            analyze_item_scores: true,
            pearson_epsilon_days: DEFAULT_EPSILON_DAYS,
            histogram_edges_days: DEFAULT_EDGES_DAYS.to_vec(),
            attribute_path: None,
            item_score_mode: ItemScoreMode::Queries,
            grid_lambda: vec![1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0],
            grid_tau_time: (-10..=10).map(|e| 2f64.powi(e)).collect(),
            grid_c: (0..=10).map(|k| k as f64 / 10.0).collect(),
            grid_window_n_days: vec![7.0, 30.0, 90.0, 180.0, 360.0, 720.0],
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{origin}: {e}")))
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml_str(&format!("preset = {name:?}"))
    }

    /// Parses a config; a `preset` key pulls in the named preset first and
    /// the remaining keys override it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user = parse_table(text, "config")?;
        let mut merged = match user.get("preset") {
            Some(toml::Value::String(name)) => {
                let body = PRESETS
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, body)| *body)
                    .ok_or_else(|| {
                        let known: Vec<_> = preset_names().collect();
                        Error::Config(format!("unknown preset {name:?}; known: {}", known.join(", ")))
                    })?;
                parse_table(body, name)?
            }
            Some(_) => return Err(Error::Config("preset must be a string".into())),
            None => toml::Table::new(),
        };
        merged.extend(user);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.training_config().validate()?;
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config("eval_ks must be non-empty and >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_alpha) {
            return Err(Error::Config(format!("mix_alpha must lie in [0, 1], got {}", self.mix_alpha)));
        }
        if !(self.pearson_epsilon_days > 0.0) {
            return Err(Error::Config("pearson_epsilon_days must be > 0".into()));
        }
        if self.histogram_edges_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("histogram_edges_days must be strictly increasing".into()));
        }
        if let Some(cap) = self.memory_cap_gib {
            if !(cap > 0.0) {
                return Err(Error::Config("memory_cap_gib must be > 0".into()));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_timestamp, self.max_timestamp) {
            if lo >= hi {
                return Err(Error::Config("min_timestamp must be below max_timestamp".into()));
            }
        }
        Ok(())
    }

    pub fn column_mapping(&self) -> ColumnMapping {
        ColumnMapping {
            delimiter: self.delimiter.clone(),
            user_col: self.user_col,
            item_col: self.item_col,
            time_col: self.time_col,
            has_header: self.has_header,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            augmentation: self.augmentation,
            lambda: self.lambda,
            time: self.time_weighting.then_some(TimeWeightConfig {
                tau_time: self.tau_time,
                c: self.c,
                unit: self.time_unit,
            }),
            normalization: self.normalization,
            trend: TrendNormConfig {
                window_n_days: self.window_n_days,
                gamma: self.gamma,
                past_only: self.trend_past_only,
            },
            tau_pos: self.tau_pos,
            inference: InferenceWeightConfig {
                tau_inf: self.tau_inf,
                c_inf: self.c_inf.unwrap_or(self.c),
            },
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ks: self.eval_ks.clone(),
            exclude_seen: self.exclude_seen,
            target: self.eval_target,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            threads: if self.threads == 0 {
                rayon::current_num_threads()
            } else {
                self.threads
            },
            memory_cap_bytes: self.memory_cap_gib.map(|g| (g * (1u64 << 30) as f64) as u64),
        }
    }

    pub fn split_path(&self) -> PathBuf {
        self.split_path.clone().unwrap_or_else(|| self.output_dir.join("split.bin"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_path.clone().unwrap_or_else(|| self.output_dir.join("model.bin"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_values() {
        let expect = [
            ("ml-1m", 100.0, 0.2, 1.0 / 512.0, 180.0),
            ("beauty", 100.0, 0.4, 0.5, 180.0),
            ("toys", 100.0, 0.3, 1.0, 360.0),
            ("sports", 500.0, 0.4, 4.0, 180.0),
            ("yelp", 0.001, 0.2, 1.0 / 32.0, 180.0),
        ];
        for (name, lambda, c, tau, n) in expect {
            let cfg = RunConfig::preset(name).unwrap();
            assert_eq!((cfg.lambda, cfg.c, cfg.tau_time, cfg.window_n_days), (lambda, c, tau, n), "{name}");
            assert_eq!(cfg.k_core, 5);
            assert_eq!(cfg.training_config().inference.c_inf, c);
        }
        assert_eq!(RunConfig::preset("yelp").unwrap().mix_alpha, 0.9);
        assert_eq!(RunConfig::preset("ml-1m").unwrap().column_mapping(), ColumnMapping::movielens());
        assert_eq!(RunConfig::preset("beauty").unwrap().column_mapping(), ColumnMapping::amazon_ratings());
    }

    #[test]
    fn user_keys_override_preset() {
        let cfg = RunConfig::from_toml_str("preset = \"beauty\"\nlambda = 7.5\nexclude_seen = false").unwrap();
        assert_eq!(cfg.lambda, 7.5);
        assert_eq!(cfg.c, 0.4);
        assert!(!cfg.exclude_seen);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml_str("lamda = 1.0").is_err());
        assert!(RunConfig::from_toml_str("preset = \"netflix\"").is_err());
        assert!(RunConfig::from_toml_str("c = 1.5").is_err());
        assert!(RunConfig::from_toml_str("tau_time = 0.0").is_err());
        assert!(RunConfig::from_toml_str("eval_ks = []").is_err());
        assert!(RunConfig::from_toml_str("histogram_edges_days = [1.0, 0.5]").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::from_toml_str("preset = \"toys\"\ntau_pos = 2.0\nmemory_cap_gib = 4.0").unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn grid_defaults_cover_search_space() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.grid_tau_time.len(), 21);
        assert_eq!(cfg.grid_tau_time[0], 1.0 / 1024.0);
        assert_eq!(cfg.grid_c.len(), 11);
        assert_eq!(cfg.grid_c[3], 0.3);
    }
}
