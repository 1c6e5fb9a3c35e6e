//! Leave-one-out HR@K / NDCG@K over the full item catalogue, sliced by
//! item popularity and by the interval between a user's last two
//! interactions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{HeldOut, InteractionLog, SplitDataset};
use crate::error::{Error, Result};
use crate::inference::{build_input_vector, score};
use crate::solver::Model;
use crate::train::TrainingConfig;
use crate::weighting::inference_weights;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
const HEAD_FRACTION: f64 = 0.2;

/// 1-based rank of `truth` among unmasked items: items with a higher score
/// and tied items with a lower index come first.
pub fn rank_of_truth(scores: &[f64], masked: &[bool], truth: u32) -> Result<usize> {
    let t = truth as usize;
    let Some(&st) = scores.get(t) else {
        return Err(Error::Protocol(format!("truth item {truth} outside {} scores", scores.len())));
    };
    if masked.get(t).copied().unwrap_or(false) {
        return Err(Error::Protocol(format!("truth item {truth} is masked")));
    }
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| !masked.get(j).copied().unwrap_or(false) && (s > st || (s == st && j < t)))
        .count();
    Ok(ahead + 1)
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn hit_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// `true` for the `ceil(0.2 n)` most popular training items, ties broken
/// by ascending index.
pub fn head_tail_split(train: &InteractionLog) -> Vec<bool> {
    let counts = train.item_counts();
    let n = counts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let head = (HEAD_FRACTION * n as f64).ceil() as usize;
    let mut is_head = vec![false; n];
    for &i in &order[..head.min(n)] {
        is_head[i] = true;
    }
    is_head
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntervalGroup {
    Short,
    Mid,
    Long,
}

/// Splits users by `t_test - t_valid` at the empirical 1/3 and 2/3
/// quantiles; users on a boundary go to the lower group.
pub fn interval_groups(valid: &BTreeMap<u32, HeldOut>, test: &BTreeMap<u32, HeldOut>) -> BTreeMap<u32, IntervalGroup> {
    let deltas: Vec<(u32, i64)> = test
        .iter()
        .filter_map(|(u, t)| valid.get(u).map(|v| (*u, (t.t - v.t).max(0))))
        .collect();
    let mut sorted: Vec<i64> = deltas.iter().map(|&(_, d)| d).collect();
    sorted.sort_unstable();
    let count = sorted.len();
    if count == 0 {
        return BTreeMap::new();
    }
    let q1 = sorted[count.div_ceil(3) - 1];
    let q2 = sorted[(2 * count).div_ceil(3) - 1];
    deltas
        .into_iter()
        .map(|(u, d)| {
            let g = if d <= q1 {
                IntervalGroup::Short
            } else if d <= q2 {
                IntervalGroup::Mid
            } else {
                IntervalGroup::Long
            };
            (u, g)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    Valid,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Mask previously seen items (other than the held-out item itself).
    pub exclude_seen: bool,
    pub target: EvalTarget,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            exclude_seen: true,
            target: EvalTarget::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRank {
    pub user: u32,
    pub truth: u32,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub slice: String,
    pub users: usize,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: EvalTarget,
    pub exclude_seen: bool,
    pub ks: Vec<usize>,
    pub config: TrainingConfig,
    pub slices: Vec<SliceReport>,
    #[serde(skip)]
    pub ranks: Vec<UserRank>,
}

impl EvalReport {
    pub fn slice(&self, name: &str) -> Option<&SliceReport> {
        self.slices.iter().find(|s| s.slice == name)
    }

    pub fn ndcg(&self, slice: &str, k: usize) -> Option<f64> {
        self.slice(slice)?.ndcg.get(&k).copied()
    }

    pub fn hr(&self, slice: &str, k: usize) -> Option<f64> {
        self.slice(slice)?.hr.get(&k).copied()
    }

    pub fn write_json(&self, w: &mut impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *w, self)?;
        writeln!(w)?;
        Ok(())
    }

    /// One row per slice, metric and K.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "slice,metric,k,value,users")?;
        for s in &self.slices {
            for (name, map) in [("hr", &s.hr), ("ndcg", &s.ndcg)] {
                for (k, v) in map {
                    writeln!(w, "{},{name},{k},{v},{}", s.slice, s.users)?;
                }
            }
        }
        Ok(())
    }

    /// Tab-separated `user, truth, rank` using external ids.
    pub fn write_ranks(&self, w: &mut impl Write, split: &SplitDataset) -> Result<()> {
        writeln!(w, "user\ttruth\trank")?;
        for r in &self.ranks {
            writeln!(
                w,
                "{}\t{}\t{}",
                split.train.users().id(r.user),
                split.train.items().id(r.truth),
                r.rank
            )?;
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>, split: Option<&SplitDataset>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut json = std::fs::File::create(dir.join("metrics.json"))?;
        self.write_json(&mut json)?;
        let mut csv = std::fs::File::create(dir.join("metrics.csv"))?;
        self.write_csv(&mut csv)?;
        if let Some(split) = split {
            let mut tsv = std::io::BufWriter::new(std::fs::File::create(dir.join("ranks.tsv"))?);
            self.write_ranks(&mut tsv, split)?;
            tsv.flush()?;
        }
        Ok(())
    }
}

fn slice_report(name: &str, ranks: &[usize], ks: &[usize]) -> SliceReport {
    let users = ranks.len();
    let mean = |f: &dyn Fn(usize) -> f64| {
        if users == 0 {
            0.0
        } else {
            ranks.iter().map(|&r| f(r)).sum::<f64>() / users as f64
        }
    };
    SliceReport {
        slice: name.to_string(),
        users,
        hr: ks.iter().map(|&k| (k, mean(&|r| hit_at_k(r, k)))).collect(),
        ndcg: ks.iter().map(|&k| (k, mean(&|r| ndcg_at_k(r, k)))).collect(),
    }
}

/// Ranks every held-out item against the full catalogue. The input
/// history is the training sequence, plus the validation item when
/// evaluating on test.
pub fn evaluate(model: &Model, split: &SplitDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if model.items != *split.train.items() {
        return Err(Error::Vocabulary("model and dataset item vocabularies differ".into()));
    }
    if cfg.ks.is_empty() || cfg.ks.contains(&0) {
        return Err(Error::Config("evaluation cutoffs must be >= 1".into()));
    }
    let n = model.num_items();
    let targets = match cfg.target {
        EvalTarget::Test => &split.test,
        EvalTarget::Valid => &split.valid,
    };
    let users: Vec<(u32, HeldOut)> = targets.iter().map(|(&u, &h)| (u, h)).collect();
    let ranks: Vec<UserRank> = users
        .par_iter()
        .map_init(
            || vec![false; n],
            |masked, &(user, truth)| -> Result<UserRank> {
                let mut history: Vec<u32> = split.train.sequence(user).iter().map(|x| x.item).collect();
                if cfg.target == EvalTarget::Test {
                    if let Some(v) = split.valid.get(&user) {
                        history.push(v.item);
                    }
                }
                let w = inference_weights(history.len(), &model.config.inference);
                let (x, _) = build_input_vector(&history, &w, n)?;
                let scores = score(&x, model)?;
                if cfg.exclude_seen {
                    for &(i, _) in &x.entries {
                        masked[i as usize] = i != truth.item;
                    }
                }
                let rank = rank_of_truth(&scores, masked, truth.item);
                for &(i, _) in &x.entries {
                    masked[i as usize] = false;
                }
                Ok(UserRank {
                    user,
                    truth: truth.item,
                    rank: rank?,
                })
            },
        )
        .collect::<Result<_>>()?;

    let is_head = head_tail_split(&split.train);
    let all: Vec<usize> = ranks.iter().map(|r| r.rank).collect();
    let pick = |f: &dyn Fn(&UserRank) -> bool| -> Vec<usize> { ranks.iter().filter(|r| f(r)).map(|r| r.rank).collect() };
    let mut slices = vec![
        slice_report("All", &all, &cfg.ks),
        slice_report("Head", &pick(&|r| is_head[r.truth as usize]), &cfg.ks),
        slice_report("Tail", &pick(&|r| !is_head[r.truth as usize]), &cfg.ks),
    ];
    if cfg.target == EvalTarget::Test {
        let groups = interval_groups(&split.valid, &split.test);
        for (name, g) in [("Short", IntervalGroup::Short), ("Mid", IntervalGroup::Mid), ("Long", IntervalGroup::Long)] {
            slices.push(slice_report(name, &pick(&|r| groups.get(&r.user) == Some(&g)), &cfg.ks));
        }
    }
    Ok(EvalReport {
        target: cfg.target,
        exclude_seen: cfg.exclude_seen,
        ks: cfg.ks.clone(),
        config: model.config.clone(),
        slices,
        ranks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{leave_one_out_split, RawInteraction, Vocab};
    use crate::solver::DenseMatrix;
    use proptest::prelude::*;

    fn raw(rows: &[(&str, &str, i64)]) -> Vec<RawInteraction> {
        rows.iter()
            .map(|&(u, i, t)| RawInteraction {
                user_id: u.into(),
                item_id: i.into(),
                timestamp: t,
            })
            .collect()
    }

    fn held(pairs: &[(u32, i64)]) -> BTreeMap<u32, HeldOut> {
        pairs.iter().map(|&(u, t)| (u, HeldOut { item: 0, t })).collect()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_truth(&[0.1, 0.9, 0.2], &[], 1).unwrap(), 1);
        assert_eq!(rank_of_truth(&[0.5, 0.5, 0.2], &[], 1).unwrap(), 2);
        assert_eq!(rank_of_truth(&[0.5, 0.5, 0.2], &[true, false, false], 1).unwrap(), 1);
        assert!(matches!(rank_of_truth(&[0.5, 0.5], &[false, true], 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(1, 1), 1.0);
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        assert_eq!(ndcg_at_k(3, 5), 0.5);
        assert_eq!(ndcg_at_k(6, 5), 0.0);
    }

    #[test]
    fn head_tail_examples() {
        let uniform: Vec<(String, String, i64)> = (0..10).map(|i| ("u".to_string(), format!("i{i}"), i)).collect();
        let rows: Vec<(&str, &str, i64)> = uniform.iter().map(|(u, i, t)| (u.as_str(), i.as_str(), *t)).collect();
        let log = InteractionLog::from_raw(&raw(&rows)).unwrap();
        let head = head_tail_split(&log);
        assert_eq!(head.iter().filter(|&&h| h).count(), 2);
        assert!(head[0] && head[1]);

        let mut rows = Vec::new();
        let users: Vec<String> = (0..9).map(|u| format!("u{u}")).collect();
        for (item, pop) in [("a", 9), ("b", 7), ("c", 5), ("d", 3), ("e", 1)] {
            for u in users.iter().take(pop) {
                rows.push((u.as_str(), item, 0));
            }
        }
        let log = InteractionLog::from_raw(&raw(&rows)).unwrap();
        assert_eq!(head_tail_split(&log), vec![true, false, false, false, false]);
    }

    #[test]
    fn interval_examples() {
        let v = held(&[(0, 0), (1, 0), (2, 0)]);
        let t = held(&[(0, 1), (1, 2), (2, 3)]);
        let g = interval_groups(&v, &t);
        assert_eq!(g.values().copied().collect::<Vec<_>>(), vec![IntervalGroup::Short, IntervalGroup::Mid, IntervalGroup::Long]);
        let t = held(&[(0, 5), (1, 5), (2, 5)]);
        assert!(interval_groups(&v, &t).values().all(|&g| g == IntervalGroup::Short));
    }

    proptest! {
        #[test]
        fn tertile_sizes(deltas in proptest::collection::hash_set(0i64..1_000_000, 300)) {
            let v: BTreeMap<u32, HeldOut> = (0..300).map(|u| (u, HeldOut { item: 0, t: 0 })).collect();
            let t: BTreeMap<u32, HeldOut> = deltas.iter().enumerate().map(|(u, &d)| (u as u32, HeldOut { item: 0, t: d })).collect();
            let g = interval_groups(&v, &t);
            for group in [IntervalGroup::Short, IntervalGroup::Mid, IntervalGroup::Long] {
                let size = g.values().filter(|&&x| x == group).count() as i64;
                prop_assert!((size - 100).abs() <= 1);
            }
        }

        #[test]
        fn rank_matches_full_sort(scores in proptest::collection::vec(0i32..4, 10), truth in 0u32..10) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let mut order: Vec<usize> = (0..10).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let expected = order.iter().position(|&i| i == truth as usize).unwrap() + 1;
            prop_assert_eq!(rank_of_truth(&scores, &[], truth).unwrap(), expected);
        }

        #[test]
        fn metrics_monotone_in_k(rank in 1usize..50) {
            let mut prev = (0.0, 0.0);
            for k in 1..60 {
                let cur = (hit_at_k(rank, k), ndcg_at_k(rank, k));
                prop_assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
                prop_assert!(cur.1 <= cur.0);
                prev = cur;
            }
            prop_assert_eq!(hit_at_k(rank, 1), ndcg_at_k(rank, 1));
        }
    }

    fn model_for(split: &SplitDataset, weights: DenseMatrix) -> Model {
        Model::new(weights, split.train.items().clone(), TrainingConfig::default()).unwrap()
    }

    #[test]
    fn identity_model_on_repeats() {
        // every user repeats one item throughout
        let mut rows = Vec::new();
        let names: Vec<(String, String)> = (0..6).map(|u| (format!("u{u}"), format!("i{}", u % 4))).collect();
        for (u, i) in &names {
            for t in 0..4 {
                rows.push((u.as_str(), i.as_str(), t));
            }
        }
        let split = leave_one_out_split(&InteractionLog::from_raw(&raw(&rows)).unwrap());
        let m = model_for(&split, DenseMatrix::identity(4));
        let cfg = EvalConfig {
            exclude_seen: false,
            ..EvalConfig::default()
        };
        let report = evaluate(&m, &split, &cfg).unwrap();
        assert_eq!(report.hr("All", 1), Some(1.0));
        assert_eq!(report.ndcg("All", 1), report.hr("All", 1));
        let all = report.slice("All").unwrap().users;
        assert_eq!(report.slice("Head").unwrap().users + report.slice("Tail").unwrap().users, all);
        let tertiles: usize = ["Short", "Mid", "Long"].iter().map(|s| report.slice(s).unwrap().users).sum();
        assert_eq!(tertiles, all);
    }

    #[test]
    fn zero_model_ranks_by_index() {
        let rows = [
            ("a", "x", 0),
            ("a", "y", 1),
            ("a", "z", 2),
            ("a", "w", 3),
            ("b", "w", 0),
            ("b", "z", 1),
            ("b", "y", 2),
        ];
        let split = leave_one_out_split(&InteractionLog::from_raw(&raw(&rows)).unwrap());
        let n = split.num_items();
        let m = model_for(&split, DenseMatrix::zeros(n, n));
        for exclude_seen in [false, true] {
            let cfg = EvalConfig {
                exclude_seen,
                ..EvalConfig::default()
            };
            let report = evaluate(&m, &split, &cfg).unwrap();
            // all scores tie, so the rank is one plus the number of unmasked lower indices
            let mut expected = 0.0;
            for (&u, h) in &split.test {
                let mut seen: Vec<u32> = split.train.sequence(u).iter().map(|x| x.item).collect();
                seen.push(split.valid[&u].item);
                let ahead = (0..h.item).filter(|i| !(exclude_seen && seen.contains(i))).count();
                expected += ndcg_at_k(ahead + 1, 5);
            }
            expected /= split.test.len() as f64;
            assert!((report.ndcg("All", 5).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn vocabulary_mismatch() {
        let rows = [("a", "x", 0), ("a", "y", 1), ("a", "z", 2)];
        let split = leave_one_out_split(&InteractionLog::from_raw(&raw(&rows)).unwrap());
        let other = Vocab::from_ids(vec!["p".into(), "q".into(), "r".into()]).unwrap();
        let m = Model::new(DenseMatrix::identity(3), other, TrainingConfig::default()).unwrap();
        assert!(matches!(evaluate(&m, &split, &EvalConfig::default()), Err(Error::Vocabulary(_))));
    }
}
