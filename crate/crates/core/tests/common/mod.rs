#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tale::augment::SparseMatrix;
use tale::dataio::{InteractionLog, RawInteraction};
use tale::oracle::{generate_synthetic, SyntheticSpec};

pub const DAY: i64 = 86_400;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random log with timestamps spread over `span_days`.
pub fn random_log(rng: &mut ChaCha8Rng, users: usize, items: usize, max_len: usize, span_days: i64) -> InteractionLog {
    let mut raw = Vec::new();
    for u in 0..users {
        for _ in 0..rng.random_range(1..=max_len) {
            raw.push(RawInteraction {
                user_id: format!("u{u}"),
                item_id: format!("i{}", rng.random_range(0..items)),
                timestamp: rng.random_range(0..span_days * DAY),
            });
        }
    }
    InteractionLog::from_raw(&raw).unwrap()
}

pub fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if rng.random::<f64>() < density { rng.random_range(0.0..2.0) } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn to_sparse(d: &[Vec<f64>], cols: usize) -> SparseMatrix {
    let mut m = SparseMatrix::new(d.len(), cols);
    for (r, row) in d.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                m.entries.push((r as u32, c as u32, v));
            }
        }
    }
    m
}

/// Writes a log as whitespace-separated `user item timestamp` lines.
pub fn write_log(log: &InteractionLog, path: &Path) {
    let mut text = String::new();
    for x in log.interactions() {
        text.push_str(&format!("{} {} {}\n", log.users().id(x.user), log.items().id(x.item), x.t));
    }
    std::fs::write(path, text).unwrap();
}

/// Chain-structured synthetic data with mild drift, written to `dir/log.txt`.
pub fn synthetic_file(dir: &Path, users: usize, items: usize, seed: u64) -> PathBuf {
    let mut spec = SyntheticSpec::chain(users, items, seed);
    spec.drift_base = 0.05;
    spec.drift_per_day = 0.05;
    let log = generate_synthetic(&spec).unwrap();
    let path = dir.join("log.txt");
    write_log(&log, &path);
    path
}
