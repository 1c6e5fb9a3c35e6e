//! Slow reference implementations for tests, plus a synthetic log
//! generator with planted transitions and interval-dependent drift.
//!
//! Nothing here shares numeric code with the production path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::augment::Augmentation;
use crate::dataio::{Interaction, InteractionLog, Vocab, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// `(SᵀS + λI)⁻¹ SᵀT` through an explicit Gauss-Jordan inverse.
pub fn lsq_oracle(s: &[Vec<f64>], t: &[Vec<f64>], lambda: f64) -> Result<Vec<Vec<f64>>> {
    if s.len() != t.len() {
        return Err(Error::Dimension("S and T row counts differ".into()));
    }
    let n = s.first().or(t.first()).map_or(0, Vec::len);
    let mut g = vec![vec![0.0; n]; n];
    let mut c = vec![vec![0.0; n]; n];
    for (sr, tr) in s.iter().zip(t) {
        for a in 0..n {
            for b in 0..n {
                g[a][b] += sr[a] * sr[b];
                c[a][b] += sr[a] * tr[b];
            }
        }
    }
    for (i, row) in g.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let inv = gauss_jordan_inverse(g)?;
    let mut b = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                b[i][j] += inv[i][k] * c[k][j];
            }
        }
    }
    Ok(b)
}

fn gauss_jordan_inverse(mut a: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::Factorization { pivot: col });
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Counts every ordered pair `s < h` within each sequence: 1 per pair for
/// single-target, `h - s` for multi-target.
pub fn pair_count_oracle(sequences: &[Vec<u32>], n: usize, mode: Augmentation) -> Vec<Vec<u64>> {
    let mut out = vec![vec![0u64; n]; n];
    for seq in sequences {
        for h in 0..seq.len() {
            for s in 0..h {
                let w = match mode {
                    Augmentation::Single => 1,
                    Augmentation::Multi => (h - s) as u64,
                };
                out[seq[s] as usize][seq[h] as usize] += w;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    /// Row-stochastic `num_items x num_items` matrix.
    pub transition: Vec<Vec<f64>>,
    /// Inclusive range of sequence lengths.
    pub min_len: usize,
    pub max_len: usize,
    /// Mean of the exponential gap distribution.
    pub mean_gap_days: f64,
    /// Probability of jumping to a uniform item is
    /// `clamp(drift_base + drift_per_day * gap_days, 0, 1)`.
    pub drift_base: f64,
    pub drift_per_day: f64,
    pub start_time: i64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Deterministic chain `i -> i + 1 (mod n)` without drift.
    pub fn chain(num_users: usize, num_items: usize, seed: u64) -> Self {
        Self {
            num_users,
            num_items,
            transition: chain_transition(num_items),
            min_len: 5,
            max_len: 12,
            mean_gap_days: 1.0,
            drift_base: 0.0,
            drift_per_day: 0.0,
            start_time: 1_000_000_000,
            seed,
        }
    }

    pub fn drift_rate(&self, gap_days: f64) -> f64 {
        (self.drift_base + self.drift_per_day * gap_days).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_items == 0 || self.transition.len() != self.num_items {
            return Err(Error::Config("transition matrix must have one row per item".into()));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != self.num_items || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Config(format!("transition row {i} is malformed")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("transition row {i} sums to {sum}")));
            }
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 1 <= min_len <= max_len".into()));
        }
        if !(self.mean_gap_days > 0.0) {
            return Err(Error::Config("mean gap must be > 0".into()));
        }
        Ok(())
    }
}

pub fn chain_transition(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if j == (i + 1) % n { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> u32 {
    let mut u: f64 = rng.random();
    for (j, &p) in row.iter().enumerate() {
        if u < p {
            return j as u32;
        }
        u -= p;
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
}

/// Users are `u0..`, items `i0..` with item index equal to the transition
/// matrix index.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<InteractionLog> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaps = Exp::new(1.0 / spec.mean_gap_days).map_err(|e| Error::Config(e.to_string()))?;
    let mut interactions = Vec::new();
    for u in 0..spec.num_users as u32 {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut item = rng.random_range(0..spec.num_items as u32);
        let mut t = spec.start_time;
        interactions.push(Interaction { user: u, item, t });
        for _ in 1..len {
            let gap_days: f64 = gaps.sample(&mut rng);
            t += (gap_days * SECONDS_PER_DAY).round() as i64;
            item = if rng.random::<f64>() < spec.drift_rate(gap_days) {
                rng.random_range(0..spec.num_items as u32)
            } else {
                sample_row(&spec.transition[item as usize], &mut rng)
            };
            interactions.push(Interaction { user: u, item, t });
        }
    }
    let users = Vocab::from_ids((0..spec.num_users).map(|u| format!("u{u}")).collect())?;
    let items = Vocab::from_ids((0..spec.num_items).map(|i| format!("i{i}")).collect())?;
    InteractionLog::from_parts(users, items, interactions)
}
