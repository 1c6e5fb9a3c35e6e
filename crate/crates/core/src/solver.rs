//! Gram system assembly and the closed-form ridge solve
//! `B = (SᵀS + λI)⁻¹ SᵀT`.
//!
//! `G = SᵀS`, `C = SᵀT` and `B` are dense `n x n` row-major `f64`
//! matrices, so training holds about `3 n² x 8` bytes at peak (see
//! [`dense_training_bytes`]).

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt;
use faer::{MatMut, MatRef, Par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{SparseMatrix, WeightedRow};
use crate::dataio::Vocab;
use crate::error::{Error, Result};
use crate::train::TrainingConfig;

/// Max-norm residual tolerance of the solve, relative to `1 + max|C|`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;

/// Above this size the residual is checked on random probe vectors
/// instead of the full `n x n` product.
const FULL_RESIDUAL_LIMIT: usize = 512;
const RESIDUAL_PROBES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).take(self.rows).collect()
    }

    fn view(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.data, self.rows, self.cols)
    }

    fn view_mut(&mut self) -> MatMut<'_, f64> {
        MatMut::from_row_major_slice_mut(&mut self.data, self.rows, self.cols)
    }
}

/// Bytes of dense storage training needs for `n` items (G, C and B).
pub fn dense_training_bytes(n: usize) -> u64 {
    3 * (n as u64) * (n as u64) * 8
}

/// `G = SᵀS`, `C = SᵀT` and the ridge strength.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    pub gram: DenseMatrix,
    pub cross: DenseMatrix,
    pub lambda: f64,
}

impl GramSystem {
    pub fn dim(&self) -> usize {
        self.gram.rows()
    }
}

/// Streams weighted rows into `G` and `C`.
///
/// Work is split over blocks of `G`/`C` rows; every cell is accumulated by
/// exactly one thread, in row order, so results do not depend on the
/// number of threads.
#[derive(Debug)]
pub struct GramAccumulator {
    n: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    block_rows: usize,
}

impl GramAccumulator {
    pub fn new(n: usize) -> Self {
        let threads = rayon::current_num_threads().max(1);
        let block_rows = n.div_ceil(threads * 4).clamp(16, 1024);
        Self {
            n,
            gram: vec![0.0; n * n],
            cross: vec![0.0; n * n],
            block_rows,
        }
    }

    pub fn add_rows(&mut self, rows: &[WeightedRow]) {
        let n = self.n;
        if n == 0 || rows.is_empty() {
            return;
        }
        let chunk = self.block_rows * n;
        self.gram
            .par_chunks_mut(chunk)
            .zip(self.cross.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(block, (g, c))| {
                let lo = (block * chunk / n) as u32;
                let hi = lo + (g.len() / n) as u32;
                for row in rows {
                    let start = row.source.partition_point(|&(a, _)| a < lo);
                    for &(a, va) in row.source[start..].iter().take_while(|&&(a, _)| a < hi) {
                        let off = (a - lo) as usize * n;
                        let g_row = &mut g[off..off + n];
                        for &(b, vb) in &row.source {
                            g_row[b as usize] += va * vb;
                        }
                        let c_row = &mut c[off..off + n];
                        for &(b, vb) in &row.target {
                            c_row[b as usize] += va * vb;
                        }
                    }
                }
            });
    }

    pub fn finish(self, lambda: f64) -> GramSystem {
        let n = self.n;
        let mut gram = DenseMatrix {
            rows: n,
            cols: n,
            data: self.gram,
        };
        symmetrize(&mut gram);
        GramSystem {
            gram,
            cross: DenseMatrix {
                rows: n,
                cols: n,
                data: self.cross,
            },
            lambda,
        }
    }
}

fn symmetrize(m: &mut DenseMatrix) {
    let n = m.rows;
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
}

/// Computes `SᵀS` and `SᵀT` from assembled coordinate matrices.
pub fn assemble_gram(s: &SparseMatrix, t: &SparseMatrix, lambda: f64) -> Result<GramSystem> {
    if s.rows != t.rows || s.cols != t.cols {
        return Err(Error::Dimension(format!(
            "source is {}x{}, target is {}x{}",
            s.rows, s.cols, t.rows, t.cols
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut acc = GramAccumulator::new(s.cols);
    let rows: Vec<WeightedRow> = s
        .row_slices()
        .into_iter()
        .zip(t.row_slices())
        .map(|(sr, tr)| WeightedRow {
            source: sr.iter().map(|&(_, c, v)| (c, v)).collect(),
            target: tr.iter().map(|&(_, c, v)| (c, v)).collect(),
        })
        .collect();
    acc.add_rows(&rows);
    Ok(acc.finish(lambda))
}

fn parallelism(threads: usize) -> Par {
    if threads > 1 {
        Par::rayon(threads)
    } else {
        Par::Seq
    }
}

/// Solves `(G + λI) B = C` with a Cholesky factorization, using all
/// threads of the current rayon pool.
pub fn solve_ridge(system: GramSystem) -> Result<DenseMatrix> {
    solve_ridge_with(system, rayon::current_num_threads())
}

pub fn solve_ridge_with(system: GramSystem, threads: usize) -> Result<DenseMatrix> {
    let GramSystem {
        gram: mut a,
        cross: mut c,
        lambda,
    } = system;
    let n = a.rows();
    if a.cols() != n || c.rows() != n || c.cols() != n {
        return Err(Error::Dimension("Gram system is not square".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if n == 0 {
        return Ok(c);
    }
    for i in 0..n {
        a.set(i, i, a.get(i, i) + lambda);
    }
    let c_max = c.max_abs();

    let check = if n <= FULL_RESIDUAL_LIMIT {
        ResidualCheck::Full {
            a: a.clone(),
            c: c.clone(),
        }
    } else {
        ResidualCheck::probes(&a, &c)
    };

    let par = parallelism(threads);
    let params = Default::default();
    let mut mem = MemBuffer::new(llt::factor::cholesky_in_place_scratch::<f64>(n, par, params));
    llt::factor::cholesky_in_place(a.view_mut(), Default::default(), par, MemStack::new(&mut mem), params)
        .map_err(|llt::factor::LltError::NonPositivePivot { index }| Error::Factorization { pivot: index })?;
    let mut mem = MemBuffer::new(llt::solve::solve_in_place_scratch::<f64>(n, n, par));
    llt::solve::solve_in_place(a.view(), c.view_mut(), par, MemStack::new(&mut mem));
    let b = c;

    if b.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Residual {
            residual: f64::INFINITY,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    let residual = check.residual(&a, &b, c_max);
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::Residual {
            residual,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    Ok(b)
}

enum ResidualCheck {
    Full {
        a: DenseMatrix,
        c: DenseMatrix,
    },
    /// The factorization only overwrites the lower triangle, so `G + λI`
    /// stays available through its strict upper triangle and saved diagonal.
    Probes {
        diag: Vec<f64>,
        vectors: Vec<Vec<f64>>,
        products: Vec<Vec<f64>>,
    },
}

impl ResidualCheck {
    fn probes(a: &DenseMatrix, c: &DenseMatrix) -> Self {
        let n = a.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7a1e);
        let vectors: Vec<Vec<f64>> = (0..RESIDUAL_PROBES)
            .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect();
        let products = vectors.iter().map(|v| mat_vec(c, v)).collect();
        Self::Probes {
            diag: (0..n).map(|i| a.get(i, i)).collect(),
            vectors,
            products,
        }
    }

    fn residual(&self, factored: &DenseMatrix, b: &DenseMatrix, c_max: f64) -> f64 {
        match self {
            ResidualCheck::Full { a, c } => {
                let n = a.rows();
                let mut worst = 0.0f64;
                let mut acc = vec![0.0; n];
                for i in 0..n {
                    acc.iter_mut().for_each(|x| *x = 0.0);
                    for k in 0..n {
                        let aik = a.get(i, k);
                        if aik != 0.0 {
                            for (x, &bkj) in acc.iter_mut().zip(b.row(k)) {
                                *x += aik * bkj;
                            }
                        }
                    }
                    for (x, &cij) in acc.iter().zip(c.row(i)) {
                        worst = worst.max((x - cij).abs());
                    }
                }
                worst / (1.0 + c_max)
            }
            ResidualCheck::Probes { diag, vectors, products } => {
                let n = diag.len();
                let mut worst = 0.0f64;
                for (v, cv) in vectors.iter().zip(products) {
                    let y = mat_vec(b, v);
                    let mut z: Vec<f64> = diag.iter().zip(&y).map(|(d, y)| d * y).collect();
                    for i in 0..n {
                        let row = factored.row(i);
                        for j in i + 1..n {
                            let g = row[j];
                            if g != 0.0 {
                                z[i] += g * y[j];
                                z[j] += g * y[i];
                            }
                        }
                    }
                    let scale = 1.0 + cv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    for (zi, ci) in z.iter().zip(cv) {
                        worst = worst.max((zi - ci).abs() / scale);
                    }
                }
                worst
            }
        }
    }
}

fn mat_vec(m: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Item-to-item weight matrix plus the vocabulary and configuration it
/// was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub weights: DenseMatrix,
    pub items: Vocab,
    pub config: TrainingConfig,
}

impl Model {
    pub fn new(weights: DenseMatrix, items: Vocab, config: TrainingConfig) -> Result<Self> {
        if weights.rows() != items.len() || weights.cols() != items.len() {
            return Err(Error::Dimension(format!(
                "{}x{} weights for {} items",
                weights.rows(),
                weights.cols(),
                items.len()
            )));
        }
        if weights.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("model weights must be finite".into()));
        }
        Ok(Self { weights, items, config })
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

/// Entrywise `alpha * a + (1 - alpha) * b`. The result keeps `a`'s config.
pub fn mix_models(a: &Model, b: &Model, alpha: f64) -> Result<Model> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if a.items != b.items {
        return Err(Error::Vocabulary("models were trained on different item sets".into()));
    }
    let data = a
        .weights
        .as_slice()
        .iter()
        .zip(b.weights.as_slice())
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect();
    let n = a.num_items();
    Model::new(DenseMatrix::from_row_major(n, n, data)?, a.items.clone(), a.config.clone())
}
