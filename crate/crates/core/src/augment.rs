//! Expansion of training sequences into (source prefix, target) rows and
//! assembly of the weighted source/target matrices.

use serde::{Deserialize, Serialize};

use crate::dataio::Interaction;
use crate::error::{Error, Result};

/// How targets are chosen for each prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// Prefix `1..=l` predicts only item `l + 1`.
    Single,
    /// Prefix `1..=l` predicts every item `l + 1..=L`.
    Multi,
}

/// One item of a source or target sub-sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairEntry {
    pub item: u32,
    pub t: i64,
    /// 1-based position in the user's sequence.
    pub position: usize,
}

/// One augmented training row, borrowing the user's sequence.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedPair<'a> {
    seq: &'a [Interaction],
    source_len: usize,
    target_end: usize,
}

impl<'a> AugmentedPair<'a> {
    pub fn user(&self) -> u32 {
        self.seq[0].user
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn num_targets(&self) -> usize {
        self.target_end - self.source_len
    }

    pub fn source(&self) -> impl ExactSizeIterator<Item = PairEntry> + 'a {
        entries(self.seq, 0, self.source_len)
    }

    pub fn targets(&self) -> impl ExactSizeIterator<Item = PairEntry> + 'a {
        entries(self.seq, self.source_len, self.target_end)
    }

    pub fn first_target(&self) -> PairEntry {
        let x = self.seq[self.source_len];
        PairEntry {
            item: x.item,
            t: x.t,
            position: self.source_len + 1,
        }
    }

    pub fn last_source(&self) -> PairEntry {
        let x = self.seq[self.source_len - 1];
        PairEntry {
            item: x.item,
            t: x.t,
            position: self.source_len,
        }
    }
}

fn entries(seq: &[Interaction], from: usize, to: usize) -> impl ExactSizeIterator<Item = PairEntry> + '_ {
    seq[from..to].iter().enumerate().map(move |(k, x)| PairEntry {
        item: x.item,
        t: x.t,
        position: from + k + 1,
    })
}

/// `[i1..iL]` -> `([i1],[i2]), ([i1,i2],[i3]), ...`
pub fn single_target_augment(seq: &[Interaction]) -> Vec<AugmentedPair<'_>> {
    augment(seq, Augmentation::Single)
}

/// `[i1..iL]` -> `([i1],[i2..iL]), ([i1,i2],[i3..iL]), ...`
pub fn multi_target_augment(seq: &[Interaction]) -> Vec<AugmentedPair<'_>> {
    augment(seq, Augmentation::Multi)
}

pub fn augment(seq: &[Interaction], mode: Augmentation) -> Vec<AugmentedPair<'_>> {
    if seq.len() < 2 {
        return Vec::new();
    }
    (1..seq.len())
        .map(|l| AugmentedPair {
            seq,
            source_len: l,
            target_end: match mode {
                Augmentation::Single => l + 1,
                Augmentation::Multi => seq.len(),
            },
        })
        .collect()
}

/// Coordinate-form matrix. After assembly entries are sorted by
/// `(row, col)` with at most one entry per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.entries
            .binary_search_by_key(&(row, col), |&(r, c, _)| (r, c))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    /// Entries of each row, in row order. Rows without entries yield empty slices.
    pub fn row_slices(&self) -> Vec<&[(u32, u32, f64)]> {
        let mut out = Vec::with_capacity(self.rows);
        let mut start = 0;
        for r in 0..self.rows as u32 {
            let mut end = start;
            while end < self.entries.len() && self.entries[end].0 == r {
                end += 1;
            }
            out.push(&self.entries[start..end]);
            start = end;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            d[r as usize][c as usize] += v;
        }
        d
    }
}

/// Weighted nonzeros of one augmented row, sorted by item.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedRow {
    pub source: Vec<(u32, f64)>,
    pub target: Vec<(u32, f64)>,
}

fn merge_sorted(mut cells: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    // stable sort so repeated items are summed in sequence order
    cells.sort_by_key(|c| c.0);
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(cells.len());
    for (col, v) in cells {
        match out.last_mut() {
            Some(last) if last.0 == col => last.1 += v,
            _ => out.push((col, v)),
        }
    }
    out
}

fn checked(side: &'static str, pair: usize, entry: usize, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidWeight {
            side,
            pair,
            entry,
            value,
        })
    }
}

/// Applies the weight functions to every entry of `pair`. `pair_index` is
/// only used to identify the pair in errors.
pub fn weighted_row<S, T>(pair: &AugmentedPair<'_>, pair_index: usize, source_weight: &S, target_weight: &T) -> Result<WeightedRow>
where
    S: Fn(&AugmentedPair<'_>, &PairEntry) -> f64 + ?Sized,
    T: Fn(&AugmentedPair<'_>, &PairEntry) -> f64 + ?Sized,
{
    let source = pair
        .source()
        .enumerate()
        .map(|(k, e)| Ok((e.item, checked("source", pair_index, k, source_weight(pair, &e))?)))
        .collect::<Result<Vec<_>>>()?;
    let target = pair
        .targets()
        .enumerate()
        .map(|(k, e)| Ok((e.item, checked("target", pair_index, k, target_weight(pair, &e))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightedRow {
        source: merge_sorted(source),
        target: merge_sorted(target),
    })
}

/// Builds the weighted source and target matrices, one row per pair.
/// Each cell is the product of weights returned for that entry; repeated
/// items in a row are summed.
pub fn assemble_matrices<S, T>(
    pairs: &[AugmentedPair<'_>],
    num_items: usize,
    source_weight: &S,
    target_weight: &T,
) -> Result<(SparseMatrix, SparseMatrix)>
where
    S: Fn(&AugmentedPair<'_>, &PairEntry) -> f64 + ?Sized,
    T: Fn(&AugmentedPair<'_>, &PairEntry) -> f64 + ?Sized,
{
    let mut s = SparseMatrix::new(pairs.len(), num_items);
    let mut t = SparseMatrix::new(pairs.len(), num_items);
    for (r, pair) in pairs.iter().enumerate() {
        let row = weighted_row(pair, r, source_weight, target_weight)?;
        for (col, v) in row.source {
            if col as usize >= num_items {
                return Err(Error::Dimension(format!("item {col} >= {num_items}")));
            }
            s.entries.push((r as u32, col, v));
        }
        for (col, v) in row.target {
            if col as usize >= num_items {
                return Err(Error::Dimension(format!("item {col} >= {num_items}")));
            }
            t.entries.push((r as u32, col, v));
        }
    }
    Ok((s, t))
}

pub fn unit_weight(_: &AugmentedPair<'_>, _: &PairEntry) -> f64 {
    1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(items: &[u32]) -> Vec<Interaction> {
        items
            .iter()
            .enumerate()
            .map(|(k, &item)| Interaction {
                user: 0,
                item,
                t: 10 * k as i64,
            })
            .collect()
    }

    fn shape(pairs: &[AugmentedPair<'_>]) -> Vec<(Vec<u32>, Vec<u32>)> {
        pairs
            .iter()
            .map(|p| (p.source().map(|e| e.item).collect(), p.targets().map(|e| e.item).collect()))
            .collect()
    }

    #[test]
    fn single_target_four_items() {
        let s = seq(&[1, 2, 3, 4]);
        assert_eq!(
            shape(&single_target_augment(&s)),
            vec![(vec![1], vec![2]), (vec![1, 2], vec![3]), (vec![1, 2, 3], vec![4])]
        );
    }

    #[test]
    fn multi_target_four_items() {
        let s = seq(&[1, 2, 3, 4]);
        assert_eq!(
            shape(&multi_target_augment(&s)),
            vec![(vec![1], vec![2, 3, 4]), (vec![1, 2], vec![3, 4]), (vec![1, 2, 3], vec![4])]
        );
    }

    #[test]
    fn modes_coincide_on_two_items_and_degenerate_below() {
        let s = seq(&[7, 9]);
        assert_eq!(shape(&single_target_augment(&s)), shape(&multi_target_augment(&s)));
        assert!(single_target_augment(&s[..1]).is_empty());
        assert!(multi_target_augment(&[]).is_empty());
    }

    #[test]
    fn entry_counts() {
        for len in 2..12usize {
            let s = seq(&(0..len as u32).collect::<Vec<_>>());
            let single = single_target_augment(&s);
            let multi = multi_target_augment(&s);
            assert_eq!(single.len(), len - 1);
            let src: usize = single.iter().map(|p| p.source_len()).sum();
            let tgt: usize = multi.iter().map(|p| p.num_targets()).sum();
            assert_eq!(src, len * (len - 1) / 2);
            assert_eq!(tgt, len * (len - 1) / 2);
            for (k, p) in single.iter().enumerate() {
                let pos: Vec<_> = p.source().map(|e| e.position).collect();
                assert_eq!(pos, (1..=k + 1).collect::<Vec<_>>());
                assert_eq!(p.first_target().position, k + 2);
            }
        }
    }

    #[test]
    fn unit_assembly_one_pair() {
        let s = seq(&[3, 5]);
        let pairs = single_target_augment(&s);
        let (sm, tm) = assemble_matrices(&pairs, 6, &unit_weight, &unit_weight).unwrap();
        assert_eq!(sm.entries, vec![(0, 3, 1.0)]);
        assert_eq!(tm.entries, vec![(0, 5, 1.0)]);
    }

    #[test]
    fn weight_applies_exactly() {
        let s = seq(&[0, 1, 2]);
        let pairs = single_target_augment(&s);
        let half_on_first = |_: &AugmentedPair<'_>, e: &PairEntry| if e.position == 1 { 0.5 } else { 1.0 };
        let (sm, _) = assemble_matrices(&pairs, 3, &half_on_first, &unit_weight).unwrap();
        assert_eq!(sm.get(0, 0), 0.5);
        assert_eq!(sm.get(1, 0), 0.5);
        assert_eq!(sm.get(1, 1), 1.0);
    }

    #[test]
    fn repeated_items_are_summed() {
        let s = seq(&[4, 4, 1]);
        let pairs = single_target_augment(&s);
        let (sm, _) = assemble_matrices(&pairs, 5, &unit_weight, &unit_weight).unwrap();
        assert_eq!(sm.get(1, 4), 2.0);
        assert_eq!(sm.entries.len(), 2);
    }

    #[test]
    fn non_finite_weight_is_reported() {
        let s = seq(&[0, 1, 2]);
        let pairs = single_target_augment(&s);
        let bad = |_: &AugmentedPair<'_>, e: &PairEntry| if e.position == 2 { f64::NAN } else { 1.0 };
        let err = assemble_matrices(&pairs, 3, &bad, &unit_weight).unwrap_err();
        assert!(matches!(err, Error::InvalidWeight { side: "source", pair: 1, entry: 1, .. }), "{err}");
    }
}
