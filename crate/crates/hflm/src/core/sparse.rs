//! Row-compressed sparse matrices.
//!
//! Carries the design matrix, the difference penalties, and the assembled
//! normal systems. Construction sums duplicate `(row, col)` pairs, so a
//! `+1` and `-1` landing on the same cell cancel to an explicit zero
//! rather than violating the no-duplicates invariant.

use super::CoreError;
use crate::par::{par_map_indices, par_map_indices_init};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    row_count: usize,
    col_count: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    /// Explicit zeros are kept; they are structural.
    pub fn from_triplets(
        row_count: usize,
        col_count: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, CoreError> {
        for &(r, c, v) in triplets {
            if r >= row_count || c >= col_count {
                return Err(CoreError::EntryOutOfBounds {
                    row: r,
                    col: c,
                    row_count,
                    col_count,
                });
            }
            if !v.is_finite() {
                return Err(CoreError::NonFinite(r));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut counts = vec![0usize; row_count];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; row_count + 1];
        for r in 0..row_count {
            row_ptr[r + 1] = row_ptr[r] + counts[r];
        }
        Ok(SparseOperator {
            row_count,
            col_count,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseOperator {
            row_count: n,
            col_count: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn col_count(&self) -> usize {
        self.col_count
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at `(r, c)`, or 0 when the cell is not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.row_count).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.col_count]; self.row_count];
        for (r, c, v) in self.triplets() {
            m[r][c] += v;
        }
        m
    }

    /// `y = A x`, row-parallel with a fixed per-row summation order.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.col_count);
        par_map_indices(self.row_count, |r| {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            acc
        })
    }

    /// `y = A^T x`, sequential so the accumulation order is fixed.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.row_count);
        let mut out = vec![0.0; self.col_count];
        for r in 0..self.row_count {
            let (cols, vals) = self.row(r);
            let xr = x[r];
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * xr;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut counts = vec![0usize; self.col_count + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.col_count {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.row_count {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                next[c] += 1;
                col_idx[slot] = r;
                values[slot] = v;
            }
        }
        SparseOperator {
            row_count: self.col_count,
            col_count: self.row_count,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// `A^T A`. Only the upper triangle is computed; the lower is mirrored,
    /// so the result is symmetric to the bit.
    pub fn gram(&self) -> SparseOperator {
        let at = self.transpose();
        let n = self.col_count;
        let upper: Vec<Vec<(usize, f64)>> = par_map_indices_init(
            n,
            || Accumulator::new(n),
            |acc, i| {
                acc.begin();
                let (ks, ws) = at.row(i);
                for (&k, &w) in ks.iter().zip(ws) {
                    let (cols, vals) = self.row(k);
                    let start = cols.partition_point(|&c| c < i);
                    for (&j, &v) in cols[start..].iter().zip(&vals[start..]) {
                        acc.add(j, w * v);
                    }
                }
                acc.take_sorted()
            },
        );
        Self::from_upper_triangle(n, &upper)
    }

    fn from_upper_triangle(n: usize, upper: &[Vec<(usize, f64)>]) -> SparseOperator {
        let mut counts = vec![0usize; n + 1];
        for (i, row) in upper.iter().enumerate() {
            counts[i + 1] += row.len();
            for &(j, _) in row {
                if j > i {
                    counts[j + 1] += 1;
                }
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let total = row_ptr[n];
        let mut col_idx = vec![0usize; total];
        let mut values = vec![0.0; total];
        // mirrored entries first (column order below the diagonal), then the
        // stored upper part; iterating source rows in order keeps each
        // destination row sorted.
        for (i, row) in upper.iter().enumerate() {
            for &(j, v) in row {
                if j > i {
                    let slot = next[j];
                    next[j] += 1;
                    col_idx[slot] = i;
                    values[slot] = v;
                }
            }
        }
        for (i, row) in upper.iter().enumerate() {
            for &(j, v) in row {
                let slot = next[i];
                next[i] += 1;
                col_idx[slot] = j;
                values[slot] = v;
            }
        }
        SparseOperator {
            row_count: n,
            col_count: n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Linear combination `sum_i coeff_i * M_i` of same-shape operators.
    pub fn add_scaled(terms: &[(f64, &SparseOperator)]) -> Result<SparseOperator, CoreError> {
        let (rows, cols) = match terms.first() {
            Some((_, m)) => (m.row_count, m.col_count),
            None => return Err(CoreError::InvalidSpec("add_scaled needs >= 1 term".into())),
        };
        for (_, m) in terms {
            if m.row_count != rows || m.col_count != cols {
                return Err(CoreError::InvalidSpec(
                    "add_scaled requires identical shapes".into(),
                ));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut cursor = vec![0usize; terms.len()];
        for r in 0..rows {
            for (ti, (_, m)) in terms.iter().enumerate() {
                cursor[ti] = m.row_ptr[r];
            }
            loop {
                let mut min_col = usize::MAX;
                for (ti, (_, m)) in terms.iter().enumerate() {
                    if cursor[ti] < m.row_ptr[r + 1] {
                        min_col = min_col.min(m.col_idx[cursor[ti]]);
                    }
                }
                if min_col == usize::MAX {
                    break;
                }
                let mut acc = 0.0;
                for (ti, (coeff, m)) in terms.iter().enumerate() {
                    while cursor[ti] < m.row_ptr[r + 1] && m.col_idx[cursor[ti]] == min_col {
                        acc += coeff * m.values[cursor[ti]];
                        cursor[ti] += 1;
                    }
                }
                col_idx.push(min_col);
                values.push(acc);
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Ok(SparseOperator {
            row_count: rows,
            col_count: cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Restricts a square operator to the rows and columns flagged in `keep`.
    /// Returns the submatrix and the kept original indices.
    pub fn restrict_symmetric(&self, keep: &[bool]) -> (SparseOperator, Vec<usize>) {
        assert_eq!(self.row_count, self.col_count);
        assert_eq!(keep.len(), self.col_count);
        let kept: Vec<usize> = (0..self.col_count).filter(|&k| keep[k]).collect();
        let mut old_to_new = vec![usize::MAX; self.col_count];
        for (new, &old) in kept.iter().enumerate() {
            old_to_new[old] = new;
        }
        let mut row_ptr = vec![0usize; kept.len() + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (new_r, &old_r) in kept.iter().enumerate() {
            let (cols, vals) = self.row(old_r);
            for (&c, &v) in cols.iter().zip(vals) {
                if keep[c] {
                    col_idx.push(old_to_new[c]);
                    values.push(v);
                }
            }
            row_ptr[new_r + 1] = col_idx.len();
        }
        (
            SparseOperator {
                row_count: kept.len(),
                col_count: kept.len(),
                row_ptr,
                col_idx,
                values,
            },
            kept,
        )
    }

    /// Copies out the row range `[start, end)`.
    pub fn select_rows(&self, start: usize, end: usize) -> SparseOperator {
        assert!(start <= end && end <= self.row_count);
        let lo = self.row_ptr[start];
        let hi = self.row_ptr[end];
        SparseOperator {
            row_count: end - start,
            col_count: self.col_count,
            row_ptr: self.row_ptr[start..=end].iter().map(|p| p - lo).collect(),
            col_idx: self.col_idx[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        assert_eq!(self.row_count, self.col_count);
        (0..self.row_count).map(|r| self.get(r, r)).collect()
    }

    /// True when the stored pattern and values equal the transpose exactly.
    pub fn is_exactly_symmetric(&self) -> bool {
        if self.row_count != self.col_count {
            return false;
        }
        let t = self.transpose();
        self.row_ptr == t.row_ptr && self.col_idx == t.col_idx && {
            self.values
                .iter()
                .zip(&t.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
        }
    }
}

/// Sparse accumulator with generation stamps, reusable across rows.
struct Accumulator {
    vals: Vec<f64>,
    stamp: Vec<usize>,
    touched: Vec<usize>,
    generation: usize,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Accumulator {
            vals: vec![0.0; n],
            stamp: vec![usize::MAX; n],
            touched: Vec::new(),
            generation: 0,
        }
    }

    fn begin(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        self.touched.clear();
    }

    #[inline]
    fn add(&mut self, j: usize, v: f64) {
        if self.stamp[j] != self.generation {
            self.stamp[j] = self.generation;
            self.vals[j] = v;
            self.touched.push(j);
        } else {
            self.vals[j] += v;
        }
    }

    fn take_sorted(&mut self) -> Vec<(usize, f64)> {
        self.touched.sort_unstable();
        self.touched.iter().map(|&j| (j, self.vals[j])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m =
            SparseOperator::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, -1.0), (1, 1, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 1), 2.0);
    }

    #[test]
    fn triplets_reject_out_of_bounds() {
        assert!(SparseOperator::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
        assert!(SparseOperator::from_triplets(2, 2, &[(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let m = SparseOperator::from_triplets(
            2,
            3,
            &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -3.0)],
        )
        .unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![3.0, -3.0]);
        assert_eq!(m.matvec_transpose(&[1.0, 2.0]), vec![1.0, -6.0, 2.0]);
    }

    #[test]
    fn gram_matches_dense_product() {
        let m = SparseOperator::from_triplets(
            3,
            4,
            &[
                (0, 0, 1.0),
                (0, 1, 2.0),
                (1, 1, 3.0),
                (1, 3, -1.0),
                (2, 0, 0.5),
                (2, 2, 4.0),
            ],
        )
        .unwrap();
        let g = m.gram();
        let dense = m.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|r| dense[r][i] * dense[r][j]).sum();
                assert!((g.get(i, j) - want).abs() < 1e-14, "({i},{j})");
            }
        }
        assert!(g.is_exactly_symmetric());
    }

    #[test]
    fn add_scaled_merges_rows() {
        let a = SparseOperator::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let b = SparseOperator::from_triplets(2, 2, &[(0, 1, 1.0), (1, 1, 2.0)]).unwrap();
        let c = SparseOperator::add_scaled(&[(2.0, &a), (3.0, &b)]).unwrap();
        assert_eq!(c.get(0, 0), 2.0);
        assert_eq!(c.get(0, 1), 3.0);
        assert_eq!(c.get(1, 1), 8.0);
    }

    #[test]
    fn restriction_keeps_selected_block() {
        let m = SparseOperator::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 5.0), (2, 0, 2.0), (2, 2, 3.0)],
        )
        .unwrap();
        let (sub, kept) = m.restrict_symmetric(&[true, false, true]);
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(sub.get(0, 1), 2.0);
        assert_eq!(sub.get(1, 1), 3.0);
        assert_eq!(sub.nnz(), 4);
    }

    #[test]
    fn select_rows_preserves_entries() {
        let m = SparseOperator::from_triplets(
            3,
            2,
            &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, 3.0)],
        )
        .unwrap();
        let sub = m.select_rows(1, 3);
        assert_eq!(sub.row_count(), 2);
        assert_eq!(sub.get(0, 1), 2.0);
        assert_eq!(sub.get(1, 0), 3.0);
    }
}
