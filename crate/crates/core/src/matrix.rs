//! Dense payoff matrices for one-shot zero-sum games (row player maximizes).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "payoff matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Range("payoff matrix has non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged payoff matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.cols + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    /// `x^T A`: payoff of every column against the row mixture `x`.
    pub fn row_mix(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&self.data[a * self.cols..(a + 1) * self.cols]) {
                *o += xa * v;
            }
        }
        out
    }

    /// `A f`: payoff of every row against the column mixture `f`.
    pub fn col_mix(&self, f: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(f).map(|(v, p)| v * p).sum())
            .collect()
    }

    /// `x^T A f`.
    pub fn payoff(&self, x: &[f64], f: &[f64]) -> f64 {
        self.col_mix(f).iter().zip(x).map(|(u, p)| u * p).sum()
    }

    /// `(min_b (x^T A)_b, max_a (A f)_a)`: the pure best-response payoffs.
    pub fn best_response_bounds(&self, x: &[f64], f: &[f64]) -> (f64, f64) {
        let lower = self.row_mix(x).into_iter().fold(f64::INFINITY, f64::min);
        let upper = self.col_mix(f).into_iter().fold(f64::NEG_INFINITY, f64::max);
        (lower, upper)
    }

    /// Exact duality gap `max_a (A f)_a - min_b (x^T A)_b`.
    pub fn duality_gap(&self, x: &[f64], f: &[f64]) -> f64 {
        let (lo, hi) = self.best_response_bounds(x, f);
        hi - lo
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Index of the smallest entry; ties go to the lowest index.
pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixes_and_gap() {
        let m = PayoffMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m.row_mix(&[0.25, 0.75]), vec![0.25, 0.75]);
        assert_eq!(m.col_mix(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(m.duality_gap(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert_eq!(m.duality_gap(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(argmin(&[1.0, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
