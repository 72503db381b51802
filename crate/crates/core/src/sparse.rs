//! Compressed sparse row operators with a fixed, reproducible assembly order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatlapError};

/// Collects `(row, col, value)` contributions. Contributions to one entry are
/// summed in insertion order, so assembly is reproducible.
#[derive(Debug, Clone)]
pub struct Assembler {
    rows: usize,
    cols: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl Assembler {
    pub fn new(rows: usize, cols: usize) -> Self {
        Assembler { rows, cols, entries: BTreeMap::new() }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        *self.entries.entry((row, col)).or_insert(0.0) += value;
    }

    pub fn finish(self, tag: impl Into<String>) -> DiscreteOperator {
        let mut row_ptr = vec![0; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        for (&(r, c), &v) in &self.entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..self.rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        DiscreteOperator {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
            tag: tag.into(),
        }
    }
}

/// Sparse linear operator between flattened fields.
///
/// Vector fields flatten node-major then component; `(1,1)`-tensor fields
/// flatten node-major then `(i-slot, k-slot)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    tag: String,
}

impl DiscreteOperator {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(p) => self.values[span.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "operator `{}` applied to wrong length", self.tag);
        (0..self.rows)
            .into_par_iter()
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "operator `{}` transposed on wrong length", self.tag);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[c] += v * y[r];
            }
        }
        out
    }

    pub fn transpose(&self) -> DiscreteOperator {
        let mut a = Assembler::new(self.cols, self.rows);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                a.add(c, r, v);
            }
        }
        a.finish(format!("{}-transpose", self.tag))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).collect()
    }

    /// `max |A_ij − A_ji|`; zero means bit-exact symmetry.
    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn is_bitwise_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| self.row(r).all(|(c, v)| v.to_bits() == self.get(c, r).to_bits()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn to_record(&self) -> OperatorRecord {
        let t = self.triplets();
        OperatorRecord {
            tag: self.tag.clone(),
            rows: self.rows,
            cols: self.cols,
            row: t.iter().map(|e| e.0).collect(),
            col: t.iter().map(|e| e.1).collect(),
            value: t.iter().map(|e| e.2).collect(),
        }
    }

    pub fn from_record(rec: &OperatorRecord) -> Result<Self> {
        if rec.row.len() != rec.col.len() || rec.row.len() != rec.value.len() {
            return Err(StatlapError::ShapeMismatch("coordinate lists differ in length".into()));
        }
        let mut a = Assembler::new(rec.rows, rec.cols);
        for ((&r, &c), &v) in rec.row.iter().zip(&rec.col).zip(&rec.value) {
            if r >= rec.rows || c >= rec.cols {
                return Err(StatlapError::ShapeMismatch(format!("entry ({r}, {c}) outside {}×{}", rec.rows, rec.cols)));
            }
            a.add(r, c, v);
        }
        Ok(a.finish(rec.tag.clone()))
    }
}

/// Coordinate-list export `{tag, rows, cols, row, col, value}` with entries in
/// row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorRecord {
    pub tag: String,
    pub rows: usize,
    pub cols: usize,
    pub row: Vec<usize>,
    pub col: Vec<usize>,
    pub value: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DiscreteOperator {
        let mut a = Assembler::new(3, 3);
        a.add(0, 0, 2.0);
        a.add(0, 2, -1.0);
        a.add(2, 0, -1.0);
        a.add(1, 1, 1.5);
        a.add(1, 1, 0.5);
        a.finish("sample")
    }

    #[test]
    fn apply_and_transpose() {
        let op = sample();
        assert_eq!(op.apply(&[1.0, 2.0, 3.0]), vec![-1.0, 4.0, -1.0]);
        assert_eq!(op.apply_transpose(&[1.0, 2.0, 3.0]), vec![-1.0, 4.0, -1.0]);
        assert_eq!(op.get(1, 1), 2.0);
        assert_eq!(op.nnz(), 4);
        assert!(op.is_bitwise_symmetric());
        assert_eq!(op.transpose().to_dense(), op.to_dense().transpose());
    }

    #[test]
    fn record_round_trip() {
        let op = sample();
        let rec = op.to_record();
        assert_eq!(rec.row, vec![0, 0, 1, 2]);
        let back = DiscreteOperator::from_record(&rec).unwrap();
        assert_eq!(back, op);
        let mut bad = rec;
        bad.row[0] = 7;
        assert!(DiscreteOperator::from_record(&bad).is_err());
    }
}
