//! Periodic rectangular charts.
//!
//! Every chart is a flat torus: axis `a` covers `[0, L_a)` with `N_a` equally
//! spaced nodes and wraps around. Nodes are numbered row-major in axis order,
//! so the last axis varies fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatlapError};

pub const MIN_POINTS_PER_AXIS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    points: Vec<usize>,
    periods: Vec<f64>,
    strides: Vec<usize>,
}

/// Serialized form of a [`Grid`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: usize,
    pub points: Vec<usize>,
    pub periods: Vec<f64>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = StatlapError;

    fn try_from(spec: GridSpec) -> Result<Self> {
        if spec.dims != spec.points.len() {
            return Err(StatlapError::ShapeMismatch(format!(
                "grid declares {} dims but lists {} axes",
                spec.dims,
                spec.points.len()
            )));
        }
        Grid::new(spec.points, spec.periods)
    }
}

impl From<Grid> for GridSpec {
    fn from(grid: Grid) -> Self {
        GridSpec {
            dims: grid.dim(),
            points: grid.points,
            periods: grid.periods,
        }
    }
}

impl Grid {
    pub fn new(points: Vec<usize>, periods: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(StatlapError::InvalidInput("grid needs at least one axis".into()));
        }
        if points.len() != periods.len() {
            return Err(StatlapError::ShapeMismatch(format!(
                "{} point counts but {} periods",
                points.len(),
                periods.len()
            )));
        }
        if let Some(n) = points.iter().find(|&&n| n < MIN_POINTS_PER_AXIS) {
            return Err(StatlapError::InvalidInput(format!(
                "axis with {n} points; at least {MIN_POINTS_PER_AXIS} are required"
            )));
        }
        if let Some(l) = periods.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
            return Err(StatlapError::InvalidInput(format!("period {l} is not a positive real")));
        }
        let mut strides = vec![1; points.len()];
        for a in (0..points.len() - 1).rev() {
            strides[a] = strides[a + 1] * points[a + 1];
        }
        Ok(Grid { points, periods, strides })
    }

    pub fn uniform(dim: usize, points: usize, period: f64) -> Result<Self> {
        Grid::new(vec![points; dim], vec![period; dim])
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.points[axis] as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    /// Quadrature weight of one node, `∏ h_a`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn index_along(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.points[axis]
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..self.dim()).map(|a| self.index_along(node, a)).collect()
    }

    pub fn node(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.points)
            .zip(&self.strides)
            .map(|((&i, &n), &s)| (i % n) * s)
            .sum()
    }

    /// Node reached by moving `offset` steps along `axis`, with wraparound.
    pub fn shift(&self, node: usize, axis: usize, offset: isize) -> usize {
        let n = self.points[axis] as isize;
        let i = self.index_along(node, axis) as isize;
        let j = (i + offset).rem_euclid(n) as usize;
        node - (i as usize) * self.strides[axis] + j * self.strides[axis]
    }

    /// Chart coordinates of a node.
    pub fn position(&self, node: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.index_along(node, a) as f64 * self.spacing(a))
            .collect()
    }

    /// Same chart with every axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Grid {
        Grid::new(
            self.points.iter().map(|n| n * factor).collect(),
            self.periods.clone(),
        )
        .expect("refining a valid grid stays valid")
    }

    /// Second-order central difference of a node-sampled scalar along `axis`.
    pub fn central_diff(&self, values: &[f64], axis: usize) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.len());
        let inv = 1.0 / (2.0 * self.spacing(axis));
        (0..self.len())
            .map(|x| (values[self.shift(x, axis, 1)] - values[self.shift(x, axis, -1)]) * inv)
            .collect()
    }

    /// Central difference of component `comp` of a field with `stride` components per node.
    pub fn central_diff_strided(&self, values: &[f64], stride: usize, comp: usize, axis: usize) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.len() * stride);
        let inv = 1.0 / (2.0 * self.spacing(axis));
        (0..self.len())
            .map(|x| {
                let p = self.shift(x, axis, 1);
                let m = self.shift(x, axis, -1);
                (values[p * stride + comp] - values[m * stride + comp]) * inv
            })
            .collect()
    }

    /// Node-quadrature of a scalar against weights, `Σ w·v·∏h`.
    pub fn integrate(&self, values: &[f64], weights: &[f64]) -> f64 {
        let terms: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
        crate::numeric::pairwise_sum(&terms) * self.cell_volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_and_wraparound() {
        let g = Grid::new(vec![4, 5], vec![1.0, 2.0]).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!(g.node(&[1, 2]), 7);
        assert_eq!(g.multi_index(7), vec![1, 2]);
        assert_eq!(g.shift(g.node(&[3, 4]), 0, 1), g.node(&[0, 4]));
        assert_eq!(g.shift(g.node(&[0, 0]), 1, -1), g.node(&[0, 4]));
        assert_eq!(g.shift(g.node(&[2, 2]), 1, 7), g.node(&[2, 4]));
        assert!((g.spacing(1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(Grid::new(vec![3], vec![1.0]).is_err());
        assert!(Grid::new(vec![8], vec![0.0]).is_err());
        assert!(Grid::new(vec![8, 8], vec![1.0]).is_err());
    }

    #[test]
    fn central_difference_of_sine_is_second_order() {
        let err = |n: usize| {
            let g = Grid::uniform(1, n, std::f64::consts::TAU).unwrap();
            let v: Vec<f64> = (0..n).map(|x| g.position(x)[0].sin()).collect();
            let d = g.central_diff(&v, 0);
            (0..n).map(|x| (d[x] - g.position(x)[0].cos()).abs()).fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn serde_round_trip() {
        let g = Grid::new(vec![8, 6], vec![1.5, 2.0]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"dims":2,"points":[8,6],"periods":[1.5,2.0]}"#);
        let back: Grid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }
}
