//! Small numerical helpers shared across modules.

use nalgebra::DMatrix;

/// Pairwise (cascade) summation. The result depends only on the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let terms: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&terms)
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn norm2(values: &[f64]) -> f64 {
    dot(values, values).sqrt()
}

/// Row-major `d × d` slice as a matrix.
pub fn square(values: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, values)
}

/// Row-major flattening of a square matrix.
pub fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * m.ncols());
    for i in 0..d {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Bit-exact symmetrization, `(A + Aᵀ) / 2` entrywise.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }

    #[test]
    fn symmetrize_is_exact() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, 0.3, 2.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)].to_bits(), m[(1, 0)].to_bits());
    }
}
