//! Smooth random periodic test fields.
//!
//! A probe is a fixed random trigonometric polynomial in the chart angles
//! `2πu_a/L_a`, so sampling it on a refined grid gives the same continuous
//! field. Identity checks and convergence studies draw their inputs here.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::Grid;

const MAX_WAVENUMBER: i32 = 2;

#[derive(Debug, Clone)]
struct Mode {
    wave: Vec<i32>,
    cos: f64,
    sin: f64,
}

/// Random smooth periodic function of the chart coordinates.
#[derive(Debug, Clone)]
pub struct SmoothProbe {
    offset: f64,
    modes: Vec<Mode>,
}

impl SmoothProbe {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        let base = (2 * MAX_WAVENUMBER + 1) as usize;
        for m in 0..base.pow(dim as u32) {
            let mut rest = m;
            let wave: Vec<i32> = (0..dim)
                .map(|_| {
                    let w = (rest % base) as i32 - MAX_WAVENUMBER;
                    rest /= base;
                    w
                })
                .collect();
            if wave.iter().all(|&w| w == 0) {
                continue;
            }
            let decay = 1.0 / (1.0 + wave.iter().map(|w| (w * w) as f64).sum::<f64>());
            modes.push(Mode {
                wave,
                cos: decay * rng.random_range(-1.0..1.0),
                sin: decay * rng.random_range(-1.0..1.0),
            });
        }
        SmoothProbe { offset: rng.random_range(-1.0..1.0), modes }
    }

    pub fn eval(&self, grid: &Grid, u: &[f64]) -> f64 {
        let t: Vec<f64> = u.iter().zip(grid.periods()).map(|(x, l)| TAU * x / l).collect();
        self.offset
            + self
                .modes
                .iter()
                .map(|m| {
                    let arg: f64 = m.wave.iter().zip(&t).map(|(&w, ta)| w as f64 * ta).sum();
                    m.cos * arg.cos() + m.sin * arg.sin()
                })
                .sum::<f64>()
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.len()).map(|x| self.eval(grid, &grid.position(x))).collect()
    }
}

/// Smooth scalar field from `seed`.
pub fn smooth_scalar(grid: &Grid, seed: u64) -> Vec<f64> {
    SmoothProbe::new(grid.dim(), seed).sample(grid)
}

/// Smooth field with `comps` components per node, flattened node-major.
pub fn smooth_components(grid: &Grid, comps: usize, seed: u64) -> Vec<f64> {
    let probes: Vec<SmoothProbe> = (0..comps)
        .map(|c| SmoothProbe::new(grid.dim(), seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(c as u64)))
        .collect();
    let mut out = Vec::with_capacity(grid.len() * comps);
    for x in 0..grid.len() {
        let u = grid.position(x);
        out.extend(probes.iter().map(|p| p.eval(grid, &u)));
    }
    out
}

/// Smooth vector field.
pub fn smooth_vector(grid: &Grid, seed: u64) -> Vec<f64> {
    smooth_components(grid, grid.dim(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refinement_samples_the_same_function() {
        let coarse = Grid::new(vec![8, 6], vec![1.0, 2.0]).unwrap();
        let fine = coarse.refined(2);
        let a = smooth_scalar(&coarse, 5);
        let b = smooth_scalar(&fine, 5);
        let xc = coarse.node(&[3, 2]);
        let xf = fine.node(&[6, 4]);
        assert_eq!(a[xc], b[xf]);
    }
}
