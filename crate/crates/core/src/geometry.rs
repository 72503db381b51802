//! Metric and connection calculus on a periodic chart.
//!
//! Builds the snapshot `(g, g⁻¹, √det g, C, K, Γ, Γ̃, f, ρ)` that every
//! downstream operator consumes. Derivatives are second-order central
//! differences with periodic wraparound.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, StatlapError};
use crate::field::{ConnectionField, Symmetry, TensorField};
use crate::grid::Grid;
use crate::numeric;

/// Largest accepted per-node condition number of the metric.
pub const MAX_METRIC_CONDITION: f64 = 1e12;

/// Cholesky-based positive-definiteness check of a single `d × d` block.
/// Returns the inverse and determinant.
fn factor_block(block: &[f64], d: usize, node: usize) -> Result<(DMatrix<f64>, f64)> {
    let m = numeric::square(block, d);
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let chol = m.cholesky().ok_or(StatlapError::SingularMetric { node, condition })?;
    if !(condition <= MAX_METRIC_CONDITION) {
        return Err(StatlapError::SingularMetric { node, condition });
    }
    let det = chol.l_dirty().diagonal().iter().map(|v| v * v).product();
    let mut inv = chol.inverse();
    numeric::symmetrize(&mut inv);
    Ok((inv, det))
}

fn require_rank(field: &TensorField, rank: usize, what: &str) -> Result<()> {
    if field.rank() != rank {
        return Err(StatlapError::ShapeMismatch(format!(
            "{what} must have rank {rank}, got {}",
            field.rank()
        )));
    }
    Ok(())
}

fn require_same_grid(a: &TensorField, b: &TensorField) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(StatlapError::ShapeMismatch("fields live on different grids".into()));
    }
    Ok(())
}

pub fn invert_metric(g: &TensorField) -> Result<TensorField> {
    require_rank(g, 2, "metric")?;
    let d = g.dim();
    let mut values = Vec::with_capacity(g.values().len());
    for x in 0..g.grid().len() {
        let (inv, _) = factor_block(g.at(x), d, x)?;
        values.extend(numeric::flatten(&inv));
    }
    TensorField::new(g.grid().clone(), 2, Symmetry::Symmetric, values)
}

/// `√det g` at every node.
pub fn sqrt_det_metric(g: &TensorField) -> Result<TensorField> {
    require_rank(g, 2, "metric")?;
    let d = g.dim();
    let mut values = Vec::with_capacity(g.grid().len());
    for x in 0..g.grid().len() {
        let (_, det) = factor_block(g.at(x), d, x)?;
        values.push(det.sqrt());
    }
    TensorField::scalar(g.grid().clone(), values)
}

/// Levi-Civita coefficients `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`.
pub fn christoffel_lc(g: &TensorField, grid: &Grid) -> Result<ConnectionField> {
    require_rank(g, 2, "metric")?;
    if **g.grid() != *grid {
        return Err(StatlapError::ShapeMismatch("metric does not live on the given grid".into()));
    }
    let g_inv = invert_metric(g)?;
    let d = grid.dim();
    let n = grid.len();
    // dg[l][i*d+j][x] = ∂_l g_ij
    let dg: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|l| {
            (0..d * d)
                .map(|c| grid.central_diff_strided(g.values(), d * d, c, l))
                .collect()
        })
        .collect();
    let mut values = vec![0.0; n * d * d * d];
    for x in 0..n {
        for i in 0..d {
            for j in i..d {
                // first-kind symbols Γ_{ij,l}
                let first: Vec<f64> = (0..d)
                    .map(|l| 0.5 * (dg[i][j * d + l][x] + dg[j][i * d + l][x] - dg[l][i * d + j][x]))
                    .collect();
                for k in 0..d {
                    let v: f64 = (0..d).map(|l| g_inv.get2(x, k, l) * first[l]).sum();
                    values[((x * d + k) * d + i) * d + j] = v;
                    values[((x * d + k) * d + j) * d + i] = v;
                }
            }
        }
    }
    ConnectionField::from_values(g.grid().clone(), values)
}

/// Difference tensor `K^k_{ij} = g^{kl} C_{ijl}`.
pub fn difference_tensor(g_inv: &TensorField, c: &TensorField) -> Result<TensorField> {
    require_rank(g_inv, 2, "inverse metric")?;
    require_rank(c, 3, "Amari-Chentsov tensor")?;
    require_same_grid(g_inv, c)?;
    let d = c.dim();
    TensorField::from_fn(c.grid().clone(), 3, Symmetry::LowerPair, |x, out| {
        for k in 0..d {
            for i in 0..d {
                for j in i..d {
                    let v: f64 = (0..d).map(|l| g_inv.get2(x, k, l) * c.get3(x, i, j, l)).sum();
                    out[(k * d + i) * d + j] = v;
                    out[(k * d + j) * d + i] = v;
                }
            }
        }
    })
}

/// Dual pair `Γ = Γ^LC − (α/2)K`, `Γ̃ = Γ^LC + (α/2)K`.
pub fn alpha_connection_pair(
    lc: &ConnectionField,
    k: &TensorField,
    alpha: f64,
) -> Result<(ConnectionField, ConnectionField)> {
    require_rank(k, 3, "difference tensor")?;
    require_same_grid(lc.field(), k)?;
    let half = 0.5 * alpha;
    let primal = lc.values().iter().zip(k.values()).map(|(l, kv)| l - half * kv).collect();
    let dual = lc.values().iter().zip(k.values()).map(|(l, kv)| l + half * kv).collect();
    Ok((
        ConnectionField::from_values(k.grid().clone(), primal)?,
        ConnectionField::from_values(k.grid().clone(), dual)?,
    ))
}

/// Volume density `ρ = e^{−f} √det g`.
pub fn density_field(g: &TensorField, f: &TensorField) -> Result<TensorField> {
    require_rank(f, 0, "potential f")?;
    require_same_grid(g, f)?;
    let sdg = sqrt_det_metric(g)?;
    let values = sdg.values().iter().zip(f.values()).map(|(s, fv)| (-fv).exp() * s).collect();
    TensorField::scalar(g.grid().clone(), values)
}

/// How the potential `f` in `ρ = e^{−f}√det g` is chosen.
#[derive(Debug, Clone)]
pub enum Potential {
    Zero,
    /// `f = log √det g`, which makes `ρ ≡ 1`.
    LogSqrtDetG,
    Explicit(TensorField),
}

/// One coherent snapshot of a statistical manifold with density on a chart.
#[derive(Debug, Clone)]
pub struct ManifoldData {
    pub grid: Arc<Grid>,
    pub g: TensorField,
    pub g_inv: TensorField,
    pub sqrt_det_g: TensorField,
    pub c: TensorField,
    /// Difference tensor of the realized pair, `K = Γ̃ − Γ` (equals `α g⁻¹C`).
    pub k: TensorField,
    /// Levi-Civita connection of the realized pair, `(Γ + Γ̃)/2`.
    pub levi_civita: ConnectionField,
    pub gamma: ConnectionField,
    pub gamma_dual: ConnectionField,
    pub f: TensorField,
    pub rho: TensorField,
    pub alpha: f64,
}

impl ManifoldData {
    pub fn new(g: TensorField, c: TensorField, potential: Potential, alpha: f64) -> Result<Self> {
        require_rank(&g, 2, "metric")?;
        require_rank(&c, 3, "Amari-Chentsov tensor")?;
        require_same_grid(&g, &c)?;
        if !alpha.is_finite() {
            return Err(StatlapError::InvalidInput(format!("alpha = {alpha}")));
        }
        let c = if c.symmetry() == Symmetry::FullySymmetric {
            c
        } else {
            TensorField::new(c.grid().clone(), 3, Symmetry::FullySymmetric, c.into_values())?
        };
        let grid = g.grid().clone();
        let g_inv = invert_metric(&g)?;
        let sqrt_det_g = sqrt_det_metric(&g)?;
        let lc = christoffel_lc(&g, &grid)?;
        let k_raw = difference_tensor(&g_inv, &c)?;
        let (gamma, gamma_dual) = alpha_connection_pair(&lc, &k_raw, alpha)?;

        // Re-derive K and Γ^LC from the rounded pair so Γ̃ − Γ = K and
        // (Γ + Γ̃)/2 = Γ^LC hold bit-exactly.
        let k_vals = gamma
            .values()
            .iter()
            .zip(gamma_dual.values())
            .map(|(a, b)| b - a)
            .collect();
        let lc_vals = gamma
            .values()
            .iter()
            .zip(gamma_dual.values())
            .map(|(a, b)| (a + b) * 0.5)
            .collect();
        let k = TensorField::new(grid.clone(), 3, Symmetry::LowerPair, k_vals)?;
        let levi_civita = ConnectionField::from_values(grid.clone(), lc_vals)?;

        let f = match potential {
            Potential::Zero => TensorField::scalar(grid.clone(), vec![0.0; grid.len()])?,
            Potential::LogSqrtDetG => {
                TensorField::scalar(grid.clone(), sqrt_det_g.values().iter().map(|s| s.ln()).collect())?
            }
            Potential::Explicit(f) => {
                require_rank(&f, 0, "potential f")?;
                require_same_grid(&g, &f)?;
                f
            }
        };
        let rho = density_field(&g, &f)?;
        if let Some(x) = rho.values().iter().position(|&r| !(r > 0.0)) {
            return Err(StatlapError::InvalidInput(format!("density vanishes at node {x}")));
        }
        Ok(ManifoldData {
            grid,
            g,
            g_inv,
            sqrt_det_g,
            c,
            k,
            levi_civita,
            gamma,
            gamma_dual,
            f,
            rho,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same manifold with `f` replaced by `f + shift`.
    pub fn with_shifted_potential(&self, shift: f64) -> Result<Self> {
        let f = TensorField::scalar(self.grid.clone(), self.f.values().iter().map(|v| v + shift).collect())?;
        ManifoldData::new(self.g.clone(), self.c.clone(), Potential::Explicit(f), self.alpha)
    }

    /// Connection coefficients for the requested member of the dual pair.
    pub fn connection(&self, which: Which) -> &ConnectionField {
        match which {
            Which::Primal => &self.gamma,
            Which::Dual => &self.gamma_dual,
        }
    }

    /// `g(X, Y)` at a node for vectors given by component slices.
    pub fn inner(&self, node: usize, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += self.g.get2(node, i, j) * x[i] * y[j];
            }
        }
        s
    }

    pub fn check_invariants(&self) -> ManifoldChecks {
        let d = self.dim();
        let mut inverse_residual = 0.0f64;
        for x in 0..self.len() {
            let g = numeric::square(self.g.at(x), d);
            let gi = numeric::square(self.g_inv.at(x), d);
            let r = (&g * &gi - DMatrix::identity(d, d)).abs().max();
            inverse_residual = inverse_residual.max(r / (g.norm() * gi.norm() / d as f64).max(1.0));
        }
        let pair_difference_exact = self
            .gamma
            .values()
            .iter()
            .zip(self.gamma_dual.values())
            .zip(self.k.values())
            .all(|((a, b), k)| (b - a).to_bits() == k.to_bits());
        let self_dual_exact = self
            .gamma
            .values()
            .iter()
            .zip(self.gamma_dual.values())
            .zip(self.levi_civita.values())
            .all(|((a, b), l)| ((a + b) * 0.5).to_bits() == l.to_bits());
        let min_rho = self.rho.values().iter().cloned().fold(f64::INFINITY, f64::min);
        ManifoldChecks {
            inverse_residual,
            pair_difference_exact,
            self_dual_exact,
            min_rho,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy)]
pub struct ManifoldChecks {
    pub inverse_residual: f64,
    pub pair_difference_exact: bool,
    pub self_dual_exact: bool,
    pub min_rho: f64,
}

impl ManifoldChecks {
    pub fn all_pass(&self) -> bool {
        self.inverse_residual <= 1e-12 && self.pair_difference_exact && self.self_dual_exact && self.min_rho > 0.0
    }
}
