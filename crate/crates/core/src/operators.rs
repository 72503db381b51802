//! Discrete covariant derivative, weighted divergence, adjoint connection and
//! the vector Laplacian `Δ = ∇*∇`.
//!
//! Two discretizations of `Δ` coexist:
//!
//! - The weak form `L = Dᵀ M D` with generalized mass `B`. `D` stacks the
//!   covariant derivative taken with one-sided differences in each of the
//!   `2^d` axis orientations, and `M` weighs every orientation by `2^{-d}`.
//!   Averaging opposite orientations cancels the first-order error, and the
//!   flat stencil is the compact `(−1, 2, −1)/h²` per axis. `L` is assembled
//!   element by element with mirrored upper triangles, so `L = Lᵀ` holds
//!   bit-exactly. This is the operator used for spectra.
//! - The strong form, which applies the adjoint formula
//!   `∇*(Y^♭ ⊗ Z) = −∇̃_Y Z − div_f(Y) Z` to the central-difference `∇X`.
//!   It is an independent cross-check of the weak form.
//!
//! Mass matrices use node quadrature with weight `ρ ∏h`: `B` has blocks
//! `ρ g`, the `(1,1)`-tensor mass has blocks `ρ g⁻¹ ⊗ g`.

use nalgebra::DMatrix;

use crate::error::{Result, StatlapError};
use crate::geometry::{ManifoldData, Which};
use crate::numeric::{self, max_abs};
use crate::sparse::{Assembler, DiscreteOperator};

/// Relative tolerance factor, times `h_max² κ` (see [`geometric_scale`]), for
/// agreement between the two displayed strong forms.
pub const STRONG_FORM_AGREEMENT: f64 = 5.0;

pub fn orientation_count(dim: usize) -> usize {
    1 << dim
}

/// `+1` or `−1`: direction of the one-sided difference along `axis` in orientation `sigma`.
pub fn orientation_sign(sigma: usize, axis: usize) -> f64 {
    if (sigma >> axis) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Step (±1) along `axis` in orientation `sigma`.
fn orientation_step(sigma: usize, axis: usize) -> isize {
    if (sigma >> axis) & 1 == 0 {
        1
    } else {
        -1
    }
}

/// Central-difference covariant derivative `(∇_i X)^k = D_i X^k + Γ^k_{il} X^l`
/// as an `n d² × n d` operator.
pub fn covariant_derivative(md: &ManifoldData, which: Which) -> DiscreteOperator {
    let (n, d) = (md.len(), md.dim());
    let gamma = md.connection(which);
    let mut a = Assembler::new(n * d * d, n * d);
    for x in 0..n {
        for i in 0..d {
            let inv = 1.0 / (2.0 * md.grid.spacing(i));
            let (p, m) = (md.grid.shift(x, i, 1), md.grid.shift(x, i, -1));
            for k in 0..d {
                let row = (x * d + i) * d + k;
                a.add(row, p * d + k, inv);
                a.add(row, m * d + k, -inv);
                for l in 0..d {
                    a.add(row, x * d + l, gamma.get(x, k, i, l));
                }
            }
        }
    }
    let tag = match which {
        Which::Primal => "covariant-derivative",
        Which::Dual => "dual-covariant-derivative",
    };
    a.finish(tag)
}

/// Covariant derivative stacked over the `2^d` one-sided orientations, an
/// `2^d n d² × n d` operator. Row `((σ n + x) d + i) d + k` holds
/// `(X^k(x + s_i e_i) − X^k(x)) / (s_i h_i) + Γ^k_{il}(x) X^l(x)`.
pub fn oriented_covariant_derivative(md: &ManifoldData, which: Which) -> DiscreteOperator {
    let (n, d) = (md.len(), md.dim());
    let gamma = md.connection(which);
    let mut a = Assembler::new(orientation_count(d) * n * d * d, n * d);
    for sigma in 0..orientation_count(d) {
        for x in 0..n {
            for i in 0..d {
                let inv = 1.0 / (orientation_sign(sigma, i) * md.grid.spacing(i));
                let nb = md.grid.shift(x, i, orientation_step(sigma, i));
                for k in 0..d {
                    let row = ((sigma * n + x) * d + i) * d + k;
                    a.add(row, nb * d + k, inv);
                    a.add(row, x * d + k, -inv);
                    for l in 0..d {
                        a.add(row, x * d + l, gamma.get(x, k, i, l));
                    }
                }
            }
        }
    }
    a.finish("oriented-covariant-derivative")
}

/// Matrix-free central covariant derivative, laid out like [`covariant_derivative`].
pub fn apply_covariant_derivative(md: &ManifoldData, which: Which, x: &[f64]) -> Vec<f64> {
    let (n, d) = (md.len(), md.dim());
    assert_eq!(x.len(), n * d);
    let gamma = md.connection(which);
    let mut out = vec![0.0; n * d * d];
    for i in 0..d {
        for k in 0..d {
            let di = md.grid.central_diff_strided(x, d, k, i);
            for node in 0..n {
                let turn: f64 = (0..d).map(|l| gamma.get(node, k, i, l) * x[node * d + l]).sum();
                out[(node * d + i) * d + k] = di[node] + turn;
            }
        }
    }
    out
}

/// `L²(ρ)` structure: the vector mass `B` and the `(1,1)`-tensor masses.
#[derive(Debug, Clone)]
pub struct InnerProductData {
    /// Blocks `ρ g ∏h`.
    pub vector_mass: DiscreteOperator,
    /// Blocks `ρ g⁻¹ ⊗ g ∏h`, central layout.
    pub tensor_mass: DiscreteOperator,
    /// Blocks `2^{-d} ρ g⁻¹ ⊗ g ∏h` for every orientation, stacked layout.
    pub oriented_tensor_mass: DiscreteOperator,
    /// Row-major `d × d` blocks of `B⁻¹ = g⁻¹ / (ρ ∏h)`.
    inverse_blocks: Vec<f64>,
    dim: usize,
}

impl InnerProductData {
    pub fn new(md: &ManifoldData) -> Self {
        let (n, d) = (md.len(), md.dim());
        let vol = md.grid.cell_volume();
        let mut b = Assembler::new(n * d, n * d);
        let mut inverse_blocks = Vec::with_capacity(n * d * d);
        for x in 0..n {
            let w = md.rho.values()[x] * vol;
            for k in 0..d {
                for l in 0..d {
                    b.add(x * d + k, x * d + l, w * md.g.get2(x, k, l));
                    inverse_blocks.push(md.g_inv.get2(x, k, l) / w);
                }
            }
        }
        let tensor_block = |a: &mut Assembler, base: usize, x: usize, w: f64| {
            for i in 0..d {
                for k in 0..d {
                    for j in 0..d {
                        for l in 0..d {
                            let v = w * md.g_inv.get2(x, i, j) * md.g.get2(x, k, l);
                            a.add(base + i * d + k, base + j * d + l, v);
                        }
                    }
                }
            }
        };
        let mut m = Assembler::new(n * d * d, n * d * d);
        for x in 0..n {
            tensor_block(&mut m, x * d * d, x, md.rho.values()[x] * vol);
        }
        let s = orientation_count(d);
        let mut mo = Assembler::new(s * n * d * d, s * n * d * d);
        for sigma in 0..s {
            for x in 0..n {
                tensor_block(&mut mo, (sigma * n + x) * d * d, x, md.rho.values()[x] * vol / s as f64);
            }
        }
        InnerProductData {
            vector_mass: b.finish("vector-mass"),
            tensor_mass: m.finish("tensor-mass"),
            oriented_tensor_mass: mo.finish("oriented-tensor-mass"),
            inverse_blocks,
            dim: d,
        }
    }

    /// `B⁻¹ y`.
    pub fn solve_vector_mass(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; y.len()];
        for (node, (o, yy)) in out.chunks_mut(d).zip(y.chunks(d)).enumerate() {
            let blk = &self.inverse_blocks[node * d * d..(node + 1) * d * d];
            for k in 0..d {
                o[k] = (0..d).map(|l| blk[k * d + l] * yy[l]).sum();
            }
        }
        out
    }

    /// `⟨X, Y⟩_B`.
    pub fn vector_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        numeric::dot(x, &self.vector_mass.apply(y))
    }
}

/// Weak-form Laplacian `L = Dᵀ M D` and the data that defines it.
#[derive(Debug, Clone)]
pub struct WeakLaplacian {
    pub stiffness: DiscreteOperator,
    /// Stacked primal covariant derivative `D`.
    pub derivative: DiscreteOperator,
    pub mass: InnerProductData,
}

impl WeakLaplacian {
    /// `B⁻¹ L X`, the weak Laplacian as a map on vector fields.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.mass.solve_vector_mass(&self.stiffness.apply(x))
    }

    /// Discrete adjoint of the stacked covariant derivative, `B⁻¹ Dᵀ M W`.
    pub fn apply_adjoint(&self, w: &[f64]) -> Vec<f64> {
        let mw = self.mass.oriented_tensor_mass.apply(w);
        self.mass.solve_vector_mass(&self.derivative.apply_transpose(&mw))
    }

    /// `⟨DX, W⟩_M`.
    pub fn derivative_pairing(&self, x: &[f64], w: &[f64]) -> f64 {
        let dx = self.derivative.apply(x);
        numeric::dot(&dx, &self.mass.oriented_tensor_mass.apply(w))
    }

    /// `Xᵀ L Y`.
    pub fn energy(&self, x: &[f64], y: &[f64]) -> f64 {
        numeric::dot(x, &self.stiffness.apply(y))
    }
}

/// Assembles `L = Σ_{σ, x} D_{σ,x}ᵀ M_{σ,x} D_{σ,x}` from local element
/// matrices. Each element computes its upper triangle once and adds it to
/// both mirrored global entries, in a fixed orientation-major, node-ascending order.
pub fn assemble_weak_laplacian(md: &ManifoldData) -> WeakLaplacian {
    let (n, d) = (md.len(), md.dim());
    let s = orientation_count(d);
    let vol = md.grid.cell_volume();
    let local_dofs = (d + 1) * d;
    let mut a = Assembler::new(n * d, n * d);
    let mut global = vec![0usize; local_dofs];
    for sigma in 0..s {
        for x in 0..n {
            // local slot 0 is x, slot 1 + i is the neighbour along axis i
            for comp in 0..d {
                global[comp] = x * d + comp;
            }
            for i in 0..d {
                let nb = md.grid.shift(x, i, orientation_step(sigma, i));
                for comp in 0..d {
                    global[(1 + i) * d + comp] = nb * d + comp;
                }
            }
            let mut dl = DMatrix::<f64>::zeros(d * d, local_dofs);
            for i in 0..d {
                let inv = 1.0 / (orientation_sign(sigma, i) * md.grid.spacing(i));
                for k in 0..d {
                    let r = i * d + k;
                    dl[(r, (1 + i) * d + k)] += inv;
                    dl[(r, k)] -= inv;
                    for l in 0..d {
                        dl[(r, l)] += md.gamma.get(x, k, i, l);
                    }
                }
            }
            let w = md.rho.values()[x] * vol / s as f64;
            let mut ml = DMatrix::<f64>::zeros(d * d, d * d);
            for i in 0..d {
                for k in 0..d {
                    for j in 0..d {
                        for l in 0..d {
                            ml[(i * d + k, j * d + l)] = w * md.g_inv.get2(x, i, j) * md.g.get2(x, k, l);
                        }
                    }
                }
            }
            let mdl = &ml * &dl;
            for p in 0..local_dofs {
                for q in p..local_dofs {
                    let v: f64 = (0..d * d).map(|r| dl[(r, p)] * mdl[(r, q)]).sum();
                    if v == 0.0 {
                        continue;
                    }
                    a.add(global[p], global[q], v);
                    if global[p] != global[q] {
                        a.add(global[q], global[p], v);
                    }
                }
            }
        }
    }
    WeakLaplacian {
        stiffness: a.finish("weak-laplacian"),
        derivative: oriented_covariant_derivative(md, Which::Primal),
        mass: InnerProductData::new(md),
    }
}

/// Weighted divergence `div_f X = (1/ρ) D_i(ρ X^i)`.
pub fn divergence_f(md: &ManifoldData, x: &[f64]) -> Vec<f64> {
    weighted_divergence(md, md.rho.values(), x)
}

/// Riemannian divergence `div X = (1/√det g) D_i(√det g X^i)`.
pub fn riemannian_divergence(md: &ManifoldData, x: &[f64]) -> Vec<f64> {
    weighted_divergence(md, md.sqrt_det_g.values(), x)
}

fn weighted_divergence(md: &ManifoldData, weight: &[f64], x: &[f64]) -> Vec<f64> {
    let (n, d) = (md.len(), md.dim());
    assert_eq!(x.len(), n * d);
    let mut acc = vec![0.0; n];
    for i in 0..d {
        let flux: Vec<f64> = (0..n).map(|node| weight[node] * x[node * d + i]).collect();
        let di = md.grid.central_diff(&flux, i);
        for node in 0..n {
            acc[node] += di[node];
        }
    }
    acc.iter().zip(weight).map(|(a, w)| a / w).collect()
}

/// Directional derivative `X h = X^i D_i h`.
pub fn directional_derivative(md: &ManifoldData, x: &[f64], h: &[f64]) -> Vec<f64> {
    let (n, d) = (md.len(), md.dim());
    let grads: Vec<Vec<f64>> = (0..d).map(|i| md.grid.central_diff(h, i)).collect();
    (0..n)
        .map(|node| (0..d).map(|i| x[node * d + i] * grads[i][node]).sum())
        .collect()
}

/// `div_f(∂_j) = D_j ρ / ρ` for every axis, `[j][node]`.
fn coordinate_divergences(md: &ManifoldData) -> Vec<Vec<f64>> {
    (0..md.dim())
        .map(|j| {
            md.grid
                .central_diff(md.rho.values(), j)
                .iter()
                .zip(md.rho.values())
                .map(|(dr, r)| dr / r)
                .collect()
        })
        .collect()
}

/// Strong adjoint connection on a `(1,1)`-field `W = dx^i ⊗ W_i` (central
/// layout): `∇*W = −Σ_j [∇̃_j V_j + div_f(∂_j) V_j]` with `V_j = g^{ij} W_i`.
pub fn apply_adjoint_strong(md: &ManifoldData, w: &[f64]) -> Vec<f64> {
    let (n, d) = (md.len(), md.dim());
    assert_eq!(w.len(), n * d * d);
    let div_coord = coordinate_divergences(md);
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        // V_j as a vector field
        let mut v = vec![0.0; n * d];
        for node in 0..n {
            for m in 0..d {
                v[node * d + m] = (0..d).map(|i| md.g_inv.get2(node, i, j) * w[(node * d + i) * d + m]).sum();
            }
        }
        for m in 0..d {
            let dv = md.grid.central_diff_strided(&v, d, m, j);
            for node in 0..n {
                let turn: f64 = (0..d).map(|l| md.gamma_dual.get(node, m, j, l) * v[node * d + l]).sum();
                out[node * d + m] -= dv[node] + turn + div_coord[j][node] * v[node * d + m];
            }
        }
    }
    out
}

/// Result of the strong-form Laplacian: both displayed forms and their gap.
#[derive(Debug, Clone)]
pub struct StrongLaplacian {
    /// `−Σ_j [∇̃_j(g^{ij}∇_i X) + div_f(∂_j) g^{ij}∇_i X]`.
    pub proof_form: Vec<f64>,
    /// `−Tr Hess X − ½ K^k ∇_k X + g^{ij} ∂_j f ∇_i X`.
    pub final_form: Vec<f64>,
    /// `max |proof − final| / scale`.
    pub discrepancy: f64,
    pub tolerance: f64,
}

/// `κ = 1 + max|Γ|² + max|∇f|² + max|∂Γ|`, an inverse squared length of the
/// geometry. The gap between the two strong forms is a product-rule defect of
/// central differences and scales like `h² κ`.
pub fn geometric_scale(md: &ManifoldData) -> f64 {
    let gamma = max_abs(md.gamma.values()).max(max_abs(md.gamma_dual.values()));
    let mut df: f64 = 0.0;
    let mut dgamma: f64 = 0.0;
    for j in 0..md.dim() {
        df = df.max(max_abs(&md.grid.central_diff(md.f.values(), j)));
        for conn in [&md.gamma, &md.gamma_dual] {
            let width = conn.values().len() / md.len();
            for comp in 0..width {
                dgamma = dgamma.max(max_abs(&md.grid.central_diff_strided(conn.values(), width, comp, j)));
            }
        }
    }
    1.0 + gamma * gamma + df * df + dgamma
}

/// Strong Laplacian with the default agreement tolerance.
pub fn apply_strong_laplacian(md: &ManifoldData, x: &[f64]) -> Result<StrongLaplacian> {
    let tolerance = STRONG_FORM_AGREEMENT * md.grid.max_spacing().powi(2) * geometric_scale(md);
    apply_strong_laplacian_with_tolerance(md, x, tolerance)
}

/// The final form reads `Hess X` as the `∇̃`-covariant derivative of the
/// `(1,1)`-tensor `∇X`, with `∇̃` acting on both slots:
/// `Hess_{ji}^m = D_j(∇_iX)^m + Γ̃^m_{jl}(∇_iX)^l − Γ̃^k_{ji}(∇_kX)^m`,
/// and `K^k = g^{ij}K^k_{ij}` with `K = Γ̃ − Γ`.
pub fn apply_strong_laplacian_with_tolerance(md: &ManifoldData, x: &[f64], tolerance: f64) -> Result<StrongLaplacian> {
    let (n, d) = (md.len(), md.dim());
    let nabla = apply_covariant_derivative(md, Which::Primal, x);
    let proof_form = apply_adjoint_strong(md, &nabla);

    let grad_f: Vec<Vec<f64>> = (0..d).map(|j| md.grid.central_diff(md.f.values(), j)).collect();
    let mut final_form = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..d {
            for m in 0..d {
                let comp = i * d + m;
                let dj = md.grid.central_diff_strided(&nabla, d * d, comp, j);
                for node in 0..n {
                    let gij = md.g_inv.get2(node, i, j);
                    if gij == 0.0 {
                        continue;
                    }
                    let w = |a: usize, b: usize| nabla[(node * d + a) * d + b];
                    let turn: f64 = (0..d).map(|l| md.gamma_dual.get(node, m, j, l) * w(i, l)).sum();
                    let slot: f64 = (0..d).map(|k| md.gamma_dual.get(node, k, j, i) * w(k, m)).sum();
                    let hess = dj[node] + turn - slot;
                    final_form[node * d + m] += -gij * hess + gij * grad_f[j][node] * w(i, m);
                }
            }
        }
    }
    for node in 0..n {
        for kk in 0..d {
            let trace_k: f64 = (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| md.g_inv.get2(node, i, j) * md.k.get3(node, kk, i, j))
                .sum();
            for m in 0..d {
                final_form[node * d + m] -= 0.5 * trace_k * nabla[(node * d + kk) * d + m];
            }
        }
    }

    let scale = max_abs(&proof_form).max(max_abs(&final_form)).max(max_abs(x)).max(f64::MIN_POSITIVE);
    let discrepancy = numeric::max_abs_diff(&proof_form, &final_form) / scale;
    if discrepancy > tolerance {
        return Err(StatlapError::InternalInconsistency {
            what: "strong Laplacian displayed forms",
            discrepancy,
            tolerance,
        });
    }
    Ok(StrongLaplacian { proof_form, final_form, discrepancy, tolerance })
}

/// Riemannian connection (rough) Laplacian `−g^{ij}(∇²X)_{ji}` of the
/// Levi-Civita connection, ignoring `C` and `f`.
pub fn connection_laplacian_reference(md: &ManifoldData, x: &[f64]) -> Vec<f64> {
    let (n, d) = (md.len(), md.dim());
    let lc = &md.levi_civita;
    let mut nabla = vec![0.0; n * d * d];
    for i in 0..d {
        for k in 0..d {
            let di = md.grid.central_diff_strided(x, d, k, i);
            for node in 0..n {
                let turn: f64 = (0..d).map(|l| lc.get(node, k, i, l) * x[node * d + l]).sum();
                nabla[(node * d + i) * d + k] = di[node] + turn;
            }
        }
    }
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..d {
            for m in 0..d {
                let dj = md.grid.central_diff_strided(&nabla, d * d, i * d + m, j);
                for node in 0..n {
                    let hess = dj[node]
                        + (0..d).map(|l| lc.get(node, m, j, l) * nabla[(node * d + i) * d + l]).sum::<f64>()
                        - (0..d).map(|k| lc.get(node, k, j, i) * nabla[(node * d + k) * d + m]).sum::<f64>();
                    out[node * d + m] -= md.g_inv.get2(node, i, j) * hess;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Symmetry, TensorField};
    use crate::geometry::Potential;
    use crate::grid::Grid;
    use crate::models::SyntheticSpec;
    use crate::probe::{smooth_scalar, smooth_vector};
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn flat(grid: Grid) -> ManifoldData {
        let grid = Arc::new(grid);
        let d = grid.dim();
        let g = TensorField::from_fn(grid.clone(), 2, Symmetry::Symmetric, |_, out| {
            for i in 0..d {
                out[i * d + i] = 1.0;
            }
        })
        .unwrap();
        let c = TensorField::zeros(grid, 3, Symmetry::FullySymmetric);
        ManifoldData::new(g, c, Potential::Zero, 1.0).unwrap()
    }

    fn curved(n: usize) -> ManifoldData {
        SyntheticSpec::new(vec![n, n], vec![TAU, 5.0]).manifold(1.0).unwrap()
    }

    #[test]
    fn flat_constant_field_is_parallel() {
        let md = flat(Grid::new(vec![6, 5], vec![1.0, 2.0]).unwrap());
        let x: Vec<f64> = (0..md.len()).flat_map(|_| [0.3, -1.2]).collect();
        assert!(covariant_derivative(&md, Which::Primal).apply(&x).iter().all(|v| v.abs() < 1e-14));
        assert!(oriented_covariant_derivative(&md, Which::Primal).apply(&x).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn central_derivative_of_sine() {
        let err = |n: usize| {
            let l = 3.0;
            let md = flat(Grid::uniform(1, n, l).unwrap());
            let x: Vec<f64> = (0..n).map(|i| (TAU * md.grid.position(i)[0] / l).sin()).collect();
            let dx = covariant_derivative(&md, Which::Primal).apply(&x);
            (0..n)
                .map(|i| (dx[i] - TAU / l * (TAU * md.grid.position(i)[0] / l).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn dual_minus_primal_is_difference_tensor() {
        let md = curved(6);
        let x = smooth_vector(&md.grid, 1);
        let p = covariant_derivative(&md, Which::Primal).apply(&x);
        let q = covariant_derivative(&md, Which::Dual).apply(&x);
        let d = 2;
        for node in 0..md.len() {
            for i in 0..d {
                for k in 0..d {
                    let kx: f64 = (0..d).map(|l| md.k.get3(node, k, i, l) * x[node * d + l]).sum();
                    let diff = q[(node * d + i) * d + k] - p[(node * d + i) * d + k];
                    assert!((diff - kx).abs() < 1e-13 * (1.0 + kx.abs()), "{diff} vs {kx}");
                }
            }
        }
    }

    #[test]
    fn matrix_free_derivative_matches_operator() {
        let md = curved(6);
        let x = smooth_vector(&md.grid, 2);
        let a = covariant_derivative(&md, Which::Dual).apply(&x);
        let b = apply_covariant_derivative(&md, Which::Dual, &x);
        assert!(numeric::max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn total_divergence_vanishes() {
        let md = curved(12);
        for seed in 0..5 {
            let x = smooth_vector(&md.grid, seed);
            let div = divergence_f(&md, &x);
            let total = md.grid.integrate(&div, md.rho.values());
            let scale = md.grid.integrate(&div.iter().map(|v| v.abs()).collect::<Vec<_>>(), md.rho.values());
            assert!(total.abs() <= 1e-12 * scale.max(1.0), "{total}");
        }
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let md = curved(10);
        let x = smooth_vector(&md.grid, 3);
        let h = smooth_scalar(&md.grid, 4);
        let lhs = md.grid.integrate(&directional_derivative(&md, &x, &h), md.rho.values());
        let div = divergence_f(&md, &x);
        let rhs: Vec<f64> = div.iter().zip(&h).map(|(a, b)| a * b).collect();
        let rhs = -md.grid.integrate(&rhs, md.rho.values());
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    fn lemma_residuals(n: usize) -> (f64, f64) {
        let md = curved(n);
        let x = smooth_vector(&md.grid, 8);
        let h = smooth_scalar(&md.grid, 9);
        let divf = divergence_f(&md, &x);
        let div = riemannian_divergence(&md, &x);
        let xf = directional_derivative(&md, &x, md.f.values());
        let r1 = (0..md.len()).map(|i| (divf[i] - div[i] + xf[i]).abs()).fold(0.0, f64::max);
        let hx: Vec<f64> = (0..md.len() * 2).map(|i| h[i / 2] * x[i]).collect();
        let divhx = divergence_f(&md, &hx);
        let xh = directional_derivative(&md, &x, &h);
        let r2 = (0..md.len()).map(|i| (divhx[i] - h[i] * divf[i] - xh[i]).abs()).fold(0.0, f64::max);
        (r1, r2)
    }

    #[test]
    fn divergence_lemmas_converge_second_order() {
        let (a1, a2) = lemma_residuals(32);
        let (b1, b2) = lemma_residuals(64);
        assert!((a1 / b1 - 4.0).abs() <= 1.0, "ratio {}", a1 / b1);
        assert!((a2 / b2 - 4.0).abs() <= 1.0, "ratio {}", a2 / b2);
    }

    #[test]
    fn weak_laplacian_is_bitwise_symmetric_and_matches_product() {
        let md = curved(6);
        let weak = assemble_weak_laplacian(&md);
        assert!(weak.stiffness.is_bitwise_symmetric());
        assert_eq!(weak.stiffness.max_asymmetry(), 0.0);
        let x = smooth_vector(&md.grid, 5);
        let direct = weak.stiffness.apply(&x);
        let dx = weak.derivative.apply(&x);
        let product = weak.derivative.apply_transpose(&weak.mass.oriented_tensor_mass.apply(&dx));
        assert!(numeric::max_abs_diff(&direct, &product) < 1e-12 * max_abs(&direct));
    }

    #[test]
    fn weak_adjoint_pairing_is_exact() {
        let md = curved(8);
        let weak = assemble_weak_laplacian(&md);
        let rows = weak.derivative.shape().0;
        for seed in 0..20 {
            let x = smooth_vector(&md.grid, 100 + seed);
            let w = crate::probe::smooth_components(&md.grid, rows / md.len(), 200 + seed);
            let lhs = weak.derivative_pairing(&x, &w);
            let rhs = weak.mass.vector_inner(&x, &weak.apply_adjoint(&w));
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
        assert!(weak.apply_adjoint(&vec![0.0; rows]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn strong_adjoint_zero_and_flat_constant() {
        let md = flat(Grid::new(vec![5, 6], vec![1.0, 1.0]).unwrap());
        let n = md.len();
        assert!(apply_adjoint_strong(&md, &vec![0.0; n * 4]).iter().all(|&v| v == 0.0));
        // Y♭ ⊗ Z with constant Y, Z
        let (y, z) = ([0.5, -1.0], [2.0, 0.25]);
        let w: Vec<f64> = (0..n).flat_map(|_| (0..4).map(move |c| y[c / 2] * z[c % 2])).collect();
        assert!(apply_adjoint_strong(&md, &w).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn flat_torus_one_dimensional_stencil() {
        let n = 16;
        let md = flat(Grid::uniform(1, n, TAU).unwrap());
        let weak = assemble_weak_laplacian(&md);
        let h = TAU / n as f64;
        let l = weak.stiffness.to_dense() / h;
        for i in 0..n {
            assert!((l[(i, i)] - 2.0 / (h * h)).abs() < 1e-10);
            assert!((l[(i, (i + 1) % n)] + 1.0 / (h * h)).abs() < 1e-10);
        }
    }

    fn weak_strong_gap(n: usize) -> f64 {
        let md = curved(n);
        let x = smooth_vector(&md.grid, 12);
        let weak = assemble_weak_laplacian(&md).apply(&x);
        let strong = apply_strong_laplacian(&md, &x).unwrap();
        numeric::max_abs_diff(&weak, &strong.proof_form) / max_abs(&x)
    }

    #[test]
    fn weak_and_strong_agree_to_second_order() {
        let a = weak_strong_gap(24);
        let b = weak_strong_gap(48);
        assert!((a / b - 4.0).abs() <= 1.0, "ratio {} ({a} → {b})", a / b);
    }

    fn reduction_gap(n: usize) -> f64 {
        let (g, _, _) = SyntheticSpec::new(vec![n, n], vec![TAU, 5.0]).fields().unwrap();
        let c = TensorField::zeros(g.grid().clone(), 3, Symmetry::FullySymmetric);
        let md = ManifoldData::new(g, c, Potential::Zero, 1.0).unwrap();
        let x = smooth_vector(&md.grid, 13);
        let strong = apply_strong_laplacian(&md, &x).unwrap().proof_form;
        numeric::max_abs_diff(&strong, &connection_laplacian_reference(&md, &x)) / max_abs(&x)
    }

    #[test]
    fn reduces_to_connection_laplacian_without_skewness_or_potential() {
        let a = reduction_gap(24);
        let b = reduction_gap(48);
        assert!((a / b - 4.0).abs() <= 1.0, "ratio {} ({a} → {b})", a / b);
    }

    #[test]
    fn strong_forms_agree_and_vanish_on_zero() {
        let md = curved(16);
        let x = smooth_vector(&md.grid, 4);
        let s = apply_strong_laplacian(&md, &x).unwrap();
        assert!(s.discrepancy <= s.tolerance);
        let z = apply_strong_laplacian(&md, &vec![0.0; md.len() * 2]).unwrap();
        assert!(z.proof_form.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn potential_shift_leaves_laplacian_unchanged() {
        let md = curved(8);
        let shifted = md.with_shifted_potential(3.7).unwrap();
        let x = smooth_vector(&md.grid, 6);
        let a = assemble_weak_laplacian(&md).apply(&x);
        let b = assemble_weak_laplacian(&shifted).apply(&x);
        assert!(numeric::max_abs_diff(&a, &b) <= 1e-12 * max_abs(&a));
        let a = apply_strong_laplacian(&md, &x).unwrap().proof_form;
        let b = apply_strong_laplacian(&shifted, &x).unwrap().proof_form;
        assert!(numeric::max_abs_diff(&a, &b) <= 1e-12 * max_abs(&a));
    }

    #[test]
    fn transcription_error_is_caught() {
        let md = curved(8);
        let x = smooth_vector(&md.grid, 4);
        assert!(matches!(
            apply_strong_laplacian_with_tolerance(&md, &x, 0.0),
            Err(StatlapError::InternalInconsistency { .. })
        ));
    }
}
