//! Generalized eigenproblem `L X = λ B X`, heat kernel blocks, the heat
//! semigroup `e^{−tΔ}` and the vector diffusion distance.
//!
//! `B` is block diagonal with SPD `d × d` blocks, so the problem reduces to the
//! standard symmetric problem `A = R⁻¹ L R⁻ᵀ` with `B = R Rᵀ` blockwise.
//! Small problems use a dense symmetric eigensolver, large ones a
//! thick-restart Lanczos iteration on `A`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatlapError};
use crate::geometry::ManifoldData;
use crate::numeric;
use crate::sparse::DiscreteOperator;

/// Eigenvalues with `|λ|` below this are reported as exactly zero.
pub const ZERO_EIGENVALUE: f64 = 1e-10;
/// Heat weights `e^{−λt}` below this are dropped.
pub const TRUNCATION_TOLERANCE: f64 = 1e-12;
/// Agreement required between the trace and double-sum distance forms.
pub const DISTANCE_FORM_TOLERANCE: f64 = 1e-8;
/// Problems up to this size are solved densely by default.
pub const DENSE_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralOptions {
    /// Number of eigenpairs; `None` asks for the full spectrum. Extended to
    /// the end of a degenerate cluster.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_solver")]
    pub solver: Solver,
    #[serde(default = "default_max_restarts")]
    pub max_restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_solver() -> Solver {
    Solver::Auto
}

fn default_max_restarts() -> usize {
    2000
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            k: None,
            tolerance: default_tolerance(),
            solver: Solver::Auto,
            max_restarts: default_max_restarts(),
            seed: 0,
        }
    }
}

impl SpectralOptions {
    pub fn with_k(k: usize) -> Self {
        SpectralOptions { k: Some(k), ..Default::default() }
    }
}

/// Ascending eigenpairs of `(L, B)`, `B`-orthonormal.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `n` is the flattened eigenfield `X_n`.
    pub eigenfields: DMatrix<f64>,
    /// `max |XᵀBX − I|`.
    pub orthonormality_residual: f64,
    /// `max_n ‖L X_n − λ_n B X_n‖ / (‖L‖_∞ ‖X_n‖)`.
    pub eigen_residual: f64,
    /// Total problem dimension `n d`.
    pub full_dimension: usize,
    dim: usize,
    mass: DiscreteOperator,
    /// Node-major copy of the eigenfields: `[(node · k + n) · d + a]`.
    by_node: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.len() == self.full_dimension
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mass(&self) -> &DiscreteOperator {
        &self.mass
    }

    pub fn eigenfield(&self, n: usize) -> Vec<f64> {
        self.eigenfields.column(n).iter().copied().collect()
    }

    /// `X_n(x)`.
    pub fn value_at(&self, n: usize, node: usize) -> &[f64] {
        let start = (node * self.len() + n) * self.dim;
        &self.by_node[start..start + self.dim]
    }

    /// All `X_n(x)` at one node, mode-major.
    pub fn values_at(&self, node: usize) -> &[f64] {
        let k = self.len() * self.dim;
        &self.by_node[node * k..(node + 1) * k]
    }

    pub fn heat_weights(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (-l * t).exp()).collect()
    }

    /// Heat weights with the tail past [`TRUNCATION_TOLERANCE`] dropped,
    /// never splitting a degenerate cluster.
    pub fn truncated_weights(&self, t: f64) -> (Vec<f64>, TruncationReport) {
        let mut w = self.heat_weights(t);
        let mut retained = w.len();
        if t > 0.0 {
            while retained > 1 && w[retained - 1] < TRUNCATION_TOLERANCE {
                retained -= 1;
            }
            while retained < w.len() && same_cluster(self.eigenvalues[retained - 1], self.eigenvalues[retained]) {
                retained += 1;
            }
        }
        let dropped: f64 = w[retained..].iter().sum();
        let largest_dropped = w.get(retained).copied().unwrap_or(0.0);
        for v in &mut w[retained..] {
            *v = 0.0;
        }
        // Modes past the computed ones have eigenvalues at least the last one.
        let unresolved = self.full_dimension - self.len();
        let tail = if unresolved > 0 { self.eigenvalues.last().map_or(0.0, |l| (-l * t).exp()) } else { 0.0 };
        let report = TruncationReport {
            retained,
            computed: self.len(),
            full_dimension: self.full_dimension,
            tail_bound: largest_dropped.max(tail),
            tail_sum: dropped + unresolved as f64 * tail,
            tolerance: TRUNCATION_TOLERANCE,
        };
        (w, report)
    }

    /// Check that `XᵀBX = I` and `L X = λ B X` within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.orthonormality_residual > tol || self.eigen_residual > tol {
            return Err(StatlapError::ConvergenceFailure {
                iterations: 0,
                residual: self.orthonormality_residual.max(self.eigen_residual),
            });
        }
        Ok(())
    }
}

fn same_cluster(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0)
}

/// Heat-kernel truncation bookkeeping attached to every heat evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationReport {
    pub retained: usize,
    pub computed: usize,
    pub full_dimension: usize,
    /// Upper bound on the largest omitted heat weight `e^{−λt}`.
    pub tail_bound: f64,
    /// Upper bound on the sum of omitted heat weights.
    pub tail_sum: f64,
    pub tolerance: f64,
}

impl TruncationReport {
    /// `false` means the truncation warning applies.
    pub fn within_tolerance(&self) -> bool {
        self.tail_bound <= self.tolerance
    }
}

/// Block-diagonal factor of `B`: the inverse Cholesky factors `R_x⁻¹`.
struct MassFactor {
    dim: usize,
    inv: Vec<DMatrix<f64>>,
}

impl MassFactor {
    fn new(b: &DiscreteOperator, dim: usize) -> Result<Self> {
        let n = b.shape().0 / dim;
        let mut inv = Vec::with_capacity(n);
        for node in 0..n {
            let block = DMatrix::from_fn(dim, dim, |r, c| b.get(node * dim + r, node * dim + c));
            let chol = block.cholesky().ok_or_else(|| {
                StatlapError::InvalidInput(format!("mass block at node {node} is not positive definite"))
            })?;
            let l_inv = chol
                .l()
                .try_inverse()
                .ok_or_else(|| StatlapError::InvalidInput(format!("mass block at node {node} is singular")))?;
            inv.push(l_inv);
        }
        Ok(MassFactor { dim, inv })
    }

    /// `R⁻¹ v`.
    fn apply_inv(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; v.len()];
        for (node, m) in self.inv.iter().enumerate() {
            for r in 0..d {
                out[node * d + r] = (0..d).map(|c| m[(r, c)] * v[node * d + c]).sum();
            }
        }
        out
    }

    /// `R⁻ᵀ v`.
    fn apply_inv_t(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; v.len()];
        for (node, m) in self.inv.iter().enumerate() {
            for r in 0..d {
                out[node * d + r] = (0..d).map(|c| m[(c, r)] * v[node * d + c]).sum();
            }
        }
        out
    }

    /// Dense `R⁻¹ L R⁻ᵀ`, built entry by entry from the sparse `L`.
    fn reduce_dense(&self, l: &DiscreteOperator) -> DMatrix<f64> {
        let d = self.dim;
        let size = l.shape().0;
        let mut a = DMatrix::<f64>::zeros(size, size);
        for (row, col, v) in l.triplets() {
            let (x, ra) = (row / d, row % d);
            let (y, cb) = (col / d, col % d);
            for p in 0..d {
                let lp = self.inv[x][(p, ra)];
                if lp == 0.0 {
                    continue;
                }
                for q in 0..d {
                    a[(x * d + p, y * d + q)] += lp * v * self.inv[y][(q, cb)];
                }
            }
        }
        numeric::symmetrize(&mut a);
        a
    }
}

/// Smallest eigenpairs of `(L, B)`.
pub fn eigendecompose(l: &DiscreteOperator, b: &DiscreteOperator, dim: usize, opts: &SpectralOptions) -> Result<SpectralDecomposition> {
    let size = l.shape().0;
    if l.shape() != (size, size) || b.shape() != (size, size) || size % dim != 0 {
        return Err(StatlapError::ShapeMismatch(format!(
            "L is {:?}, B is {:?}, field dimension {dim}",
            l.shape(),
            b.shape()
        )));
    }
    let k = opts.k.unwrap_or(size);
    if k == 0 || k > size {
        return Err(StatlapError::InvalidInput(format!("requested {k} eigenpairs of a {size}-dimensional problem")));
    }
    let factor = MassFactor::new(b, dim)?;
    let dense = match opts.solver {
        Solver::Dense => true,
        Solver::Lanczos => false,
        Solver::Auto => size <= DENSE_LIMIT || 3 * k >= size,
    };
    let (values, vectors) = if dense {
        let eig = SymmetricEigen::new(factor.reduce_dense(l));
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
        let count = cluster_end(&order.iter().map(|&i| eig.eigenvalues[i]).collect::<Vec<_>>(), k);
        let values: Vec<f64> = order[..count].iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(size, count, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    } else {
        let want = (k + 2 * dim + 2).min(size);
        let apply = |v: &[f64]| factor.apply_inv(&l.apply(&factor.apply_inv_t(v)));
        let (values, vectors) = lanczos_smallest(apply, size, want, opts)?;
        let count = if want == size { cluster_end(&values, k) } else { cluster_end(&values[..want - 1], k) };
        let vectors = vectors.columns(0, count).into_owned();
        (values[..count].to_vec(), vectors)
    };

    let count = values.len();
    let mut eigenfields = DMatrix::<f64>::zeros(size, count);
    for c in 0..count {
        let v: Vec<f64> = vectors.column(c).iter().copied().collect();
        let mut x = factor.apply_inv_t(&v);
        canonicalize_sign(&mut x);
        eigenfields.set_column(c, &DVector::from_vec(x));
    }
    let eigenvalues: Vec<f64> = values.iter().map(|&v| if v.abs() < ZERO_EIGENVALUE { 0.0 } else { v }).collect();

    let bx: Vec<Vec<f64>> = (0..count).into_par_iter().map(|c| b.apply(eigenfields.column(c).as_slice())).collect();
    let mut orthonormality_residual: f64 = 0.0;
    for i in 0..count {
        for j in 0..count {
            let ip = numeric::dot(eigenfields.column(i).as_slice(), &bx[j]);
            let target = if i == j { 1.0 } else { 0.0 };
            orthonormality_residual = orthonormality_residual.max((ip - target).abs());
        }
    }
    let l_norm = (0..size).map(|r| l.row(r).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let eigen_residual = (0..count)
        .into_par_iter()
        .map(|c| {
            let x = eigenfields.column(c);
            let lx = l.apply(x.as_slice());
            let r: Vec<f64> = lx.iter().zip(&bx[c]).map(|(a, b)| a - values[c] * b).collect();
            numeric::norm2(&r) / (l_norm * numeric::norm2(x.as_slice()))
        })
        .reduce(|| 0.0, f64::max);

    let nodes = size / dim;
    let mut by_node = vec![0.0; size * count];
    for node in 0..nodes {
        for n in 0..count {
            for a in 0..dim {
                by_node[(node * count + n) * dim + a] = eigenfields[(node * dim + a, n)];
            }
        }
    }
    let decomposition = SpectralDecomposition {
        by_node,
        eigenvalues,
        eigenfields,
        orthonormality_residual,
        eigen_residual,
        full_dimension: size,
        dim,
        mass: b.clone(),
    };
    decomposition.validate(opts.tolerance)?;
    Ok(decomposition)
}

/// Number of leading values to keep so that the cluster containing index `k − 1` is whole.
fn cluster_end(sorted: &[f64], k: usize) -> usize {
    let mut end = k.min(sorted.len());
    while end < sorted.len() && same_cluster(sorted[end - 1], sorted[end]) {
        end += 1;
    }
    end
}

/// Flip `x` so its first entry of significant magnitude is positive.
fn canonicalize_sign(x: &mut [f64]) {
    let peak = numeric::max_abs(x);
    if let Some(first) = x.iter().find(|v| v.abs() > 1e-3 * peak) {
        if *first < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Thick-restart Lanczos with full reorthogonalization for the `want`
/// smallest eigenpairs of a symmetric operator.
fn lanczos_smallest(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    size: usize,
    want: usize,
    opts: &SpectralOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = size.min((2 * want + 20).max(60));
    let keep = (want + (m - want) / 2).min(m - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..size).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut next = random(&mut rng);
    let mut worst = f64::INFINITY;
    for restart in 0..opts.max_restarts {
        while basis.len() < m {
            let mut norm = orthogonalize(&mut next, &basis);
            if norm < 1e-10 {
                next = random(&mut rng);
                norm = orthogonalize(&mut next, &basis);
            }
            next.iter_mut().for_each(|v| *v /= norm);
            let image = apply(&next);
            basis.push(std::mem::replace(&mut next, image.clone()));
            images.push(image);
        }
        // Krylov continuation direction, orthogonal to the whole basis
        let mut residual = images[m - 1].clone();
        orthogonalize(&mut residual, &basis);

        let h = DMatrix::from_fn(m, m, |i, j| 0.5 * (numeric::dot(&basis[i], &images[j]) + numeric::dot(&basis[j], &images[i])));
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let combine = |vs: &[Vec<f64>], c: usize| -> Vec<f64> {
            let mut out = vec![0.0; size];
            for (j, v) in vs.iter().enumerate() {
                let coef = eig.eigenvectors[(j, order[c])];
                out.iter_mut().zip(v).for_each(|(o, x)| *o += coef * x);
            }
            out
        };
        let ritz: Vec<Vec<f64>> = (0..keep).into_par_iter().map(|c| combine(&basis, c)).collect();
        let ritz_images: Vec<Vec<f64>> = (0..keep).into_par_iter().map(|c| combine(&images, c)).collect();
        let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        worst = (0..want)
            .map(|c| {
                let theta = eig.eigenvalues[order[c]];
                let r: Vec<f64> = ritz_images[c].iter().zip(&ritz[c]).map(|(a, x)| a - theta * x).collect();
                numeric::norm2(&r) / scale
            })
            .fold(0.0, f64::max);
        if worst <= 0.01 * opts.tolerance || m == size {
            let values: Vec<f64> = (0..want).map(|c| eig.eigenvalues[order[c]]).collect();
            let vectors = DMatrix::from_fn(size, want, |r, c| ritz[c][r]);
            return Ok((values, vectors));
        }
        if restart + 1 == opts.max_restarts {
            break;
        }
        basis = ritz;
        images = ritz_images;
        next = residual;
    }
    Err(StatlapError::ConvergenceFailure { iterations: opts.max_restarts, residual: worst })
}

/// Two passes of Gram-Schmidt against orthonormal `basis`; returns the remaining norm.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for q in basis {
            let c = numeric::dot(v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    }
    numeric::norm2(v)
}

/// `p_t(x, y): T_yM → T_xM` as a `d × d` matrix.
#[derive(Debug, Clone)]
pub struct HeatKernelBlock {
    pub target: usize,
    pub source: usize,
    pub t: f64,
    pub matrix: DMatrix<f64>,
    pub truncation: TruncationReport,
}

/// `p_t(x, y) = Σ e^{−λt} X_n(x) (g_y X_n(y))ᵀ`.
pub fn heat_kernel_block(spec: &SpectralDecomposition, md: &ManifoldData, t: f64, x: usize, y: usize) -> Result<HeatKernelBlock> {
    check_time(t)?;
    let (w, truncation) = spec.truncated_weights(t);
    Ok(HeatKernelBlock { target: x, source: y, t, matrix: kernel_matrix(spec, md, &w, x, y), truncation })
}

/// `Σ w_n X_n(x) (g_y X_n(y))ᵀ` for precomputed weights, such as those of
/// [`SpectralDecomposition::truncated_weights`].
pub fn kernel_matrix(spec: &SpectralDecomposition, md: &ManifoldData, w: &[f64], x: usize, y: usize) -> DMatrix<f64> {
    let d = spec.dim;
    let gy = md.g.at(y);
    let (vx, vy) = (spec.values_at(x), spec.values_at(y));
    let mut p = vec![0.0; d * d];
    let mut lowered = vec![0.0; d];
    for (n, &wn) in w.iter().enumerate() {
        if wn == 0.0 {
            continue;
        }
        let yn = &vy[n * d..(n + 1) * d];
        for (b, lb) in lowered.iter_mut().enumerate() {
            *lb = (0..d).map(|c| gy[b * d + c] * yn[c]).sum();
        }
        for a in 0..d {
            let xa = wn * vx[n * d + a];
            for (b, lb) in lowered.iter().enumerate() {
                p[a * d + b] += xa * lb;
            }
        }
    }
    numeric::square(&p, d)
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(StatlapError::InvalidInput(format!("heat time must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

/// `e^{−tΔ} X = Σ e^{−λt} (X_nᵀ B X) X_n`.
pub fn heat_apply(spec: &SpectralDecomposition, t: f64, x: &[f64]) -> Result<(Vec<f64>, TruncationReport)> {
    check_time(t)?;
    if x.len() != spec.full_dimension {
        return Err(StatlapError::ShapeMismatch(format!("field of length {} for {} unknowns", x.len(), spec.full_dimension)));
    }
    let (w, report) = spec.truncated_weights(t);
    let bx = spec.mass.apply(x);
    let coef: Vec<f64> = (0..spec.len())
        .map(|n| if w[n] == 0.0 { 0.0 } else { w[n] * numeric::dot(spec.eigenfields.column(n).as_slice(), &bx) })
        .collect();
    let out = &spec.eigenfields * DVector::from_vec(coef);
    Ok((out.iter().copied().collect(), report))
}

/// `‖A‖² = tr(g_y⁻¹ Aᵀ g_x A)` for `A: T_yM → T_xM`.
pub fn hs_norm_squared(a: &DMatrix<f64>, md: &ManifoldData, x: usize, y: usize) -> f64 {
    let d = a.nrows();
    let gx = numeric::square(md.g.at(x), d);
    let gy_inv = numeric::square(md.g_inv.at(y), d);
    (gy_inv * a.transpose() * gx * a).trace()
}

/// Both evaluations of the squared vector diffusion distance.
#[derive(Debug, Clone, Copy)]
pub struct DistanceForms {
    pub trace_form: f64,
    pub double_sum: f64,
    pub distance: f64,
    pub truncation: TruncationReport,
}

fn trace_form(spec: &SpectralDecomposition, md: &ManifoldData, w: &[f64], x: usize, y: usize) -> (f64, f64) {
    let pxx = hs_norm_squared(&kernel_matrix(spec, md, w, x, x), md, x, x);
    let pyy = hs_norm_squared(&kernel_matrix(spec, md, w, y, y), md, y, y);
    let pxy = hs_norm_squared(&kernel_matrix(spec, md, w, x, y), md, x, y);
    (pxx + pyy - 2.0 * pxy, pxx.abs() + pyy.abs())
}

/// `g_x X_n(x)` for the retained modes, mode-major.
fn lowered_modes(spec: &SpectralDecomposition, md: &ManifoldData, retained: usize, x: usize) -> Vec<f64> {
    let d = spec.dim;
    let (g, v) = (md.g.at(x), spec.values_at(x));
    (0..retained * d)
        .map(|i| {
            let (n, a) = (i / d, i % d);
            (0..d).map(|b| g[a * d + b] * v[n * d + b]).sum()
        })
        .collect()
}

/// `Σ_n Σ_m w_n w_m (G_x[n][m] − G_y[n][m])²` with `G_x[n][m] = g_x(X_n(x), X_m(x))`.
fn double_sum(spec: &SpectralDecomposition, md: &ManifoldData, w: &[f64], retained: usize, x: usize, y: usize) -> f64 {
    let d = spec.dim;
    let (vx, vy) = (spec.values_at(x), spec.values_at(y));
    let (lx, ly) = (lowered_modes(spec, md, retained, x), lowered_modes(spec, md, retained, y));
    let rows: Vec<f64> = (0..retained)
        .map(|n| {
            let (lxn, lyn) = (&lx[n * d..(n + 1) * d], &ly[n * d..(n + 1) * d]);
            let mut row = 0.0;
            for m in 0..retained {
                let gx: f64 = (0..d).map(|a| lxn[a] * vx[m * d + a]).sum();
                let gy: f64 = (0..d).map(|a| lyn[a] * vy[m * d + a]).sum();
                let diff = gx - gy;
                row += w[m] * diff * diff;
            }
            w[n] * row
        })
        .collect();
    numeric::pairwise_sum(&rows)
}

/// Vector diffusion distance `d_t(x, y)`, evaluated in trace form and
/// double-sum form, which must agree.
pub fn vector_diffusion_distance(spec: &SpectralDecomposition, md: &ManifoldData, t: f64, x: usize, y: usize) -> Result<DistanceForms> {
    if !(t.is_finite() && t > 0.0) {
        return Err(StatlapError::InvalidInput(format!("diffusion time must be positive, got {t}")));
    }
    let (w, truncation) = spec.truncated_weights(t);
    let (tf, scale) = trace_form(spec, md, &w, x, y);
    let ds = double_sum(spec, md, &w, truncation.retained, x, y);
    compare_forms(tf, ds, scale)?;
    Ok(DistanceForms { trace_form: tf, double_sum: ds, distance: tf.max(0.0).sqrt(), truncation })
}

fn compare_forms(trace: f64, double: f64, scale: f64) -> Result<()> {
    let tolerance = DISTANCE_FORM_TOLERANCE * scale.max(1e-300);
    let discrepancy = (trace - double).abs();
    if discrepancy > tolerance || !discrepancy.is_finite() {
        return Err(StatlapError::FormMismatch { what: "vector diffusion distance", discrepancy, tolerance });
    }
    Ok(())
}

/// Pairwise distances between `nodes`, trace form everywhere and the double
/// sum checked on a deterministic subsample of at most `checks` pairs.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub nodes: Vec<usize>,
    pub t: f64,
    pub values: DMatrix<f64>,
    /// Largest trace/double-sum gap relative to scale over the checked pairs.
    pub form_discrepancy: f64,
    pub checked_pairs: usize,
    pub truncation: TruncationReport,
}

pub fn vdd_matrix(spec: &SpectralDecomposition, md: &ManifoldData, t: f64, nodes: &[usize], checks: usize) -> Result<DistanceMatrix> {
    if !(t.is_finite() && t > 0.0) {
        return Err(StatlapError::InvalidInput(format!("diffusion time must be positive, got {t}")));
    }
    let (w, truncation) = spec.truncated_weights(t);
    let m = nodes.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let stride = pairs.len().div_ceil(checks.max(1)).max(1);
    let results: Vec<(f64, Option<f64>)> = pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(i, j))| {
            let (tf, scale) = trace_form(spec, md, &w, nodes[i], nodes[j]);
            if idx % stride != 0 {
                return Ok((tf, None));
            }
            let ds = double_sum(spec, md, &w, truncation.retained, nodes[i], nodes[j]);
            compare_forms(tf, ds, scale)?;
            Ok((tf, Some((tf - ds).abs() / scale.max(1e-300))))
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::<f64>::zeros(m, m);
    let mut form_discrepancy: f64 = 0.0;
    let mut checked_pairs = 0;
    for (&(i, j), (tf, gap)) in pairs.iter().zip(results) {
        let d = tf.max(0.0).sqrt();
        values[(i, j)] = d;
        values[(j, i)] = d;
        if let Some(g) = gap {
            form_discrepancy = form_discrepancy.max(g);
            checked_pairs += 1;
        }
    }
    Ok(DistanceMatrix { nodes: nodes.to_vec(), t, values, form_discrepancy, checked_pairs, truncation })
}

/// `‖p_t(x, y)‖_HS` next to its bound `Σ e^{−λt} |X_n(x)|_g |X_n(y)|_g`.
pub fn spectral_bound(spec: &SpectralDecomposition, md: &ManifoldData, t: f64, x: usize, y: usize) -> Result<(f64, f64)> {
    let block = heat_kernel_block(spec, md, t, x, y)?;
    let (w, _) = spec.truncated_weights(t);
    let norm = hs_norm_squared(&block.matrix, md, x, y).max(0.0).sqrt();
    let bound: f64 = w
        .iter()
        .enumerate()
        .map(|(n, wn)| {
            let (a, b) = (spec.value_at(n, x), spec.value_at(n, y));
            wn * md.inner(x, a, a).sqrt() * md.inner(y, b, b).sqrt()
        })
        .sum();
    Ok((norm, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Symmetry, TensorField};
    use crate::geometry::Potential;
    use crate::grid::Grid;
    use crate::models::SyntheticSpec;
    use crate::operators::assemble_weak_laplacian;
    use crate::probe::smooth_vector;
    use std::f64::consts::{PI, TAU};
    use std::sync::Arc;

    fn flat(points: Vec<usize>, periods: Vec<f64>) -> ManifoldData {
        let grid = Arc::new(Grid::new(points, periods).unwrap());
        let d = grid.dim();
        let g = TensorField::from_fn(grid.clone(), 2, Symmetry::Symmetric, |_, out| {
            for i in 0..d {
                out[i * d + i] = 1.0;
            }
        })
        .unwrap();
        ManifoldData::new(g, TensorField::zeros(grid, 3, Symmetry::FullySymmetric), Potential::Zero, 1.0).unwrap()
    }

    fn decompose(md: &ManifoldData, opts: &SpectralOptions) -> SpectralDecomposition {
        let weak = assemble_weak_laplacian(md);
        eigendecompose(&weak.stiffness, &weak.mass.vector_mass, md.dim(), opts).unwrap()
    }

    fn flat_1d_oracle(n: usize) -> Vec<f64> {
        let h = TAU / n as f64;
        let mut v: Vec<f64> = (0..n).map(|k| 4.0 / (h * h) * (PI * k as f64 / n as f64).sin().powi(2)).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn flat_circle_spectrum_matches_fourier() {
        let md = flat(vec![64], vec![TAU]);
        let spec = decompose(&md, &SpectralOptions::default());
        let oracle = flat_1d_oracle(64);
        for (a, b) in spec.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(spec.eigenvalues[0], 0.0);
        let x0 = spec.eigenfield(0);
        assert!(x0.iter().all(|v| (v - x0[0]).abs() < 1e-10 && *v > 0.0));
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let md = SyntheticSpec::new(vec![10, 10], vec![TAU, 5.0]).manifold(1.0).unwrap();
        let dense = decompose(&md, &SpectralOptions { solver: Solver::Dense, ..SpectralOptions::with_k(8) });
        let iter = decompose(&md, &SpectralOptions { solver: Solver::Lanczos, ..SpectralOptions::with_k(8) });
        assert!(iter.len() >= 8);
        for n in 0..8 {
            assert!((dense.eigenvalues[n] - iter.eigenvalues[n]).abs() < 1e-8 * dense.eigenvalues[n].max(1.0));
        }
    }

    #[test]
    fn truncation_keeps_whole_clusters() {
        let md = flat(vec![16], vec![TAU]);
        // the first nonzero level is doubly degenerate
        let spec = decompose(&md, &SpectralOptions::with_k(2));
        assert_eq!(spec.len(), 3);
        assert!(same_cluster(spec.eigenvalues[1], spec.eigenvalues[2]));
    }

    #[test]
    fn heat_identity_and_eigenfield_decay() {
        let md = SyntheticSpec::new(vec![8, 8], vec![TAU, 5.0]).manifold(1.0).unwrap();
        let spec = decompose(&md, &SpectralOptions::default());
        let x = smooth_vector(&md.grid, 3);
        let (y, report) = heat_apply(&spec, 0.0, &x).unwrap();
        assert!(numeric::max_abs_diff(&x, &y) < 1e-8 * numeric::max_abs(&x));
        assert!(report.within_tolerance());
        let x5 = spec.eigenfield(5);
        let (y, _) = heat_apply(&spec, 0.3, &x5).unwrap();
        let decay = (-spec.eigenvalues[5] * 0.3).exp();
        assert!(x5.iter().zip(&y).all(|(a, b)| (a * decay - b).abs() < 1e-8 * numeric::max_abs(&x5)));
    }

    #[test]
    fn semigroup_and_kernel_quadrature() {
        let md = SyntheticSpec::new(vec![8, 8], vec![TAU, 5.0]).manifold(0.5).unwrap();
        let spec = decompose(&md, &SpectralOptions::default());
        let x = smooth_vector(&md.grid, 7);
        let (once, _) = heat_apply(&spec, 0.05, &x).unwrap();
        let (twice, _) = heat_apply(&spec, 0.05, &once).unwrap();
        let (double, _) = heat_apply(&spec, 0.1, &x).unwrap();
        assert!(numeric::max_abs_diff(&twice, &double) < 1e-9 * numeric::max_abs(&x));

        let vol = md.grid.cell_volume();
        let target = 11;
        let mut acc = DVector::<f64>::zeros(2);
        for y in 0..md.len() {
            let p = heat_kernel_block(&spec, &md, 0.05, target, y).unwrap().matrix;
            acc += p * DVector::from_column_slice(&x[y * 2..y * 2 + 2]) * (md.rho.values()[y] * vol);
        }
        for a in 0..2 {
            assert!((acc[a] - once[target * 2 + a]).abs() < 1e-7 * numeric::max_abs(&x));
        }
    }

    #[test]
    fn kernel_blocks_are_metric_adjoints() {
        let md = SyntheticSpec::new(vec![8, 8], vec![TAU, 5.0]).manifold(1.0).unwrap();
        let spec = decompose(&md, &SpectralOptions::default());
        let (x, y) = (3, 40);
        let pxy = heat_kernel_block(&spec, &md, 0.2, x, y).unwrap().matrix;
        let pyx = heat_kernel_block(&spec, &md, 0.2, y, x).unwrap().matrix;
        let gx = numeric::square(md.g.at(x), 2);
        let gy_inv = numeric::square(md.g_inv.at(y), 2);
        let adj = gy_inv * pxy.transpose() * gx;
        assert!((adj - &pyx).amax() < 1e-8 * pyx.amax().max(1.0));
    }

    #[test]
    fn long_time_kernel_is_zero_mode_projection() {
        let md = flat(vec![8, 6], vec![TAU, 3.0]);
        let spec = decompose(&md, &SpectralOptions::default());
        let zero_modes = spec.eigenvalues.iter().filter(|&&l| l == 0.0).count();
        assert_eq!(zero_modes, 2);
        let p = heat_kernel_block(&spec, &md, 200.0, 1, 30).unwrap().matrix;
        let sv = p.singular_values();
        assert!(sv.iter().filter(|&&s| s > 1e-8).count() <= zero_modes);
    }

    #[test]
    fn distance_forms_agree_and_axioms_hold() {
        let md = SyntheticSpec::new(vec![8, 8], vec![TAU, 5.0]).manifold(1.0).unwrap();
        let spec = decompose(&md, &SpectralOptions::default());
        let t = 0.05;
        assert_eq!(vector_diffusion_distance(&spec, &md, t, 9, 9).unwrap().distance, 0.0);
        let ab = vector_diffusion_distance(&spec, &md, t, 2, 50).unwrap();
        let ba = vector_diffusion_distance(&spec, &md, t, 50, 2).unwrap();
        assert!((ab.distance - ba.distance).abs() < 1e-12 * ab.distance.max(1.0));
        let nodes: Vec<usize> = (0..md.len()).step_by(3).collect();
        let dm = vdd_matrix(&spec, &md, t, &nodes, 100).unwrap();
        assert!(dm.form_discrepancy <= DISTANCE_FORM_TOLERANCE);
        let m = nodes.len();
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    assert!(dm.values[(i, k)] <= dm.values[(i, j)] + dm.values[(j, k)] + 1e-9);
                }
            }
        }
        let (norm, bound) = spectral_bound(&spec, &md, t, 2, 50).unwrap();
        assert!(norm <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn options_reject_unknown_keys() {
        assert!(serde_json::from_str::<SpectralOptions>(r#"{"k": 3, "solver": "dense"}"#).is_ok());
        assert!(serde_json::from_str::<SpectralOptions>(r#"{"k": 3, "shift": 1.0}"#).is_err());
    }
}
