//! The invariant suite: every identity the operators, spectra and kernels
//! must satisfy, each reported with its numeric residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use statlap_core::geometry::{ManifoldData, Which};
use statlap_core::kernels::{
    gradient_inner_product, kernel_gram, kernel_value, kernel_value_checked, posterior_field, distance_from_gram,
    GramMatrix, KernelContext,
};
use statlap_core::numeric::{self, max_abs, max_abs_diff};
use statlap_core::operators::{
    apply_adjoint_strong, apply_covariant_derivative, apply_strong_laplacian, assemble_weak_laplacian,
    connection_laplacian_reference, directional_derivative, divergence_f, riemannian_divergence, WeakLaplacian,
};
use statlap_core::probe::{smooth_components, smooth_scalar, smooth_vector};
use statlap_core::spectral::{
    heat_apply, heat_kernel_block, kernel_matrix, spectral_bound, DistanceMatrix, SpectralDecomposition,
};

use crate::error::CliError;

/// Both residuals below this count as an exact identity in a convergence check.
pub const EXACT_FLOOR: f64 = 1e-12;
/// Expected residual ratio under grid halving, and the allowed deviation (25%).
pub const CONVERGENCE_RATIO: f64 = 4.0;
pub const CONVERGENCE_SLACK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// `residual ≤ tolerance`.
    Bound,
    /// `residual ≥ tolerance`.
    Floor,
    /// Ratio of coarse to fine residual near 4.
    Convergence,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn bound(name: &str, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            kind: CheckKind::Bound,
            residual,
            tolerance,
            pass: residual <= tolerance,
            coarse_residual: None,
            ratio: None,
            note: None,
        }
    }

    pub fn floor(name: &str, value: f64, floor: f64) -> Self {
        Check { kind: CheckKind::Floor, pass: value >= floor, ..Check::bound(name, value, floor) }
    }

    /// Residuals on the configured grid and on the grid refined by two.
    pub fn convergence(name: &str, coarse: f64, fine: f64) -> Self {
        let ratio = coarse / fine;
        let exact = coarse < EXACT_FLOOR && fine < EXACT_FLOOR;
        Check {
            name: name.into(),
            kind: CheckKind::Convergence,
            residual: fine,
            tolerance: CONVERGENCE_SLACK,
            pass: exact || (ratio - CONVERGENCE_RATIO).abs() <= CONVERGENCE_SLACK,
            coarse_residual: Some(coarse),
            ratio: if exact { None } else { Some(ratio) },
            note: exact.then(|| "exact".to_string()),
        }
    }

    pub fn skipped(name: &str, reason: &str) -> Self {
        Check {
            name: name.into(),
            kind: CheckKind::Skipped,
            residual: 0.0,
            tolerance: 0.0,
            pass: true,
            coarse_residual: None,
            ratio: None,
            note: Some(reason.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Seed for the `i`-th probe drawn under the run seed.
pub fn probe_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i)
}

fn relative(err: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

pub fn geometry_checks(md: &ManifoldData) -> Vec<Check> {
    let basic = md.check_invariants();
    let mut pair: f64 = 0.0;
    let mut self_dual: f64 = 0.0;
    let (g, gd, lc, k) = (md.gamma.values(), md.gamma_dual.values(), md.levi_civita.values(), md.k.values());
    for i in 0..g.len() {
        pair = pair.max((gd[i] - g[i] - k[i]).abs());
        self_dual = self_dual.max((0.5 * (g[i] + gd[i]) - lc[i]).abs());
    }
    let scale = max_abs(g).max(max_abs(gd)).max(max_abs(lc));
    vec![
        Check::bound("geometry.metric-inverse", basic.inverse_residual, 1e-10),
        Check::bound("geometry.dual-minus-primal-is-difference-tensor", relative(pair, scale), 1e-12),
        Check::bound("geometry.pair-average-is-levi-civita", relative(self_dual, scale), 1e-12),
        Check::floor("geometry.density-positive", basic.min_rho, f64::MIN_POSITIVE),
    ]
}

/// Residuals of `div_f X = div X − Xf` and `div_f(hX) = h div_f X + Xh`.
fn lemma_residuals(md: &ManifoldData, seed: u64) -> (f64, f64) {
    let d = md.dim();
    let x = smooth_vector(&md.grid, probe_seed(seed, 1));
    let h = smooth_scalar(&md.grid, probe_seed(seed, 2));
    let divf = divergence_f(md, &x);
    let div = riemannian_divergence(md, &x);
    let xf = directional_derivative(md, &x, md.f.values());
    let r1 = (0..md.len()).map(|i| (divf[i] - div[i] + xf[i]).abs()).fold(0.0, f64::max);
    let hx: Vec<f64> = (0..md.len() * d).map(|i| h[i / d] * x[i]).collect();
    let divhx = divergence_f(md, &hx);
    let xh = directional_derivative(md, &x, &h);
    let r2 = (0..md.len()).map(|i| (divhx[i] - h[i] * divf[i] - xh[i]).abs()).fold(0.0, f64::max);
    (r1, r2)
}

fn weak_strong_gap(md: &ManifoldData, weak: &WeakLaplacian, seed: u64) -> Result<f64, CliError> {
    let x = smooth_vector(&md.grid, probe_seed(seed, 3));
    let strong = apply_strong_laplacian(md, &x).map_err(|e| CliError::numerical("operators.strong-forms", e))?;
    Ok(max_abs_diff(&weak.apply(&x), &strong.proof_form) / max_abs(&x))
}

fn reduction_gap(md: &ManifoldData, seed: u64) -> Result<f64, CliError> {
    let x = smooth_vector(&md.grid, probe_seed(seed, 4));
    let strong = apply_strong_laplacian(md, &x).map_err(|e| CliError::numerical("operators.strong-forms", e))?;
    Ok(max_abs_diff(&strong.proof_form, &connection_laplacian_reference(md, &x)) / max_abs(&x))
}

/// Manifolds the operator suite runs on: the configured one, its twofold
/// refinement, and the same metric with `C = 0` and `f = 0` on both grids.
pub struct OperatorInputs<'a> {
    pub md: &'a ManifoldData,
    pub weak: &'a WeakLaplacian,
    pub refined: Option<&'a ManifoldData>,
    pub reduced: &'a ManifoldData,
    pub reduced_refined: Option<&'a ManifoldData>,
    pub seed: u64,
}

pub fn operator_checks(inp: &OperatorInputs) -> Result<Vec<Check>, CliError> {
    let (md, weak, seed) = (inp.md, inp.weak, inp.seed);
    let mut out = Vec::new();
    out.push(Check::bound("operators.laplacian-symmetry", weak.stiffness.max_asymmetry(), 0.0));

    let mut total: f64 = 0.0;
    for i in 0..5 {
        let div = divergence_f(md, &smooth_vector(&md.grid, probe_seed(seed, 10 + i)));
        let abs: Vec<f64> = div.iter().map(|v| v.abs()).collect();
        let scale = md.grid.integrate(&abs, md.rho.values());
        total = total.max(relative(md.grid.integrate(&div, md.rho.values()).abs(), scale));
    }
    out.push(Check::bound("operators.total-weighted-divergence", total, 1e-12));

    let coarse = lemma_residuals(md, seed);
    match inp.refined {
        Some(fine_md) => {
            let fine = lemma_residuals(fine_md, seed);
            out.push(Check::convergence("operators.divergence-minus-drift", coarse.0, fine.0));
            out.push(Check::convergence("operators.divergence-product-rule", coarse.1, fine.1));
        }
        None => {
            out.push(Check::skipped("operators.divergence-minus-drift", "grid cannot be refined"));
            out.push(Check::skipped("operators.divergence-product-rule", "grid cannot be refined"));
        }
    }

    let rows = weak.derivative.shape().0 / md.len();
    let mut pairing: f64 = 0.0;
    for i in 0..20 {
        let x = smooth_vector(&md.grid, probe_seed(seed, 100 + i));
        let w = smooth_components(&md.grid, rows, probe_seed(seed, 200 + i));
        let lhs = weak.derivative_pairing(&x, &w);
        let rhs = weak.mass.vector_inner(&x, &weak.apply_adjoint(&w));
        let norms = weak.energy(&x, &x).max(0.0).sqrt()
            * numeric::dot(&w, &weak.mass.oriented_tensor_mass.apply(&w)).max(0.0).sqrt();
        pairing = pairing.max(relative((lhs - rhs).abs(), norms));
    }
    out.push(Check::bound("operators.adjoint-pairing", pairing, 1e-10));

    let x = smooth_vector(&md.grid, probe_seed(seed, 5));
    let (p, q) = (apply_covariant_derivative(md, Which::Primal, &x), apply_covariant_derivative(md, Which::Dual, &x));
    let d = md.dim();
    let mut kx = vec![0.0; md.len() * d * d];
    for node in 0..md.len() {
        for i in 0..d {
            for k in 0..d {
                kx[(node * d + i) * d + k] = (0..d).map(|l| md.k.get3(node, k, i, l) * x[node * d + l]).sum();
            }
        }
    }
    let diff: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
    out.push(Check::bound(
        "operators.dual-derivative-difference",
        relative(max_abs_diff(&diff, &kx), max_abs(&p).max(max_abs(&q))),
        1e-12,
    ));

    let coarse = weak_strong_gap(md, weak, seed)?;
    match inp.refined {
        Some(fine_md) => {
            let fine = weak_strong_gap(fine_md, &assemble_weak_laplacian(fine_md), seed)?;
            out.push(Check::convergence("operators.weak-strong-consistency", coarse, fine));
        }
        None => out.push(Check::skipped("operators.weak-strong-consistency", "grid cannot be refined")),
    }

    let strong = apply_strong_laplacian(md, &x).map_err(|e| CliError::numerical("operators.strong-forms", e))?;
    out.push(Check::bound("operators.strong-displayed-forms", strong.discrepancy, strong.tolerance));

    let coarse = reduction_gap(inp.reduced, seed)?;
    match inp.reduced_refined {
        Some(fine_md) => {
            let fine = reduction_gap(fine_md, seed)?;
            out.push(Check::convergence("operators.connection-laplacian-reduction", coarse, fine));
        }
        None => out.push(Check::skipped("operators.connection-laplacian-reduction", "grid cannot be refined")),
    }

    let shifted = md.with_shifted_potential(1.0).map_err(|e| CliError::numerical("operators.potential-shift", e))?;
    let weak_shifted = assemble_weak_laplacian(&shifted);
    let a = weak.apply(&x);
    let b = weak_shifted.apply(&x);
    let strong_shifted =
        apply_strong_laplacian(&shifted, &x).map_err(|e| CliError::numerical("operators.potential-shift", e))?;
    let shift = relative(max_abs_diff(&a, &b), max_abs(&a))
        .max(relative(max_abs_diff(&strong.proof_form, &strong_shifted.proof_form), max_abs(&strong.proof_form)));
    out.push(Check::bound("operators.potential-shift-invariance", shift, 1e-12));

    let zero_vec = vec![0.0; md.len() * d];
    let zero_central = vec![0.0; md.len() * d * d];
    let zero_oriented = vec![0.0; weak.derivative.shape().0];
    let zero_strong =
        apply_strong_laplacian(md, &zero_vec).map_err(|e| CliError::numerical("operators.zero-field", e))?;
    let zero = max_abs(&zero_strong.proof_form)
        .max(max_abs(&weak.apply(&zero_vec)))
        .max(max_abs(&weak.apply_adjoint(&zero_oriented)))
        .max(max_abs(&apply_adjoint_strong(md, &zero_central)));
    out.push(Check::bound("operators.zero-field", zero, 0.0));
    Ok(out)
}

/// Everything the spectral suite consumes.
pub struct SpectralInputs<'a> {
    pub md: &'a ManifoldData,
    pub spec: &'a SpectralDecomposition,
    pub tolerance: f64,
    pub t: f64,
    pub distances: &'a DistanceMatrix,
    pub seed: u64,
}

pub fn spectral_checks(inp: &SpectralInputs) -> Result<Vec<Check>, CliError> {
    let (md, spec, t) = (inp.md, inp.spec, inp.t);
    let mut out = Vec::new();
    let min = spec.eigenvalues.first().copied().unwrap_or(0.0);
    out.push(Check::floor("spectral.positive-semidefinite", min, -1e-10));
    out.push(Check::bound("spectral.b-orthonormality", spec.orthonormality_residual, inp.tolerance));
    out.push(Check::bound("spectral.eigen-residual", spec.eigen_residual, inp.tolerance));

    let map = |e| CliError::numerical("spectral.heat", e);
    let x = smooth_vector(&md.grid, probe_seed(inp.seed, 300));
    let (once, _) = heat_apply(spec, t, &x).map_err(map)?;
    let (twice, _) = heat_apply(spec, t, &once).map_err(map)?;
    let (double, _) = heat_apply(spec, 2.0 * t, &x).map_err(map)?;
    out.push(Check::bound("spectral.semigroup", relative(max_abs_diff(&twice, &double), max_abs(&x)), 1e-8));

    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed(inp.seed, 301));
    let d = md.dim();
    let mut adjoint: f64 = 0.0;
    let mut bound_ratio: f64 = 0.0;
    let (w, _) = spec.truncated_weights(t);
    for _ in 0..8 {
        let (a, b) = (rng.random_range(0..md.len()), rng.random_range(0..md.len()));
        let pab = kernel_matrix(spec, md, &w, a, b);
        let pba = kernel_matrix(spec, md, &w, b, a);
        let ga = numeric::square(md.g.at(a), d);
        let gb_inv = numeric::square(md.g_inv.at(b), d);
        let adj = gb_inv * pab.transpose() * ga;
        // Off-diagonal blocks can be far smaller than the sums producing them.
        let diag = (kernel_matrix(spec, md, &w, a, a).amax() * kernel_matrix(spec, md, &w, b, b).amax()).sqrt();
        adjoint = adjoint.max(relative((adj - &pba).amax(), diag.max(pba.amax()).max(pab.amax())));
        let (norm, bound) = spectral_bound(spec, md, t, a, b).map_err(map)?;
        bound_ratio = bound_ratio.max(relative(norm, bound));
    }
    out.push(Check::bound("spectral.kernel-metric-adjoint", adjoint, 1e-8));
    out.push(Check::bound("spectral.kernel-norm-bound", bound_ratio, 1.0 + 1e-12));

    let target = rng.random_range(0..md.len());
    let vol = md.grid.cell_volume();
    let mut integrated = vec![0.0; d];
    for y in 0..md.len() {
        let p = heat_kernel_block(spec, md, t, target, y).map_err(map)?.matrix;
        let weight = md.rho.values()[y] * vol;
        for a in 0..d {
            integrated[a] += weight * (0..d).map(|b| p[(a, b)] * x[y * d + b]).sum::<f64>();
        }
    }
    let quad = max_abs_diff(&integrated, &once[target * d..(target + 1) * d]);
    out.push(Check::bound("spectral.kernel-quadrature", relative(quad, max_abs(&x)), 1e-8));

    let dm = inp.distances;
    let m = dm.nodes.len();
    out.push(Check::bound("spectral.vdd-trace-vs-double-sum", dm.form_discrepancy, 1e-8));
    let mut asym: f64 = 0.0;
    let mut diag: f64 = 0.0;
    for i in 0..m {
        diag = diag.max(dm.values[(i, i)].abs());
        for j in 0..m {
            asym = asym.max((dm.values[(i, j)] - dm.values[(j, i)]).abs());
        }
    }
    out.push(Check::bound("spectral.vdd-symmetry", asym, 1e-12));
    out.push(Check::bound("spectral.vdd-zero-diagonal", diag, 0.0));
    out.push(Check::bound("spectral.vdd-triangle", triangle_violation(&dm.values, 200, &mut rng), 1e-9));
    Ok(out)
}

/// Largest `d(a,c) − d(a,b) − d(b,c)` over random triples, clamped at zero.
pub fn triangle_violation(dist: &nalgebra::DMatrix<f64>, triples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let m = dist.nrows();
    let mut worst: f64 = 0.0;
    for _ in 0..triples {
        let (a, b, c) = (rng.random_range(0..m), rng.random_range(0..m), rng.random_range(0..m));
        worst = worst.max(dist[(a, c)] - dist[(a, b)] - dist[(b, c)]);
    }
    worst
}

pub struct KernelInputs<'a> {
    pub ctx: KernelContext<'a>,
    pub samples: &'a [f64],
    pub times: &'a [f64],
    pub double_integral: bool,
    pub seed: u64,
}

/// Budget, in node pairs times retained modes, for the double-integral form.
pub const DOUBLE_INTEGRAL_BUDGET: f64 = 2e8;

pub fn kernel_checks(inp: &KernelInputs) -> Result<(Vec<Check>, Vec<GramMatrix>), CliError> {
    let ctx = &inp.ctx;
    let map = |name: &'static str| move |e| CliError::numerical(name, e);
    let mut out = Vec::new();
    let mut norm: f64 = 0.0;
    for &x in inp.samples {
        let pf = posterior_field(ctx.model, ctx.md, ctx.prior, x).map_err(map("kernels.posterior"))?;
        norm = norm.max((ctx.md.grid.integrate(&pf.values, ctx.md.rho.values()) - 1.0).abs());
    }
    out.push(Check::bound("kernels.posterior-normalization", norm, 1e-10));

    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed(inp.seed, 400));
    let mut grams = Vec::new();
    for &t in inp.times {
        let gram = kernel_gram(ctx, inp.samples, t).map_err(map("kernels.gram"))?;
        let scale = gram.values.amax();
        out.push(Check::bound(&format!("kernels.gram-symmetry[t={t:?}]"), relative(gram.asymmetry, scale), 1e-12));
        out.push(Check::floor(&format!("kernels.gram-psd[t={t:?}]"), gram.min_eigenvalue, -1e-10));
        let m = gram.values.nrows();
        let dist = nalgebra::DMatrix::from_fn(m, m, |i, j| distance_from_gram(&gram.values, i, j));
        out.push(Check::bound(
            &format!("kernels.distance-triangle[t={t:?}]"),
            triangle_violation(&dist, 100, &mut rng),
            1e-9,
        ));
        grams.push(gram);
    }

    let (a, b) = (inp.samples[0], *inp.samples.get(1).unwrap_or(&inp.samples[0]));
    if !inp.double_integral {
        out.push(Check::skipped("kernels.single-vs-double-integral", "disabled in config"));
    } else {
        // The largest time retains the fewest modes and is the cheapest to integrate.
        let t = inp.times.iter().copied().fold(0.0, f64::max);
        let n = ctx.md.len() as f64;
        let cost = n * n * ctx.spec.truncated_weights(t).1.retained as f64;
        if cost > DOUBLE_INTEGRAL_BUDGET {
            out.push(Check::skipped("kernels.single-vs-double-integral", "grid too large for the quadratic form"));
        } else {
            let (_, gap) = kernel_value_checked(ctx, a, b, t).map_err(map("kernels.single-vs-double-integral"))?;
            out.push(Check::bound("kernels.single-vs-double-integral", gap, 1e-7).with_note(format!("t={t:?}")));
        }
    }

    if ctx.spec.is_complete() {
        let direct = gradient_inner_product(ctx, a, b).map_err(map("kernels.zero-time-limit"))?;
        let limit = kernel_value(ctx, a, b, 0.0).map_err(map("kernels.zero-time-limit"))?.value;
        out.push(Check::bound("kernels.zero-time-limit", relative((direct - limit).abs(), direct.abs().max(1.0)), 1e-7));
    } else {
        out.push(Check::skipped("kernels.zero-time-limit", "needs the full spectrum"));
    }
    Ok((out, grams))
}
