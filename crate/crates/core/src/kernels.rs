//! Bayesian posterior fields on the parameter grid and the diffusion kernel
//! `K_t(x, x′) = ∫ g(grad f(·|x), e^{−tΔ} grad f(·|x′)) ρ` on sample space.
//!
//! Priors are densities relative to `ρ`, so a posterior is
//! `f(θ|x) = p(x|θ) π(θ) / Z(x)` with `Z(x) = ∫ p(x|θ) π(θ) ρ(θ)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Result, StatlapError};
use crate::geometry::ManifoldData;
use crate::models::{ChartedModel, SamplePoint};
use crate::numeric;
use crate::spectral::{heat_apply, kernel_matrix, SpectralDecomposition, TruncationReport};

/// Smallest admissible evidence `Z(x)`.
pub const MIN_EVIDENCE: f64 = 1e-300;
/// Minimum effective support of a posterior, in nodes per axis.
pub const MIN_SUPPORT: usize = 8;
/// Agreement required between the single- and double-integral kernel forms.
pub const KERNEL_FORM_TOLERANCE: f64 = 1e-7;
/// Tolerance on the normalization of priors and posteriors.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-10;

/// `f(θ | x)` at every node.
#[derive(Debug, Clone)]
pub struct PosteriorField {
    pub sample: SamplePoint,
    pub values: Vec<f64>,
    pub evidence: f64,
}

/// The constant prior `1 / ∫ρ`.
pub fn uniform_prior(md: &ManifoldData) -> Vec<f64> {
    let total = md.grid.integrate(&vec![1.0; md.len()], md.rho.values());
    vec![1.0 / total; md.len()]
}

/// Rescale nonnegative values so they `ρ`-integrate to one.
pub fn normalize_prior(md: &ManifoldData, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != md.len() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(StatlapError::InvalidInput("prior must be finite and nonnegative at every node".into()));
    }
    let total = md.grid.integrate(values, md.rho.values());
    if total <= 0.0 {
        return Err(StatlapError::InvalidInput("prior vanishes everywhere".into()));
    }
    Ok(values.iter().map(|v| v / total).collect())
}

fn check_prior(md: &ManifoldData, prior: &[f64]) -> Result<()> {
    if prior.len() != md.len() {
        return Err(StatlapError::ShapeMismatch(format!("prior has {} values for {} nodes", prior.len(), md.len())));
    }
    if prior.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(StatlapError::InvalidInput("prior must be finite and nonnegative".into()));
    }
    let total = md.grid.integrate(prior, md.rho.values());
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(StatlapError::InvalidInput(format!("prior integrates to {total} against rho, expected 1")));
    }
    Ok(())
}

/// Posterior from node values of the likelihood `p(x | θ)`.
pub fn posterior_from_likelihood(md: &ManifoldData, sample: SamplePoint, likelihood: &[f64], prior: &[f64]) -> Result<PosteriorField> {
    check_prior(md, prior)?;
    if likelihood.len() != md.len() {
        return Err(StatlapError::ShapeMismatch(format!("likelihood has {} values for {} nodes", likelihood.len(), md.len())));
    }
    let joint: Vec<f64> = likelihood.iter().zip(prior).map(|(l, p)| l * p).collect();
    let evidence = md.grid.integrate(&joint, md.rho.values());
    if !(evidence >= MIN_EVIDENCE) {
        return Err(StatlapError::ZeroEvidence { evidence });
    }
    let values: Vec<f64> = joint.iter().map(|j| j / evidence).collect();
    check_resolution(md, &values)?;
    Ok(PosteriorField { sample, values, evidence })
}

/// Posterior of `model` given one observation `x`.
pub fn posterior_field(model: &ChartedModel, md: &ManifoldData, prior: &[f64], x: SamplePoint) -> Result<PosteriorField> {
    if model.grid().as_ref() != md.grid.as_ref() {
        return Err(StatlapError::ShapeMismatch("model chart and manifold grid differ".into()));
    }
    let likelihood = model.likelihood_field(x)?;
    posterior_from_likelihood(md, x, likelihood.values(), prior)
}

/// Participation ratio of the `ρ`-weighted posterior mass projected on each
/// axis; a hard error below [`MIN_SUPPORT`] nodes.
fn check_resolution(md: &ManifoldData, values: &[f64]) -> Result<()> {
    for axis in 0..md.dim() {
        let count = md.grid.points()[axis];
        let support = effective_support(md, values, axis);
        let required = MIN_SUPPORT.min(count);
        if support < required as f64 {
            return Err(StatlapError::UnderResolved { axis, support, required });
        }
    }
    Ok(())
}

pub fn effective_support(md: &ManifoldData, values: &[f64], axis: usize) -> f64 {
    let mut marginal = vec![0.0; md.grid.points()[axis]];
    for node in 0..md.len() {
        marginal[md.grid.index_along(node, axis)] += values[node] * md.rho.values()[node];
    }
    let total: f64 = numeric::pairwise_sum(&marginal);
    let squares: Vec<f64> = marginal.iter().map(|m| m * m).collect();
    total * total / numeric::pairwise_sum(&squares)
}

/// Raised gradient `(grad f)^i = g^{ij} D_j f`, flattened node-major.
pub fn posterior_gradient(md: &ManifoldData, pf: &PosteriorField) -> Vec<f64> {
    raised_gradient(md, &pf.values)
}

pub fn raised_gradient(md: &ManifoldData, values: &[f64]) -> Vec<f64> {
    let d = md.dim();
    let partials: Vec<Vec<f64>> = (0..d).map(|j| md.grid.central_diff(values, j)).collect();
    let mut out = vec![0.0; md.len() * d];
    for node in 0..md.len() {
        for i in 0..d {
            out[node * d + i] = (0..d).map(|j| md.g_inv.get2(node, i, j) * partials[j][node]).sum();
        }
    }
    out
}

/// Everything needed to evaluate `K_t` for one model, prior and spectrum.
#[derive(Clone, Copy)]
pub struct KernelContext<'a> {
    pub model: &'a ChartedModel,
    pub md: &'a ManifoldData,
    pub spec: &'a SpectralDecomposition,
    pub prior: &'a [f64],
}

impl KernelContext<'_> {
    pub fn gradient(&self, x: SamplePoint) -> Result<Vec<f64>> {
        Ok(posterior_gradient(self.md, &posterior_field(self.model, self.md, self.prior, x)?))
    }

    /// `⟨u, v⟩_B`.
    pub fn pairing(&self, u: &[f64], v: &[f64]) -> f64 {
        numeric::dot(u, &self.spec.mass().apply(v))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KernelValue {
    pub value: f64,
    pub truncation: TruncationReport,
}

/// Single-integral form `K_t(x, x′) = ⟨grad f_x, e^{−tΔ} grad f_{x′}⟩_B`.
pub fn kernel_value(ctx: &KernelContext, x: SamplePoint, x_prime: SamplePoint, t: f64) -> Result<KernelValue> {
    let gx = ctx.gradient(x)?;
    let gy = ctx.gradient(x_prime)?;
    let (heat, truncation) = heat_apply(ctx.spec, t, &gy)?;
    Ok(KernelValue { value: ctx.pairing(&gx, &heat), truncation })
}

/// Double-integral form `∫∫ g_y(grad f_x(y), p_t(y, z) grad f_{x′}(z)) ρ(y) ρ(z)`
/// from explicit heat-kernel blocks. Quadratic in the node count.
pub fn kernel_value_double_integral(ctx: &KernelContext, x: SamplePoint, x_prime: SamplePoint, t: f64) -> Result<f64> {
    let md = ctx.md;
    let d = md.dim();
    let gx = ctx.gradient(x)?;
    let gy = ctx.gradient(x_prime)?;
    let vol = md.grid.cell_volume();
    let rho = md.rho.values();
    if !(t.is_finite() && t >= 0.0) {
        return Err(StatlapError::InvalidInput(format!("heat time must be finite and nonnegative, got {t}")));
    }
    let (w, _) = ctx.spec.truncated_weights(t);
    let rows: Vec<f64> = (0..md.len())
        .into_par_iter()
        .map(|y| {
            let mut acc = DVector::<f64>::zeros(d);
            for z in 0..md.len() {
                let p = kernel_matrix(ctx.spec, md, &w, y, z);
                acc += p * DVector::from_column_slice(&gy[z * d..(z + 1) * d]) * (rho[z] * vol);
            }
            md.inner(y, &gx[y * d..(y + 1) * d], acc.as_slice()) * rho[y] * vol
        })
        .collect();
    Ok(numeric::pairwise_sum(&rows))
}

/// Both kernel forms, failing with `FormMismatch` when they disagree.
pub fn kernel_value_checked(ctx: &KernelContext, x: SamplePoint, x_prime: SamplePoint, t: f64) -> Result<(KernelValue, f64)> {
    let single = kernel_value(ctx, x, x_prime, t)?;
    let double = kernel_value_double_integral(ctx, x, x_prime, t)?;
    let scale = ctx.pairing(&ctx.gradient(x)?, &ctx.gradient(x)?).sqrt()
        * ctx.pairing(&ctx.gradient(x_prime)?, &ctx.gradient(x_prime)?).sqrt();
    let discrepancy = (single.value - double).abs();
    let tolerance = KERNEL_FORM_TOLERANCE * scale.max(single.value.abs()).max(1e-300);
    if discrepancy > tolerance {
        return Err(StatlapError::FormMismatch { what: "diffusion kernel", discrepancy, tolerance });
    }
    Ok((single, discrepancy / scale.max(1e-300)))
}

/// Direct `∫ g(grad f_x, grad f_{x′}) ρ`, the `t → 0` limit of `K_t`.
pub fn gradient_inner_product(ctx: &KernelContext, x: SamplePoint, x_prime: SamplePoint) -> Result<f64> {
    let md = ctx.md;
    let d = md.dim();
    let gx = ctx.gradient(x)?;
    let gy = ctx.gradient(x_prime)?;
    let terms: Vec<f64> = (0..md.len()).map(|n| md.inner(n, &gx[n * d..(n + 1) * d], &gy[n * d..(n + 1) * d])).collect();
    Ok(md.grid.integrate(&terms, md.rho.values()))
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub samples: Vec<SamplePoint>,
    pub t: f64,
    pub values: DMatrix<f64>,
    /// `max |K_ij − K_ji|` before averaging.
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    pub truncation: TruncationReport,
}

/// `K_t` over all sample pairs, symmetrized by averaging the two halves.
pub fn kernel_gram(ctx: &KernelContext, samples: &[SamplePoint], t: f64) -> Result<GramMatrix> {
    if samples.is_empty() {
        return Err(StatlapError::InvalidInput("Gram matrix needs at least one sample".into()));
    }
    let grads: Vec<Vec<f64>> = samples.par_iter().map(|&x| ctx.gradient(x)).collect::<Result<_>>()?;
    let heated: Vec<(Vec<f64>, TruncationReport)> = grads.par_iter().map(|g| heat_apply(ctx.spec, t, g)).collect::<Result<_>>()?;
    let lowered: Vec<Vec<f64>> = grads.par_iter().map(|g| ctx.spec.mass().apply(g)).collect();
    let m = samples.len();
    let raw = DMatrix::from_fn(m, m, |i, j| numeric::dot(&lowered[i], &heated[j].0));
    let mut asymmetry: f64 = 0.0;
    let values = DMatrix::from_fn(m, m, |i, j| {
        asymmetry = asymmetry.max((raw[(i, j)] - raw[(j, i)]).abs());
        if i == j {
            raw[(i, i)]
        } else {
            0.5 * (raw[(i, j)] + raw[(j, i)])
        }
    });
    let min_eigenvalue = SymmetricEigen::new(values.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GramMatrix { samples: samples.to_vec(), t, values, asymmetry, min_eigenvalue, truncation: heated[0].1 })
}

/// `d_t(x, y) = sqrt(K_t(x,x) + K_t(y,y) − 2 K_t(x,y))`, clamped at zero.
pub fn kernel_distance(ctx: &KernelContext, x: SamplePoint, y: SamplePoint, t: f64) -> Result<f64> {
    let gram = kernel_gram(ctx, &[x, y], t)?;
    Ok(distance_from_gram(&gram.values, 0, 1))
}

pub fn distance_from_gram(k: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Potential;
    use crate::models::{catalog_model, ChartSpec};
    use crate::operators::assemble_weak_laplacian;
    use crate::spectral::{eigendecompose, SpectralOptions};
    use std::collections::BTreeMap;

    fn bernoulli(points: usize) -> (ChartedModel, ManifoldData) {
        let model = catalog_model("bernoulli", &BTreeMap::new()).unwrap();
        let chart = ChartedModel::new(model, ChartSpec { center: vec![0.5], period: vec![2.2], points: vec![points] }).unwrap();
        let md = chart.manifold(Potential::Zero, 1.0).unwrap();
        (chart, md)
    }

    fn spectrum(md: &ManifoldData) -> SpectralDecomposition {
        let weak = assemble_weak_laplacian(md);
        eigendecompose(&weak.stiffness, &weak.mass.vector_mass, md.dim(), &SpectralOptions::default()).unwrap()
    }

    #[test]
    fn flat_likelihood_and_uniform_prior_give_constant_posterior() {
        let (_, md) = bernoulli(32);
        // scale rho to unit mass so the uniform prior is identically one
        let mass = md.grid.integrate(&vec![1.0; md.len()], md.rho.values());
        let md = md.with_shifted_potential(mass.ln()).unwrap();
        let prior = uniform_prior(&md);
        assert!(prior.iter().all(|p| (p - 1.0).abs() < 1e-12));
        let pf = posterior_from_likelihood(&md, 0.0, &vec![0.37; md.len()], &prior).unwrap();
        assert!(pf.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(posterior_gradient(&md, &pf).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn posteriors_normalize() {
        let (chart, md) = bernoulli(40);
        let prior = uniform_prior(&md);
        for x in [0.0, 1.0] {
            let pf = posterior_field(&chart, &md, &prior, x).unwrap();
            assert!((md.grid.integrate(&pf.values, md.rho.values()) - 1.0).abs() < 1e-10);
            assert!(pf.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bernoulli_map_matches_conjugate_oracle() {
        let (chart, md) = bernoulli(64);
        let (a, b) = (3.0, 1.5);
        let shape: Vec<f64> = (0..md.len()).map(|n| chart.parameter(n)[0].powf(a) * (1.0 - chart.parameter(n)[0]).powf(b)).collect();
        let prior = normalize_prior(&md, &shape).unwrap();
        for x in [0.0, 1.0] {
            let pf = posterior_field(&chart, &md, &prior, x).unwrap();
            let best = (0..md.len()).max_by(|&i, &j| pf.values[i].total_cmp(&pf.values[j])).unwrap();
            let map = (a + x) / (a + b + 1.0);
            assert!((chart.parameter(best)[0] - map).abs() <= md.grid.spacing(0), "{} vs {map}", chart.parameter(best)[0]);
        }
    }

    #[test]
    fn sharp_posterior_is_rejected() {
        let (_, md) = bernoulli(32);
        let prior = uniform_prior(&md);
        let mut spike = vec![0.0; md.len()];
        spike[5] = 1.0;
        assert!(matches!(
            posterior_from_likelihood(&md, 0.0, &spike, &prior),
            Err(StatlapError::UnderResolved { .. })
        ));
        assert!(matches!(
            posterior_from_likelihood(&md, 0.0, &vec![0.0; md.len()], &prior),
            Err(StatlapError::ZeroEvidence { .. })
        ));
    }

    #[test]
    fn gradient_is_raised_by_inverse_metric() {
        let (_, md) = bernoulli(32);
        let values: Vec<f64> = (0..md.len()).map(|n| (std::f64::consts::TAU * md.grid.position(n)[0] / 2.2).sin()).collect();
        let raised = raised_gradient(&md, &values);
        let coord = md.grid.central_diff(&values, 0);
        for n in 0..md.len() {
            assert!((raised[n] - coord[n] / md.g.values()[n]).abs() < 1e-12 * coord[n].abs().max(1.0));
        }
    }

    #[test]
    fn kernel_symmetry_forms_and_limit() {
        let (chart, md) = bernoulli(24);
        let spec = spectrum(&md);
        let prior = uniform_prior(&md);
        let ctx = KernelContext { model: &chart, md: &md, spec: &spec, prior: &prior };
        let t = 0.1;
        let k01 = kernel_value(&ctx, 0.0, 1.0, t).unwrap().value;
        let k10 = kernel_value(&ctx, 1.0, 0.0, t).unwrap().value;
        assert!((k01 - k10).abs() < 1e-10 * k01.abs().max(1.0));
        assert!(kernel_value(&ctx, 1.0, 1.0, t).unwrap().value >= 0.0);
        let (_, gap) = kernel_value_checked(&ctx, 0.0, 1.0, t).unwrap();
        assert!(gap < KERNEL_FORM_TOLERANCE);
        let direct = gradient_inner_product(&ctx, 0.0, 1.0).unwrap();
        let limit = kernel_value(&ctx, 0.0, 1.0, 0.0).unwrap().value;
        assert!((direct - limit).abs() < 1e-7 * direct.abs().max(1.0));
    }

    #[test]
    fn gram_is_psd_with_duplicate_rows() {
        let (chart, md) = bernoulli(24);
        let spec = spectrum(&md);
        let prior = uniform_prior(&md);
        let ctx = KernelContext { model: &chart, md: &md, spec: &spec, prior: &prior };
        let gram = kernel_gram(&ctx, &[0.0, 1.0, 0.0, 1.0], 0.05).unwrap();
        assert!(gram.min_eigenvalue >= -1e-10);
        assert!(gram.asymmetry < 1e-10);
        assert_eq!(gram.values.row(0), gram.values.row(2));
        let single = kernel_gram(&ctx, &[1.0], 0.05).unwrap();
        assert!(single.values[(0, 0)] >= 0.0);
        assert_eq!(kernel_distance(&ctx, 1.0, 1.0, 0.05).unwrap(), 0.0);
    }
}
