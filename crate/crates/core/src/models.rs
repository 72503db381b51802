//! Parametric statistical families on periodic charts.
//!
//! Each model exposes its log-likelihood, score, an exact sampler and the
//! closed-form Fisher metric `g_ij = E[∂_iℓ ∂_jℓ]` and Amari-Chentsov tensor
//! `C_ijk = E[∂_iℓ ∂_jℓ ∂_kℓ]`. Monte-Carlo estimators of both are provided
//! to cross-check the closed forms.
//!
//! Parameter spaces of these families are not compact, so every model is
//! studied on a periodic chart: axes along which the geometry is
//! translation invariant (Gaussian means) are plain periodic boxes, and the
//! remaining axes are folded smoothly, `θ(u) = c + (L/2π)·sin(2πu/L)`. On a
//! folded axis the fields are the closed forms evaluated at `θ(u)`; the chart
//! is a smooth compact surrogate of the model, not an isometric embedding.

use std::f64::consts::TAU;
use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StatlapError};
use crate::field::{Symmetry, TensorField};
use crate::geometry::{ManifoldData, Potential};
use crate::grid::Grid;
use crate::numeric::pairwise_sum;

/// Observations are real numbers; finite sample spaces use `0, 1, …, m−1`.
pub type SamplePoint = f64;

/// Probabilities closer than this to 0 or 1 are outside every valid chart.
pub const PROBABILITY_MARGIN: f64 = 1e-3;

pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSpace {
    Finite(usize),
    RealLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    /// Geometry does not depend on this coordinate; the chart is a plain box.
    Shift,
    /// Chart folds the coordinate smoothly back onto itself.
    Fold,
}

pub trait StatModel: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Parameter dimension.
    fn dim(&self) -> usize;

    fn sample_space(&self) -> SampleSpace;

    fn axis_kind(&self, axis: usize) -> AxisKind;

    fn check_parameter(&self, theta: &[f64]) -> Result<()>;

    fn loglik(&self, x: SamplePoint, theta: &[f64]) -> f64;

    /// Score `∂_i ℓ(x | θ)` written into `out`.
    fn loglik_grad(&self, x: SamplePoint, theta: &[f64], out: &mut [f64]);

    fn sample(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> SamplePoint;

    /// Closed-form `(g, C)`, row-major `d×d` and `d×d×d`.
    fn closed_form(&self, theta: &[f64]) -> Option<(Vec<f64>, Vec<f64>)>;

    fn has_closed_form(&self) -> bool {
        true
    }

    fn check_sample(&self, x: SamplePoint) -> Result<()> {
        let ok = match self.sample_space() {
            SampleSpace::Finite(m) => x >= 0.0 && x.fract() == 0.0 && (x as usize) < m,
            SampleSpace::RealLine => x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(StatlapError::InvalidInput(format!("{x} is not in the sample space of `{}`", self.name())))
        }
    }
}

fn out_of_range(model: &str, axis: usize, value: f64) -> StatlapError {
    StatlapError::ParameterOutOfRange { model: model.to_string(), axis, value }
}

/// Bernoulli family parameterized by the success probability `p`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bernoulli;

impl StatModel for Bernoulli {
    fn name(&self) -> &str {
        "bernoulli"
    }

    fn dim(&self) -> usize {
        1
    }

    fn sample_space(&self) -> SampleSpace {
        SampleSpace::Finite(2)
    }

    fn axis_kind(&self, _axis: usize) -> AxisKind {
        AxisKind::Fold
    }

    fn check_parameter(&self, theta: &[f64]) -> Result<()> {
        let p = theta[0];
        if !(PROBABILITY_MARGIN..=1.0 - PROBABILITY_MARGIN).contains(&p) {
            return Err(out_of_range(self.name(), 0, p));
        }
        Ok(())
    }

    fn loglik(&self, x: SamplePoint, theta: &[f64]) -> f64 {
        let p = theta[0];
        if x == 1.0 {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    }

    fn loglik_grad(&self, x: SamplePoint, theta: &[f64], out: &mut [f64]) {
        let p = theta[0];
        out[0] = if x == 1.0 { 1.0 / p } else { -1.0 / (1.0 - p) };
    }

    fn sample(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> SamplePoint {
        if rng.random::<f64>() < theta[0] {
            1.0
        } else {
            0.0
        }
    }

    fn closed_form(&self, theta: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let p = theta[0];
        let v = p * (1.0 - p);
        Some((vec![1.0 / v], vec![(1.0 - 2.0 * p) / (v * v)]))
    }
}

/// Normal location family with known scale.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLocation {
    pub sigma: f64,
}

impl Default for GaussianLocation {
    fn default() -> Self {
        GaussianLocation { sigma: 1.0 }
    }
}

impl StatModel for GaussianLocation {
    fn name(&self) -> &str {
        "gaussian-location"
    }

    fn dim(&self) -> usize {
        1
    }

    fn sample_space(&self) -> SampleSpace {
        SampleSpace::RealLine
    }

    fn axis_kind(&self, _axis: usize) -> AxisKind {
        AxisKind::Shift
    }

    fn check_parameter(&self, theta: &[f64]) -> Result<()> {
        if !theta[0].is_finite() {
            return Err(out_of_range(self.name(), 0, theta[0]));
        }
        Ok(())
    }

    fn loglik(&self, x: SamplePoint, theta: &[f64]) -> f64 {
        let z = (x - theta[0]) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * TAU.ln()
    }

    fn loglik_grad(&self, x: SamplePoint, theta: &[f64], out: &mut [f64]) {
        out[0] = (x - theta[0]) / (self.sigma * self.sigma);
    }

    fn sample(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> SamplePoint {
        let z: f64 = rng.sample(StandardNormal);
        theta[0] + self.sigma * z
    }

    fn closed_form(&self, _theta: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![1.0 / (self.sigma * self.sigma)], vec![0.0]))
    }
}

/// Normal family in `(μ, σ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Gaussian;

impl StatModel for Gaussian {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn dim(&self) -> usize {
        2
    }

    fn sample_space(&self) -> SampleSpace {
        SampleSpace::RealLine
    }

    fn axis_kind(&self, axis: usize) -> AxisKind {
        if axis == 0 {
            AxisKind::Shift
        } else {
            AxisKind::Fold
        }
    }

    fn check_parameter(&self, theta: &[f64]) -> Result<()> {
        if !theta[0].is_finite() {
            return Err(out_of_range(self.name(), 0, theta[0]));
        }
        if !(theta[1] > 1e-6 && theta[1].is_finite()) {
            return Err(out_of_range(self.name(), 1, theta[1]));
        }
        Ok(())
    }

    fn loglik(&self, x: SamplePoint, theta: &[f64]) -> f64 {
        let z = (x - theta[0]) / theta[1];
        -0.5 * z * z - theta[1].ln() - 0.5 * TAU.ln()
    }

    fn loglik_grad(&self, x: SamplePoint, theta: &[f64], out: &mut [f64]) {
        let s = theta[1];
        let z = (x - theta[0]) / s;
        out[0] = z / s;
        out[1] = (z * z - 1.0) / s;
    }

    fn sample(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> SamplePoint {
        let z: f64 = rng.sample(StandardNormal);
        theta[0] + theta[1] * z
    }

    fn closed_form(&self, theta: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let s = theta[1];
        let s2 = s * s;
        let s3 = s2 * s;
        // C_{μμσ} = 2/σ³, C_{σσσ} = 8/σ³, all others vanish.
        let mut c = vec![0.0; 8];
        for idx in [1, 2, 4] {
            c[idx] = 2.0 / s3;
        }
        c[7] = 8.0 / s3;
        Some((vec![1.0 / s2, 0.0, 0.0, 2.0 / s2], c))
    }
}

/// Categorical family on `m` outcomes, parameterized by `(p_1, …, p_{m−1})`
/// with `p_0 = 1 − Σ p_i`.
#[derive(Debug, Clone, Copy)]
pub struct Categorical {
    pub categories: usize,
}

impl Default for Categorical {
    fn default() -> Self {
        Categorical { categories: 3 }
    }
}

impl Categorical {
    fn base_probability(theta: &[f64]) -> f64 {
        1.0 - theta.iter().sum::<f64>()
    }
}

impl StatModel for Categorical {
    fn name(&self) -> &str {
        "categorical"
    }

    fn dim(&self) -> usize {
        self.categories - 1
    }

    fn sample_space(&self) -> SampleSpace {
        SampleSpace::Finite(self.categories)
    }

    fn axis_kind(&self, _axis: usize) -> AxisKind {
        AxisKind::Fold
    }

    fn check_parameter(&self, theta: &[f64]) -> Result<()> {
        for (a, &p) in theta.iter().enumerate() {
            if !(p >= PROBABILITY_MARGIN) {
                return Err(out_of_range(self.name(), a, p));
            }
        }
        if !(Self::base_probability(theta) >= PROBABILITY_MARGIN) {
            let (axis, &value) = theta
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("at least one axis");
            return Err(out_of_range(self.name(), axis, value));
        }
        Ok(())
    }

    fn loglik(&self, x: SamplePoint, theta: &[f64]) -> f64 {
        let c = x as usize;
        if c == 0 {
            Self::base_probability(theta).ln()
        } else {
            theta[c - 1].ln()
        }
    }

    fn loglik_grad(&self, x: SamplePoint, theta: &[f64], out: &mut [f64]) {
        let c = x as usize;
        let p0 = Self::base_probability(theta);
        for (i, o) in out.iter_mut().enumerate() {
            *o = if c == 0 {
                -1.0 / p0
            } else if c == i + 1 {
                1.0 / theta[i]
            } else {
                0.0
            };
        }
    }

    fn sample(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> SamplePoint {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in theta.iter().enumerate() {
            acc += p;
            if u < acc {
                return (i + 1) as f64;
            }
        }
        0.0
    }

    fn closed_form(&self, theta: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let p0 = Self::base_probability(theta);
        let mut g = vec![1.0 / p0; d * d];
        let mut c = vec![-1.0 / (p0 * p0); d * d * d];
        for i in 0..d {
            g[i * d + i] += 1.0 / theta[i];
            c[(i * d + i) * d + i] += 1.0 / (theta[i] * theta[i]);
        }
        Some((g, c))
    }
}

/// Looks a catalog model up by name. `fixed` carries model constants such as
/// `sigma` (Gaussian location) or `categories` (categorical).
pub fn catalog_model(name: &str, fixed: &std::collections::BTreeMap<String, f64>) -> Result<Arc<dyn StatModel>> {
    let allow = |keys: &[&str]| -> Result<()> {
        if let Some(k) = fixed.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(StatlapError::InvalidInput(format!("model `{name}` has no fixed parameter `{k}`")));
        }
        Ok(())
    };
    match name {
        "bernoulli" => {
            allow(&[])?;
            Ok(Arc::new(Bernoulli))
        }
        "gaussian-location" => {
            allow(&["sigma"])?;
            let sigma = fixed.get("sigma").copied().unwrap_or(1.0);
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(StatlapError::InvalidInput(format!("sigma = {sigma}")));
            }
            Ok(Arc::new(GaussianLocation { sigma }))
        }
        "gaussian" => {
            allow(&[])?;
            Ok(Arc::new(Gaussian))
        }
        "categorical" => {
            allow(&["categories"])?;
            let m = fixed.get("categories").copied().unwrap_or(3.0);
            if !(m >= 2.0 && m.fract() == 0.0 && m <= 16.0) {
                return Err(StatlapError::InvalidInput(format!("categories = {m}")));
            }
            Ok(Arc::new(Categorical { categories: m as usize }))
        }
        other => Err(StatlapError::InvalidInput(format!("unknown model `{other}`"))),
    }
}

/// Chart block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub center: Vec<f64>,
    pub period: Vec<f64>,
    pub points: Vec<usize>,
}

/// A model together with the periodic chart it is studied on.
#[derive(Debug, Clone)]
pub struct ChartedModel {
    model: Arc<dyn StatModel>,
    spec: ChartSpec,
    grid: Arc<Grid>,
    parameters: Vec<f64>,
}

impl ChartedModel {
    pub fn new(model: Arc<dyn StatModel>, spec: ChartSpec) -> Result<Self> {
        let d = model.dim();
        if spec.center.len() != d || spec.period.len() != d || spec.points.len() != d {
            return Err(StatlapError::ShapeMismatch(format!(
                "chart for `{}` needs {d} entries per list",
                model.name()
            )));
        }
        let grid = Arc::new(Grid::new(spec.points.clone(), spec.period.clone())?);
        let mut parameters = Vec::with_capacity(grid.len() * d);
        for x in 0..grid.len() {
            let u = grid.position(x);
            let theta: Vec<f64> = (0..d)
                .map(|a| {
                    let l = spec.period[a];
                    match model.axis_kind(a) {
                        AxisKind::Shift => spec.center[a] - 0.5 * l + u[a],
                        AxisKind::Fold => spec.center[a] + l / TAU * (TAU * u[a] / l).sin(),
                    }
                })
                .collect();
            model.check_parameter(&theta)?;
            parameters.extend(theta);
        }
        Ok(ChartedModel { model, spec, grid, parameters })
    }

    pub fn model(&self) -> &Arc<dyn StatModel> {
        &self.model
    }

    pub fn spec(&self) -> &ChartSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Parameter `θ` at a chart node.
    pub fn parameter(&self, node: usize) -> &[f64] {
        let d = self.model.dim();
        &self.parameters[node * d..(node + 1) * d]
    }

    /// Same model on a chart refined by `factor` along every axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.points.iter_mut().for_each(|n| *n *= factor);
        ChartedModel::new(self.model.clone(), spec)
    }

    /// Node-sampled closed-form `g` and `C`.
    pub fn eval_closed_form(&self) -> Result<(TensorField, TensorField)> {
        if !self.model.has_closed_form() {
            return Err(StatlapError::NoClosedForm(self.model.name().to_string()));
        }
        let d = self.model.dim();
        let mut g = Vec::with_capacity(self.grid.len() * d * d);
        let mut c = Vec::with_capacity(self.grid.len() * d * d * d);
        for x in 0..self.grid.len() {
            let (gx, cx) = self
                .model
                .closed_form(self.parameter(x))
                .ok_or_else(|| StatlapError::NoClosedForm(self.model.name().to_string()))?;
            g.extend(gx);
            c.extend(cx);
        }
        Ok((
            TensorField::new(self.grid.clone(), 2, Symmetry::Symmetric, g)?,
            TensorField::new(self.grid.clone(), 3, Symmetry::FullySymmetric, c)?,
        ))
    }

    pub fn manifold(&self, potential: Potential, alpha: f64) -> Result<ManifoldData> {
        let (g, c) = self.eval_closed_form()?;
        ManifoldData::new(g, c, potential, alpha)
    }

    /// Score `∂_i ℓ(x | θ)` at every node, as a covector field.
    pub fn loglik_grad_field(&self, x: SamplePoint) -> Result<TensorField> {
        self.model.check_sample(x)?;
        let d = self.model.dim();
        TensorField::from_fn(self.grid.clone(), 1, Symmetry::None, |node, out| {
            self.model.loglik_grad(x, self.parameter(node), &mut out[..d]);
        })
    }

    /// Likelihood `p(x | θ)` at every node.
    pub fn likelihood_field(&self, x: SamplePoint) -> Result<TensorField> {
        self.model.check_sample(x)?;
        let values = (0..self.grid.len())
            .map(|node| self.model.loglik(x, self.parameter(node)).exp())
            .collect();
        TensorField::scalar(self.grid.clone(), values)
    }
}

/// `n` exact draws from `p(· | θ)`. Draw `s` uses its own ChaCha stream keyed
/// by `(seed, s)`, so results do not depend on how work is split.
pub fn draw_samples(model: &dyn StatModel, theta: &[f64], seed: u64, n: usize) -> Vec<SamplePoint> {
    (0..n as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            model.sample(theta, &mut rng)
        })
        .collect()
}

/// Monte-Carlo estimate with per-component standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    let dev: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimates `E[∏_{r} ∂_{i_r} ℓ]` for every index tuple of length `order`,
/// computing canonical (sorted) tuples once and mirroring them.
fn score_moment(model: &dyn StatModel, theta: &[f64], n: usize, seed: u64, order: u32) -> Result<MCEstimate> {
    if n < MIN_MC_SAMPLES {
        return Err(StatlapError::InvalidInput(format!(
            "Monte-Carlo estimates need at least {MIN_MC_SAMPLES} samples, got {n}"
        )));
    }
    model.check_parameter(theta)?;
    let d = model.dim();
    let xs = draw_samples(model, theta, seed, n);
    let scores: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&x| {
            let mut s = vec![0.0; d];
            model.loglik_grad(x, theta, &mut s);
            s
        })
        .collect();
    let count = d.pow(order);
    let mut value = vec![0.0; count];
    let mut stderr = vec![0.0; count];
    let tuple = |mut flat: usize| -> Vec<usize> {
        let mut t = vec![0; order as usize];
        for slot in t.iter_mut().rev() {
            *slot = flat % d;
            flat /= d;
        }
        t
    };
    let flat = |t: &[usize]| t.iter().fold(0, |acc, &i| acc * d + i);
    for idx in 0..count {
        let t = tuple(idx);
        let mut sorted = t.clone();
        sorted.sort_unstable();
        if sorted != t {
            continue;
        }
        let products: Vec<f64> = scores.iter().map(|s| t.iter().map(|&i| s[i]).product()).collect();
        let (m, e) = mean_and_stderr(&products);
        value[idx] = m;
        stderr[idx] = e;
    }
    for idx in 0..count {
        let mut sorted = tuple(idx);
        sorted.sort_unstable();
        let canon = flat(&sorted);
        value[idx] = value[canon];
        stderr[idx] = stderr[canon];
    }
    Ok(MCEstimate { value, stderr, n_samples: n, seed })
}

/// Monte-Carlo Fisher metric `(1/n) Σ ∂_iℓ ∂_jℓ`.
pub fn fisher_mc(model: &dyn StatModel, theta: &[f64], n: usize, seed: u64) -> Result<MCEstimate> {
    score_moment(model, theta, n, seed, 2)
}

/// Monte-Carlo Amari-Chentsov tensor `(1/n) Σ ∂_iℓ ∂_jℓ ∂_kℓ`.
pub fn ac_tensor_mc(model: &dyn StatModel, theta: &[f64], n: usize, seed: u64) -> Result<MCEstimate> {
    score_moment(model, theta, n, seed, 3)
}

/// Smooth periodic test manifold with `C ≠ 0` and `f ≠ 0`, given directly by
/// its fields rather than by a likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub points: Vec<usize>,
    pub periods: Vec<f64>,
    #[serde(default = "default_metric_amplitude")]
    pub metric_amplitude: f64,
    #[serde(default = "default_tensor_amplitude")]
    pub tensor_amplitude: f64,
    #[serde(default = "default_potential_amplitude")]
    pub potential_amplitude: f64,
}

fn default_metric_amplitude() -> f64 {
    0.3
}

fn default_tensor_amplitude() -> f64 {
    0.5
}

fn default_potential_amplitude() -> f64 {
    0.4
}

impl SyntheticSpec {
    pub fn new(points: Vec<usize>, periods: Vec<f64>) -> Self {
        SyntheticSpec {
            points,
            periods,
            metric_amplitude: default_metric_amplitude(),
            tensor_amplitude: default_tensor_amplitude(),
            potential_amplitude: default_potential_amplitude(),
        }
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::new(self.points.clone(), self.periods.clone())?))
    }

    /// Angles `2π u_a / L_a` of a chart position.
    fn angles(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.periods).map(|(x, l)| TAU * x / l).collect()
    }

    pub fn metric(&self, u: &[f64]) -> Vec<f64> {
        let d = u.len();
        let t = self.angles(u);
        let a = self.metric_amplitude;
        let mut g = vec![0.0; d * d];
        for i in 0..d {
            let phase: f64 = t.iter().sum();
            g[i * d + i] = 1.5 + a * (phase + 0.7 * i as f64).sin() + 0.25 * i as f64;
            for j in i + 1..d {
                let v = 0.5 * a * (t[i] - t[j]).cos();
                g[i * d + j] = v;
                g[j * d + i] = v;
            }
        }
        g
    }

    pub fn tensor(&self, u: &[f64]) -> Vec<f64> {
        let d = u.len();
        let t = self.angles(u);
        let b = self.tensor_amplitude;
        let mut c = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let s = (i + j + k) as f64;
                    let arg: f64 = t.iter().sum::<f64>() + 0.9 * s;
                    let bump = t[i].cos() + t[j].cos() + t[k].cos();
                    c[(i * d + j) * d + k] = b * (arg.sin() + 0.3 * bump);
                }
            }
        }
        c
    }

    pub fn potential(&self, u: &[f64]) -> f64 {
        let t = self.angles(u);
        self.potential_amplitude * t.iter().enumerate().map(|(a, ta)| (ta + 0.4 * a as f64).cos()).sum::<f64>()
    }

    /// Node-sampled `(g, C, f)`.
    pub fn fields(&self) -> Result<(TensorField, TensorField, TensorField)> {
        let grid = self.grid()?;
        let g = TensorField::from_fn(grid.clone(), 2, Symmetry::Symmetric, |x, out| {
            out.copy_from_slice(&self.metric(&grid.position(x)))
        })?;
        let c = TensorField::from_fn(grid.clone(), 3, Symmetry::FullySymmetric, |x, out| {
            out.copy_from_slice(&self.tensor(&grid.position(x)))
        })?;
        let f = TensorField::scalar(grid.clone(), (0..grid.len()).map(|x| self.potential(&grid.position(x))).collect())?;
        Ok((g, c, f))
    }

    pub fn manifold(&self, alpha: f64) -> Result<ManifoldData> {
        let (g, c, f) = self.fields()?;
        ManifoldData::new(g, c, Potential::Explicit(f), alpha)
    }
}
