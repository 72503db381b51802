//! Builds the manifold a config describes and runs the invariant suite and
//! the requested tasks on it.

use std::sync::Arc;

use serde::Serialize;
use statlap_core::field::{FieldContainer, Symmetry, TensorField};
use statlap_core::geometry::{ManifoldData, Potential};
use statlap_core::grid::Grid;
use statlap_core::kernels::{normalize_prior, uniform_prior, GramMatrix, KernelContext};
use statlap_core::models::{catalog_model, draw_samples, ChartedModel, SyntheticSpec};
use statlap_core::operators::assemble_weak_laplacian;
use statlap_core::spectral::{eigendecompose, vdd_matrix, DistanceMatrix, SpectralDecomposition, SpectralOptions};

use crate::checks::{self, Check, CheckKind, KernelInputs, OperatorInputs, SpectralInputs};
use crate::config::{read_samples_file, FlatConfig, PotentialConfig, PriorConfig, RunConfig, Sample, Task};
use crate::error::CliError;

/// Diffusion time used by the spectral checks when the config has no `vdd` block.
pub const DEFAULT_CHECK_TIME: f64 = 0.1;
/// Distance nodes used by the checks when the config names none.
pub const DEFAULT_CHECK_NODES: usize = 64;
/// Pairs on which the vdd double-sum form is evaluated.
pub const VDD_FORM_PAIRS: usize = 64;

enum Source {
    Model(ChartedModel),
    Synthetic(SyntheticSpec),
    Flat(FlatConfig),
    Fields,
}

/// The configured manifold and how to rebuild it on a finer grid.
pub struct Problem {
    pub md: ManifoldData,
    recipe: Recipe,
}

struct Recipe {
    source: Source,
    potential: PotentialConfig,
    alpha: f64,
}

fn setup<T>(r: statlap_core::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::from_setup)
}

fn zero_tensor(grid: &Arc<Grid>) -> TensorField {
    TensorField::zeros(grid.clone(), 3, Symmetry::FullySymmetric)
}

fn flat_metric(grid: &Arc<Grid>) -> Result<TensorField, CliError> {
    let d = grid.dim();
    let per_node: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let values = (0..grid.len()).flat_map(|_| per_node.iter().copied()).collect();
    setup(TensorField::new(grid.clone(), 2, Symmetry::Symmetric, values))
}

impl Problem {
    pub fn build(config: &RunConfig) -> Result<Self, CliError> {
        let source = if let Some(m) = &config.model {
            let model = setup(catalog_model(&m.name, &m.fixed_params))?;
            Source::Model(setup(ChartedModel::new(model, m.chart.clone()))?)
        } else if let Some(s) = &config.synthetic {
            Source::Synthetic(s.clone())
        } else if let Some(f) = &config.flat {
            Source::Flat(f.clone())
        } else {
            Source::Fields
        };
        let recipe = Recipe { source, potential: config.f.clone(), alpha: config.alpha };
        let md = match &recipe.source {
            Source::Fields => recipe.load_container(config)?,
            _ => recipe.at_factor(1)?.expect("non-container sources refine"),
        };
        Ok(Problem { md, recipe })
    }

    pub fn refined(&self) -> Result<Option<ManifoldData>, CliError> {
        self.recipe.at_factor(2)
    }

    pub fn model(&self) -> Option<&ChartedModel> {
        match &self.recipe.source {
            Source::Model(m) => Some(m),
            _ => None,
        }
    }

    pub fn source_name(&self) -> &'static str {
        match self.recipe.source {
            Source::Model(_) => "model",
            Source::Synthetic(_) => "synthetic",
            Source::Flat(_) => "flat",
            Source::Fields => "fields",
        }
    }
}

impl Recipe {
    fn load_container(&self, config: &RunConfig) -> Result<ManifoldData, CliError> {
        let spec = config.fields.as_ref().expect("validated source");
        let container = FieldContainer::load(&spec.path).map_err(|e| match e {
            statlap_core::StatlapError::Io(e) => CliError::Io(format!("{}: {e}", spec.path.display())),
            other => CliError::Config(format!("{}: {other}", spec.path.display())),
        })?;
        let g = setup(container.get(&spec.metric))?;
        let c = setup(container.get(&spec.tensor))?;
        let potential = match &self.potential {
            PotentialConfig::Explicit(e) => match (&e.values, &e.field) {
                (Some(values), _) => Potential::Explicit(setup(TensorField::scalar(g.grid().clone(), values.clone()))?),
                (_, Some(name)) => Potential::Explicit(setup(container.get(name))?),
                _ => unreachable!("validated potential"),
            },
            other => self.simple_potential(other)?,
        };
        setup(ManifoldData::new(g, c, potential, self.alpha))
    }

    fn simple_potential(&self, p: &PotentialConfig) -> Result<Potential, CliError> {
        match p {
            PotentialConfig::Zero => Ok(Potential::Zero),
            PotentialConfig::LogSqrtDetG => Ok(Potential::LogSqrtDetG),
            _ => Err(CliError::Config("this potential needs the configured grid".into())),
        }
    }

    /// The manifold on the configured grid refined by `factor`; `None` when
    /// the source is a fixed set of node values.
    fn at_factor(&self, factor: usize) -> Result<Option<ManifoldData>, CliError> {
        let explicit_values = |grid: &Arc<Grid>| -> Result<Option<Potential>, CliError> {
            match &self.potential {
                PotentialConfig::Explicit(e) => {
                    if factor != 1 {
                        return Ok(None);
                    }
                    let values = e.values.clone().expect("validated potential");
                    Ok(Some(Potential::Explicit(setup(TensorField::scalar(grid.clone(), values))?)))
                }
                other => Ok(Some(self.simple_potential(other)?)),
            }
        };
        let md = match &self.source {
            Source::Fields => return Ok(None),
            Source::Model(m) => {
                let m = if factor == 1 { m.clone() } else { setup(m.refined(factor))? };
                let Some(p) = explicit_values(m.grid())? else { return Ok(None) };
                setup(m.manifold(p, self.alpha))?
            }
            Source::Synthetic(s) => {
                let mut s = s.clone();
                s.points.iter_mut().for_each(|n| *n *= factor);
                let grid = setup(s.grid())?;
                let (g, c, f) = setup(s.fields())?;
                let p = match &self.potential {
                    PotentialConfig::Synthetic => Potential::Explicit(f),
                    _ => match explicit_values(&grid)? {
                        Some(p) => p,
                        None => return Ok(None),
                    },
                };
                setup(ManifoldData::new(g, c, p, self.alpha))?
            }
            Source::Flat(flat) => {
                let points = flat.points.iter().map(|n| n * factor).collect();
                let grid = Arc::new(setup(Grid::new(points, flat.periods.clone()))?);
                let Some(p) = explicit_values(&grid)? else { return Ok(None) };
                setup(ManifoldData::new(flat_metric(&grid)?, zero_tensor(&grid), p, self.alpha))?
            }
        };
        Ok(Some(md))
    }
}

/// Same metric and grid with `C = 0` and `f = 0`.
pub fn reduced(md: &ManifoldData) -> Result<ManifoldData, CliError> {
    setup(ManifoldData::new(md.g.clone(), zero_tensor(&md.grid), Potential::Zero, md.alpha))
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldSummary {
    pub source: String,
    pub points: Vec<usize>,
    pub periods: Vec<f64>,
    pub nodes: usize,
    pub alpha: f64,
    pub min_rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub computed: usize,
    pub full_dimension: usize,
    pub smallest: f64,
    pub largest: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub pass: bool,
    pub seed: u64,
    pub manifold: ManifoldSummary,
    pub spectrum: SpectrumSummary,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
}

/// Everything a run produced, ready to be written out.
pub struct Outcome {
    pub report: Report,
    pub spectrum: SpectralDecomposition,
    pub distances: DistanceMatrix,
    pub grams: Vec<GramMatrix>,
    pub sample_ids: Vec<String>,
    pub md: ManifoldData,
}

fn vdd_nodes(config: &RunConfig, n: usize) -> Result<Vec<usize>, CliError> {
    if let Some(vdd) = &config.vdd {
        if let Some(nodes) = &vdd.nodes {
            if let Some(bad) = nodes.iter().find(|&&i| i >= n) {
                return Err(CliError::Config(format!("vdd node {bad} is outside the grid of {n} nodes")));
            }
            if nodes.len() < 2 {
                return Err(CliError::Config("`vdd.nodes` needs at least two nodes".into()));
            }
            return Ok(nodes.clone());
        }
        if let Some(stride) = vdd.stride {
            return Ok((0..n).step_by(stride).collect());
        }
    }
    let stride = n.div_ceil(DEFAULT_CHECK_NODES).max(1);
    Ok((0..n).step_by(stride).collect())
}

fn kernel_samples(config: &RunConfig, model: &ChartedModel) -> Result<Vec<Sample>, CliError> {
    let kernel = config.kernel.as_ref().expect("checked by caller");
    if let Some(s) = &kernel.samples {
        return Ok(s.clone());
    }
    if let Some(path) = &kernel.samples_file {
        return read_samples_file(path);
    }
    let draw = kernel.draw.as_ref().expect("validated kernel block");
    setup(model.model().check_parameter(&draw.theta))?;
    let values = draw_samples(model.model().as_ref(), &draw.theta, config.seed, draw.count);
    Ok(values.into_iter().enumerate().map(|(i, value)| Sample { id: format!("s{i}"), value }).collect())
}

/// Builds the manifold, computes the spectrum and runs every check.
pub fn execute(config: &RunConfig, command: &str) -> Result<Outcome, CliError> {
    let problem = Problem::build(config)?;
    let md = &problem.md;
    let nodes = vdd_nodes(config, md.len())?;
    let seed = config.seed;

    let mut checks = checks::geometry_checks(md);
    let weak = assemble_weak_laplacian(md);
    let refined = problem.refined()?;
    let reduced_md = reduced(md)?;
    let reduced_refined = refined.as_ref().map(reduced).transpose()?;
    checks.extend(checks::operator_checks(&OperatorInputs {
        md,
        weak: &weak,
        refined: refined.as_ref(),
        reduced: &reduced_md,
        reduced_refined: reduced_refined.as_ref(),
        seed,
    })?);
    drop(refined);
    drop(reduced_refined);

    let opts = SpectralOptions {
        k: config.spectral.k,
        tolerance: config.spectral.tolerance,
        solver: config.spectral.solver,
        seed,
        ..SpectralOptions::default()
    };
    let spectrum = eigendecompose(&weak.stiffness, &weak.mass.vector_mass, md.dim(), &opts)
        .map_err(|e| CliError::numerical("spectral.eigensolve", e))?;
    let t = config.vdd.as_ref().map_or(DEFAULT_CHECK_TIME, |v| v.t);
    let distances =
        vdd_matrix(&spectrum, md, t, &nodes, VDD_FORM_PAIRS).map_err(|e| CliError::numerical("spectral.vdd", e))?;
    checks.extend(checks::spectral_checks(&SpectralInputs {
        md,
        spec: &spectrum,
        tolerance: config.spectral.tolerance,
        t,
        distances: &distances,
        seed,
    })?);

    let mut warnings = Vec::new();
    if !distances.truncation.within_tolerance() {
        warnings.push(format!(
            "vdd at t = {t:?}: {} of {} modes, tail bound {:e} exceeds {:e}",
            distances.truncation.retained,
            distances.truncation.full_dimension,
            distances.truncation.tail_bound,
            distances.truncation.tolerance
        ));
    }

    let mut grams = Vec::new();
    let mut sample_ids = Vec::new();
    match (problem.model(), &config.kernel) {
        (Some(model), Some(kernel)) => {
            let samples = kernel_samples(config, model)?;
            if samples.is_empty() {
                return Err(CliError::Config("no kernel samples".into()));
            }
            for s in &samples {
                setup(model.model().check_sample(s.value))?;
            }
            let prior = match &kernel.prior {
                PriorConfig::Uniform => uniform_prior(md),
                PriorConfig::Values(v) => setup(normalize_prior(md, v))?,
            };
            let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
            let ctx = KernelContext { model, md, spec: &spectrum, prior: &prior };
            let (kernel_checks, g) = checks::kernel_checks(&KernelInputs {
                ctx,
                samples: &values,
                times: &kernel.times,
                double_integral: kernel.double_integral_check,
                seed,
            })?;
            checks.extend(kernel_checks);
            for gram in &g {
                if !gram.truncation.within_tolerance() {
                    warnings.push(format!(
                        "kernel at t = {:?}: tail bound {:e} exceeds {:e}",
                        gram.t, gram.truncation.tail_bound, gram.truncation.tolerance
                    ));
                }
            }
            grams = g;
            sample_ids = samples.into_iter().map(|s| s.id).collect();
        }
        (None, Some(_)) => checks.push(Check::skipped("kernels", "needs a catalog model")),
        _ => {}
    }

    let report = Report {
        command: command.into(),
        pass: checks.iter().all(|c| c.pass),
        seed,
        manifold: ManifoldSummary {
            source: problem.source_name().into(),
            points: md.grid.points().to_vec(),
            periods: md.grid.periods().to_vec(),
            nodes: md.len(),
            alpha: md.alpha,
            min_rho: md.rho.values().iter().copied().fold(f64::INFINITY, f64::min),
        },
        spectrum: SpectrumSummary {
            computed: spectrum.len(),
            full_dimension: spectrum.full_dimension,
            smallest: spectrum.eigenvalues.first().copied().unwrap_or(f64::NAN),
            largest: spectrum.eigenvalues.last().copied().unwrap_or(f64::NAN),
        },
        checks,
        warnings,
        artifacts: Vec::new(),
    };
    Ok(Outcome { report, spectrum, distances, grams, sample_ids, md: problem.md })
}

impl Report {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn skipped(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.kind == CheckKind::Skipped)
    }
}

pub fn wants(config: &RunConfig, task: Task) -> bool {
    config.tasks.contains(&task)
}
