//! Run configuration: a single JSON document, validated before any work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statlap_core::models::{ChartSpec, SyntheticSpec};
use statlap_core::spectral::Solver;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog model on a chart.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// Analytic test manifold with `C ≠ 0` and `f ≠ 0`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Flat torus, `g = I`, `C = 0`.
    #[serde(default)]
    pub flat: Option<FlatConfig>,
    /// Field container with `g` and `C`.
    #[serde(default)]
    pub fields: Option<FieldsConfig>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub f: PotentialConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub vdd: Option<VddConfig>,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub fixed_params: BTreeMap<String, f64>,
    pub chart: ChartSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    pub points: Vec<usize>,
    pub periods: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsConfig {
    pub path: PathBuf,
    #[serde(default = "default_metric_name")]
    pub metric: String,
    #[serde(default = "default_tensor_name")]
    pub tensor: String,
}

fn default_metric_name() -> String {
    "g".into()
}

fn default_tensor_name() -> String {
    "C".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialConfig {
    #[default]
    Zero,
    LogSqrtDetG,
    /// The analytic potential of a synthetic manifold.
    Synthetic,
    Explicit(ExplicitPotential),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitPotential {
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    /// Field name inside the `fields` container.
    #[serde(default)]
    pub field: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    /// Number of eigenpairs; the full spectrum when absent.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_solver")]
    pub solver: Solver,
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_solver() -> Solver {
    Solver::Auto
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig { k: None, tolerance: default_tolerance(), solver: default_solver() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Spectrum,
    VddMatrix,
    KernelGram,
    Verify,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VddConfig {
    pub t: f64,
    /// Node ids; every `stride`-th node when absent.
    #[serde(default)]
    pub nodes: Option<Vec<usize>>,
    #[serde(default)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub times: Vec<f64>,
    #[serde(default)]
    pub samples: Option<Vec<Sample>>,
    /// JSON-lines file of `{"id": ..., "value": ...}` records.
    #[serde(default)]
    pub samples_file: Option<PathBuf>,
    /// Draw samples from the model at `theta`.
    #[serde(default)]
    pub draw: Option<DrawConfig>,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Also evaluate the double-integral form on the first pair.
    #[serde(default = "default_true")]
    pub double_integral_check: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawConfig {
    pub theta: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorConfig {
    #[default]
    Uniform,
    /// Node values, normalized against `ρ` before use.
    Values(Vec<f64>),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.validate()?;
        Ok(config)
    }

    /// Relative file references are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(dir) = &mut self.output_dir {
            fix(dir);
        }
        if let Some(fields) = &mut self.fields {
            fix(&mut fields.path);
        }
        if let Some(file) = self.kernel.as_mut().and_then(|k| k.samples_file.as_mut()) {
            fix(file);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let sources = [self.model.is_some(), self.synthetic.is_some(), self.flat.is_some(), self.fields.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(CliError::Config("exactly one of `model`, `synthetic`, `flat`, `fields` is required".into()));
        }
        if !self.alpha.is_finite() {
            return Err(CliError::Config("`alpha` must be finite".into()));
        }
        if self.tasks.is_empty() {
            return Err(CliError::Config("`tasks` is empty".into()));
        }
        match &self.f {
            PotentialConfig::Synthetic if self.synthetic.is_none() => {
                return Err(CliError::Config("`f: synthetic` needs a `synthetic` manifold".into()));
            }
            PotentialConfig::Explicit(e) => match (&e.values, &e.field) {
                (Some(_), None) => {}
                (None, Some(_)) if self.fields.is_some() => {}
                (None, Some(_)) => return Err(CliError::Config("`f.explicit.field` needs a `fields` container".into())),
                _ => return Err(CliError::Config("`f.explicit` needs exactly one of `values`, `field`".into())),
            },
            _ => {}
        }
        if let Some(k) = self.spectral.k {
            if k == 0 {
                return Err(CliError::Config("`spectral.k` must be positive".into()));
            }
        }
        if !(self.spectral.tolerance > 0.0) {
            return Err(CliError::Config("`spectral.tolerance` must be positive".into()));
        }
        if self.tasks.contains(&Task::VddMatrix) && self.vdd.is_none() {
            return Err(CliError::Config("task `vdd-matrix` needs a `vdd` block".into()));
        }
        if let Some(vdd) = &self.vdd {
            if !(vdd.t.is_finite() && vdd.t > 0.0) {
                return Err(CliError::Config("`vdd.t` must be positive".into()));
            }
            if vdd.nodes.is_some() && vdd.stride.is_some() {
                return Err(CliError::Config("`vdd` takes `nodes` or `stride`, not both".into()));
            }
            if vdd.stride == Some(0) {
                return Err(CliError::Config("`vdd.stride` must be positive".into()));
            }
        }
        if self.tasks.contains(&Task::KernelGram) {
            if self.kernel.is_none() {
                return Err(CliError::Config("task `kernel-gram` needs a `kernel` block".into()));
            }
            if self.model.is_none() {
                return Err(CliError::Config("task `kernel-gram` needs a catalog `model`".into()));
            }
        }
        if let Some(kernel) = &self.kernel {
            if kernel.times.is_empty() || kernel.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(CliError::Config("`kernel.times` must be a nonempty list of nonnegative times".into()));
            }
            let given = [kernel.samples.is_some(), kernel.samples_file.is_some(), kernel.draw.is_some()];
            if given.iter().filter(|&&s| s).count() != 1 {
                return Err(CliError::Config("`kernel` needs exactly one of `samples`, `samples_file`, `draw`".into()));
            }
            if let Some(draw) = &kernel.draw {
                if draw.count == 0 {
                    return Err(CliError::Config("`kernel.draw.count` must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Reads `{"id": ..., "value": ...}` records, one per line; blank lines are skipped.
pub fn read_samples_file(path: &Path) -> Result<Vec<Sample>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
