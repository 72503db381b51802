use thiserror::Error;

pub type Result<T> = std::result::Result<T, StatlapError>;

#[derive(Debug, Error)]
pub enum StatlapError {
    #[error("metric is not positive definite at node {node} (condition estimate {condition:e})")]
    SingularMetric { node: usize, condition: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model `{0}` has no closed-form metric and Amari-Chentsov tensor")]
    NoClosedForm(String),

    #[error("parameter {value} on axis {axis} lies outside the valid region of `{model}`")]
    ParameterOutOfRange { model: String, axis: usize, value: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("{what}: forms disagree by {discrepancy:e} (tolerance {tolerance:e})")]
    InternalInconsistency { what: &'static str, discrepancy: f64, tolerance: f64 },

    #[error("{what}: forms disagree by {discrepancy:e} (tolerance {tolerance:e})")]
    FormMismatch { what: &'static str, discrepancy: f64, tolerance: f64 },

    #[error("posterior evidence {evidence:e} is numerically zero")]
    ZeroEvidence { evidence: f64 },

    #[error("posterior resolves to {support:.2} effective nodes on axis {axis} (need at least {required})")]
    UnderResolved { axis: usize, support: f64, required: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
