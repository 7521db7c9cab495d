use thiserror::Error;

/// Invalid or unresolvable configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("missing required field `{0}`")]
    Missing(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("mesh line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh is not closed: edge ({0}, {1}) is used by {2} faces")]
    OpenMesh(usize, usize, usize),
    #[error("degenerate mesh: {0}")]
    Degenerate(String),
    #[error("sample count must be positive")]
    NoSamples,
}

/// Non-finite value inside a contact update.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("non-finite contact input at point {point}, body {body}")]
pub struct ContactError {
    pub point: usize,
    pub body: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultKind {
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error("non-finite object pose")]
    NonFinitePose,
    #[error("object pose change {change:.3e} exceeds bound {bound:.3e}")]
    Divergence { change: f64, bound: f64 },
    #[error("expected {expected} controls, got {got}")]
    ControlCount { expected: usize, got: usize },
}

/// A numerical fault raised while stepping, tagged with the step index.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("step {step}: {kind}")]
pub struct StepFault {
    pub step: usize,
    pub kind: FaultKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("contact model `{0}` is not differentiable; use `nhs`, `pf` or `pff`")]
    UnsupportedModel(&'static str),
    #[error(transparent)]
    Fault(#[from] StepFault),
    #[error("control sequence has {got} entries, expected a multiple of {per_step}")]
    Shape { got: usize, per_step: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("all {0} rollouts faulted")]
    AllFaulted(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("plant fault: {0}")]
    Plant(StepFault),
}
