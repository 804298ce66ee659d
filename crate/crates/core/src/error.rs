use std::fmt;

/// A single problem found while validating a scenario configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// 1-based line in the source text, when it could be located.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n{}", format_issues(.0))]
    InvalidConfig(Vec<ConfigIssue>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("operator is not Hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("ill-conditioned system at {at}: estimated condition number {condition:.3e}")]
    Conditioning { at: String, condition: f64 },

    #[error(
        "T-kernel column at mu = {mu} is ill-conditioned (condition {condition:.3e}); \
         near an embedded eigenvalue use solve_projected"
    )]
    ColumnConditioning { mu: f64, condition: f64 },

    #[error("{} T-kernel column(s) failed at mu = {:?}", .0.len(), .0)]
    TKernelColumns(Vec<f64>),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported check: {0}")]
    Unsupported(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
