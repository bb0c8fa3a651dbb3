use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular grasp: contact matrix condition number {condition:.3e}")]
    SingularGrasp { condition: f64 },
    #[error("rolling kinematics degenerate: relative curvature condition number {condition:.3e}")]
    RollingDegenerate { condition: f64 },
    #[error("chart singularity at ({a}, {b})")]
    ChartSingularity { a: f64, b: f64 },
    #[error("degenerate virtual frame: contacts are collinear")]
    DegenerateFrame,
    #[error("quadratic program infeasible")]
    Infeasible,
    #[error("grasp initialization failed: residual {residual:.3e} after {iterations} iterations")]
    Initialization { residual: f64, iterations: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("override `{key}`: {reason}")]
    Override { key: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite<'a, I>(context: &'static str, values: I) -> Result<()>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
