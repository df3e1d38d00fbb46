use std::path::PathBuf;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),

    #[error("tape is stale: {0} changed since the forward pass")]
    StaleTape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("NaN gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("loss closure is not deterministic (f = {first} then {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("mean mesh is empty; guide model is undertrained")]
    EmptyMesh,

    #[error("training diverged in {stage} at step {step}: loss = {loss}")]
    Diverged { stage: String, step: usize, loss: f64 },

    #[error("fitting diverged in phase {phase} at iteration {iteration}")]
    FitDiverged { phase: usize, iteration: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

pub(crate) fn ensure_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::shape(context, expected, got))
    }
}
