use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite (pivot {pivot} is {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("class {0:?} has no samples")]
    EmptyClass(String),

    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("block {0:?} is not isotropic; the weighted squared-distance rule requires isotropic covariances")]
    RequiresIsotropic(String),

    #[error("model has no joint classifier over the concatenated features")]
    MissingJointModel,

    #[error("class {label:?} has {count} samples; at least 2 are needed to split")]
    ClassTooSmall { label: String, count: usize },

    #[error("parse error at row {row}, column {column:?}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("block dimensions sum to {declared} but the data has {found} feature columns")]
    BlockDimMismatch { declared: usize, found: usize },

    #[error("missing final \"label\" column")]
    MissingLabelColumn,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("class {label:?}: joint covariance is not positive definite after coupling")]
    CouplingNotPositiveDefinite { label: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
