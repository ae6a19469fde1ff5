use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("design matrix is rank deficient: column(s) {columns:?} are linearly dependent on earlier columns")]
    RankDeficient { columns: Vec<usize> },

    #[error("SNP {0} has minor allele frequency {1:.4} below 0.01")]
    LowMaf(String, f64),

    #[error("SNP {0} is constant; correlation undefined")]
    ConstantSnp(String),

    #[error("SNP collinear with covariates")]
    CollinearSnp,

    #[error("degenerate imputed expression")]
    DegenerateExpression,

    #[error("gene is untestable: {0}")]
    Untestable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("model file {path}: {message}")]
    Model { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
