use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no usable rows for dataset: {0}")]
    EmptyDataset(String),

    #[error("underdetermined design: {rows} rows for {columns} parameters")]
    Underdetermined { rows: usize, columns: usize },

    #[error("rank-deficient design; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("quantile solver did not converge after {iterations} iterations (objective trace tail: {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("inner quantile regression failed at alpha = {alpha}: {source}")]
    InnerFit {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("grid argmin on boundary at alpha = {alpha} (grid [{lower}, {upper}])")]
    GridBoundary {
        alpha: f64,
        lower: f64,
        upper: f64,
        profile: Vec<crate::ivqr::WaldPoint>,
    },

    #[error("grid search unstable: {failed} of {total} inner fits failed")]
    GridInstability { failed: usize, total: usize },

    #[error("non-finite Wald statistic at incumbent alpha = {0}")]
    NonFiniteWald(f64),

    #[error("smoothed estimator did not converge after {restarts} restarts (last iterate {last:?}, moment norm {moment_norm:e})")]
    SmoothedNonConvergence {
        restarts: usize,
        last: Vec<f64>,
        moment_norm: f64,
    },

    #[error("both estimators failed: grid: {grid}; smoothed: {smoothed}")]
    BothFailed { grid: Box<Error>, smoothed: Box<Error> },

    #[error("{failed} of {total} quantile fits failed: {detail}")]
    QuantileGrid {
        failed: usize,
        total: usize,
        detail: String,
    },

    #[error("Monte Carlo study failed: {failed} of {total} replications errored; first: {first}")]
    Study {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("configuration mismatch: {0}")]
    Mismatch(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
