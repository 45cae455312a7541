use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the crate. Every message starts with the module
/// that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: invalid parameter: {msg}")]
    Param { module: &'static str, msg: String },

    #[error("lin_geom: rank-deficient neighborhood around point {0} (zero covariance)")]
    RankDeficient(usize),

    #[error("{source_name}:{line}: parse error: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("dataset: generation failed: {0}")]
    Generation(String),

    #[error("ecomann: training diverged (non-finite loss) at epoch {0}")]
    Diverged(usize),

    #[error("ecomann: {0}")]
    Numerical(String),

    #[error("planner: stage {stage} failed to reach the next manifold after {nodes} nodes")]
    StageFailed { stage: usize, nodes: usize },

    #[error("planner: {0}")]
    Planning(String),

    #[error("eval: {0}")]
    Eval(String),

    #[error("cli: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Param {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            msg: msg.into(),
        }
    }
}
