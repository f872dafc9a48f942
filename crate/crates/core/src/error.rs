use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("missing or invalid header (expected `t_ms,power_dbm,group`)")]
    BadHeader,

    #[error("duplicate timestamp at line {line}")]
    DuplicateTimestamp { line: usize },

    #[error("non-monotone timestamp at line {line}")]
    NonMonotoneTimestamp { line: usize },

    #[error("zero variance")]
    ZeroVariance,

    #[error("series too short: need at least {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("empty tail at threshold u = {u}")]
    EmptyTail { u: f64 },

    #[error("need at least {needed} exceedances, got {got}")]
    TooFewExceedances { needed: usize, got: usize },

    #[error("degenerate tail sample")]
    DegenerateTail,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("timestamp {t} ms lies outside every segment")]
    OutsideSegments { t: u64 },

    #[error("group `{group}`: {source}")]
    Group {
        group: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no feasible threshold for group `{group}`")]
    InfeasibleThreshold { group: String },

    #[error("invalid segment spec `{label}`: {message}")]
    InvalidSpec { label: String, message: String },
}

impl Error {
    pub(crate) fn in_group(self, group: &str) -> Error {
        Error::Group {
            group: group.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures that come from the data being unable to support an
    /// analysis (as opposed to malformed input).
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::EmptyTail { .. }
            | Error::TooFewExceedances { .. }
            | Error::DegenerateTail
            | Error::InfeasibleThreshold { .. } => true,
            Error::Group { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}
