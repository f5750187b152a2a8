use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}: row {row}: {message}")]
    Parse {
        file: String,
        row: usize,
        message: String,
    },

    #[error("{file}: empty dataset")]
    EmptyDataset { file: String },

    #[error("{file}: row {row}: inconsistent case placement for case {case_id}: {first} vs {second}")]
    InconsistentCase {
        file: String,
        row: usize,
        case_id: String,
        first: String,
        second: String,
    },

    #[error("unassigned case {0}")]
    UnassignedCase(String),

    #[error("unknown location {0}")]
    UnknownLocation(String),

    #[error("unknown case {0}")]
    UnknownCase(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("location {0} has no historical units and cannot be a propensity class")]
    EmptyClass(String),

    #[error("positivity violation: {count} individuals assigned to locations with propensity <= {floor} (locations: {locations})")]
    Positivity {
        count: usize,
        floor: f64,
        locations: String,
    },

    #[error("IPW undefined: no overlap between policy and historical assignment")]
    NoOverlap,

    #[error("infeasible assignment: {0}")]
    Infeasible(String),

    #[error("assignment search exceeded {0} branch nodes without proving optimality")]
    SearchLimit(usize),

    #[error("enumeration guard exceeded: {0} assignment vectors (limit {1})")]
    EnumerationGuard(u128, u128),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
