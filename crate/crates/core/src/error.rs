use thiserror::Error;

/// Errors raised by the estimation, reduction and classification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error(
        "matrix is not positive definite (eigenvalues in [{min_eigenvalue:e}, {max_eigenvalue:e}]); \
         compress the pencil onto the range of W with range_projection first"
    )]
    NotPositiveDefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("reduced dimension {k} exceeds the numerical rank {rank} of B (rank is at most min(g-1, p))")]
    RankBound { k: usize, rank: usize },

    #[error("trace-ratio solution is not unique: eigenvalue gap {gap:e} is below tolerance")]
    NonUnique { gap: f64 },

    #[error("no non-degenerate subset found after {attempts} draws")]
    SubsetsExhausted { attempts: usize },

    #[error(
        "variable {index} has zero Qn scale; remove constant variables before robust estimation"
    )]
    ZeroScale { index: usize },

    #[error("group {group}: {source}")]
    Group {
        group: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn in_group(self, group: usize) -> Self {
        Error::Group {
            group,
            source: Box::new(self),
        }
    }

    /// `true` for failures of the numerics (as opposed to malformed input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Validation(_)
            | Error::NotSymmetric { .. }
            | Error::RankBound { .. }
            | Error::ZeroScale { .. } => false,
            Error::Group { source, .. } => source.is_numerical(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
