use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("eigenvalue iteration did not converge")]
    EigenFailure,

    #[error("observer mode mismatch: {0}")]
    Mode(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error(
        "regulator equations unsolvable for this plant/leader pair{}: residual {residual:.3e} exceeds tolerance {tol:.3e}",
        follower_suffix(.follower)
    )]
    Unsolvable {
        follower: Option<usize>,
        residual: f64,
        tol: f64,
    },

    #[error("pair (A, B) not stabilizable{}: {reason}", follower_suffix(.follower))]
    NotStabilizable {
        follower: Option<usize>,
        reason: String,
    },

    #[error("state magnitude exceeded {limit:e} at t = {t}")]
    Overflow { t: usize, limit: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn follower_suffix(follower: &Option<usize>) -> String {
    match follower {
        Some(i) => format!(" (follower {i})"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a follower index to solver and synthesis errors.
    pub fn for_follower(self, index: usize) -> Self {
        match self {
            Error::Unsolvable { residual, tol, .. } => Error::Unsolvable {
                follower: Some(index),
                residual,
                tol,
            },
            Error::NotStabilizable { reason, .. } => Error::NotStabilizable {
                follower: Some(index),
                reason,
            },
            other => other,
        }
    }
}
