//! Crate-wide error type.

use crate::geom::Frame;
use crate::pile::PileDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("frame mismatch: cannot chain pose into `{expected}` with pose out of `{found}`")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("point cloud has no labels")]
    MissingLabels,

    #[error("inventory is empty")]
    EmptyInventory,

    #[error("bricks {a} and {b} interpenetrate by {depth:.4} m")]
    OverlappingLayout { a: u32, b: u32, depth: f64 },

    #[error("no pile cluster within the expected size window")]
    PileNotFound(PileDiagnostics),

    #[error("no marker cluster found")]
    MarkerNotFound,

    #[error("marker side lengths {long:.3} m / {short:.3} m fail leg validation")]
    MarkerInvalid { long: f64, short: f64 },

    #[error("no scan points left after preprocessing")]
    EmptyAfterPreprocess,

    #[error("alignment diverged: {correspondences} correspondences at iteration {iteration}")]
    Diverged {
        iteration: usize,
        correspondences: usize,
    },

    #[error("blueprint cannot be built left to right")]
    Infeasible,

    #[error("quad is degenerate (near-collinear corners)")]
    DegenerateQuad,

    #[error("no wall segment pair found")]
    WallNotFound,

    #[error("timestamps must be monotone: got {got} after {last}")]
    NonMonotoneTime { last: f64, got: f64 },

    #[error("malformed {format} data: {detail}")]
    Parse {
        format: &'static str,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Clean "nothing detected" outcomes, as opposed to malformed input or
    /// numerical failure. The CLI maps these to a distinct exit code.
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            Error::PileNotFound(_) | Error::MarkerNotFound | Error::WallNotFound
        )
    }
}
