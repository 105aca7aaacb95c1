use thiserror::Error;

use crate::geometry::Pose;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("poses are not accessible (residual {residual:e} exceeds tolerance {tol:e})")]
    NotAccessible { residual: f64, tol: f64 },

    #[error("degenerate connecting radius between {from:?} and {to:?}")]
    DegenerateRadius { from: Pose, to: Pose },

    #[error("parameter {param} outside rule interval [{lo}, {hi}]")]
    OutOfRange { param: f64, lo: f64, hi: f64 },

    #[error("critical point of the intensity at ({x}, {y}): |grad I| = {norm:e}")]
    CriticalPoint { x: f64, y: f64, norm: f64 },

    #[error("critical point on the occlusion boundary at t = {t} (|grad I| = {norm:e})")]
    CriticalPointOnBoundary { t: f64, norm: f64 },

    #[error("lift angle jumps by more than pi/2 even at {samples} samples")]
    UnresolvableBranch { samples: usize },

    #[error("branch stalled at (t, u) = ({t}, {u}): {reason}")]
    BranchStall { t: f64, u: f64, reason: String },

    #[error("no branch starts at t = {t}")]
    NoBranch { t: f64 },

    #[error("occlusion is not Case 1: {reason}")]
    NotCase1 { reason: String },

    #[error("rule construction failed for (t, u) = ({t}, {u})")]
    RuleConstructionFailure {
        t: f64,
        u: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("occlusion disk lies outside the field domain")]
    DiskOutsideDomain,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Whether the error reflects a degenerate input (as opposed to a
    /// solver failure on valid input).
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self,
            Error::CriticalPoint { .. }
                | Error::CriticalPointOnBoundary { .. }
                | Error::UnresolvableBranch { .. }
                | Error::DegenerateRadius { .. }
                | Error::DiskOutsideDomain
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Image(_)
        )
    }
}
