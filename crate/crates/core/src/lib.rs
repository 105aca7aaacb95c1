//! Amodal completion of circular occlusions by ruled minimal surfaces in
//! the roto-translation group `R² x S¹`.
//!
//! The pipeline lifts the occlusion circle through the level-line
//! direction of an intensity field ([`lift`]), pairs boundary points that
//! can be joined by a horizontal geodesic ([`solver`]), and assembles the
//! joining rules into a spanning surface that is rasterized back onto the
//! image plane ([`surface`]).

// `!(x > eps)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod geometry;
pub mod lift;
mod numeric;
pub mod solver;
pub mod surface;

pub use error::{Error, Result};
pub use field::{builtin, AnalyticField, IntensityField, RasterField};
pub use geometry::{Connection, Pose, Rule, TangentCoords, Traversal};
pub use lift::{LiftedBoundary, OcclusionDisk, SpecialPoints};
pub use surface::{CompletionRaster, GridSpec, SpanningSurface};
