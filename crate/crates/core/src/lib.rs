//! Numerical robust-safety certification for planar differential inclusions.
//!
//! The crate builds, on a uniform grid over a rectangular window, the chain
//! of objects needed to turn robust safety of `ẋ ∈ F(x)` into a smooth
//! barrier certificate:
//!
//! 1. the reachable set of the initial set under the inflated inclusion
//!    `ẋ ∈ F(x) + ε(x)𝔹` ([`reachability`]),
//! 2. the signed time-to-impact function on a band around its boundary and
//!    its extension to the whole window by projection ([`barrier`]),
//! 3. mollification of the shifted barrier into a continuously
//!    differentiable function with analytic gradient ([`smoothing`]),
//! 4. sign, decrease, infinitesimal and invariance checks ([`certify`]).
//!
//! [`scenario`] and [`pipeline`] glue the stages together for the `incluse`
//! command-line tool.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod certify;
mod error;
pub mod grid;
pub mod hull;
pub mod inclusion;
pub mod io;
pub mod pipeline;
pub mod reachability;
pub mod regions;
pub mod scenario;
pub mod smoothing;

pub use error::{Error, Result};
pub use grid::{ScalarField, Window};
pub use regions::{HalfSpace, Region, Shape};

/// A point (or velocity) in the plane.
pub type Point = nalgebra::Vector2<f64>;

/// Shorthand constructor for [`Point`].
#[inline]
pub fn pt(x: f64, y: f64) -> Point {
    Point::new(x, y)
}
