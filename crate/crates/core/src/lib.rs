//! Numerical laboratory for the inverse mean curvature flow of spacelike graphs
//! in asymptotically Robertson-Walker (ARW) spacetimes.
//!
//! The crate is organised bottom-up:
//!
//! * [`background`] builds and certifies conformal scale factors `f(τ)`.
//! * [`cosmology`] derives scale factors from a perfect-fluid Friedmann constraint.
//! * [`geometry`] holds the periodic grids, finite-difference operators and the
//!   pointwise curvature of a graph `x⁰ = u(x)`.
//! * [`flow`] integrates `∂u/∂t = v/F` by the method of lines.
//! * [`analysis`] turns diagnostic time series into convergence and rate verdicts.
//! * [`transition`] follows Lagrangian markers through the rescaled flow `y(s)`
//!   and checks the one-sided limits that make it `C³` across `s = 0`.
//! * [`io`] covers run configuration, snapshots, CSV/JSON output and SVG plots.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod background;
pub mod cosmology;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod integrator;
pub mod io;
pub mod transition;

mod stats;

pub use error::{Error, Result};
