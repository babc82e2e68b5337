//! Periodic grids and the pointwise geometry of graphs `x⁰ = u(x)` in the conformal
//! ambient metric `−(dx⁰)² + σ_ij(x⁰, x) dx^i dx^j`.

mod bundle;
mod domain;

pub use bundle::{curvature_bundle, umbilicity, CurvatureBundle, GraphState, Umbilicity, V_MIN};
pub use domain::{Derivatives, SpatialDomain, StencilOrder};
