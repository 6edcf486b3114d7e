//! Positivity diagnostics for multivariate exposure mixtures.
//!
//! The observed exposure cloud defines a convex hull; intervention values
//! outside it can only be reached by model extrapolation. This crate
//! measures that ([`geometry`], [`diagnostics`]), fits basis-expansion
//! outcome models ([`splinereg`]) and computes overall, feasible,
//! extrapolation and weighted causal contrasts ([`estimands`]).

pub mod diagnostics;
pub mod estimands;
pub mod geometry;
pub mod ingest;
pub mod replicate;
pub mod simulate;
pub mod splinereg;
pub mod stats;

pub use geometry::{HullConfig, HullEngine, HullMode, PointSet, Projection};
