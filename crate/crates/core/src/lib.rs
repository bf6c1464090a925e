//! Numerical toolkit for two-dimensional gradient interface models with a
//! delta-pinning reward at height zero: exact small-region enumeration of the
//! pinned measure, Gibbs sampling of height fields, killed random walks in
//! dynamic conductance environments, and coarse-grained dry/clean analysis of
//! pinned configurations.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod estimators;
pub mod gibbs;
pub mod hswalk;
pub mod lattice;
pub mod numerics;
pub mod oracle;
pub mod potentials;
pub mod renorm;
pub mod seed;
pub mod stats;
