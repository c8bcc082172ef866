//! Classical geometry of many-body quantum scattering at the sphere at
//! infinity: collision-plane lattices, compressed phase space, piecewise
//! Hamilton flows breaking at collision planes with energy and external
//! momentum conservation, quantitative length/break bounds, and the
//! Lagrangian relation calculus behind the scattering-matrix wave front
//! relation.
//!
//! All core types are generic over the scalar via [`float::Float`]
//! (`f32` or `f64`); the aliases below fix the `f64` instantiation used by
//! the CLI and the test suites.

pub mod error;
pub mod flow;
pub mod lagrangian;
pub mod lattice;
pub mod linalg;
pub mod phase;
pub mod ray;
pub mod tol;

mod float;

pub use error::{Error, Result};
pub use float::Float;

/// `f64` instantiations of the main types.
pub type Subspace = lattice::Subspace<f64>;
pub type ClusterLattice = lattice::ClusterLattice<f64>;
pub type SpectralModel = phase::SpectralModel<f64>;
pub type Channel = phase::Channel<f64>;
pub type CompressedPoint = phase::CompressedPoint<f64>;
pub type FiberPoint = phase::FiberPoint<f64>;
pub type FlowSegment = flow::FlowSegment<f64>;
pub type BrokenRay = ray::BrokenRay<f64>;
pub type GraphLagrangian = lagrangian::GraphLagrangian<f64>;
pub type ElementaryRelation = lagrangian::ElementaryRelation<f64>;
