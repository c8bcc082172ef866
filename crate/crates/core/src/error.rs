//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by lattice construction, phase-space queries, flows, ray
/// builders, and the Lagrangian calculus.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid subspace: {0}")]
    InvalidSubspace(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown cluster id {0}")]
    UnknownCluster(usize),

    #[error("vector is not unit length: |y| = {0}")]
    NotUnitVector(f64),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("degenerate base point (w = 0)")]
    DegenerateBasePoint,

    #[error("flow parameter {s} outside segment range [{lo}, {hi}]")]
    ParameterOutOfRange { s: f64, lo: f64, hi: f64 },

    #[error("anchor kinetic energy |ξ₀|² = {got} does not match σ = {expected}")]
    EnergyMismatch { expected: f64, got: f64 },

    #[error("zero-speed segment cannot be reparametrized")]
    ZeroSpeed,

    #[error("one-sided derivative unavailable on the {side} side at t = {t0}")]
    SideUnavailable { side: &'static str, t0: f64 },

    #[error("channel closed: λ − ε − |ξ_c|² = {margin} < 0")]
    ChannelClosed { margin: f64 },

    #[error("degenerate segment: {0}")]
    DegenerateSegment(String),

    #[error("threshold set is not discrete; bound computation unsupported")]
    NotDiscrete,

    #[error("transversality failure: eigmin(A′ − B′) = {eigmin} below threshold {threshold} at chain position {position}")]
    TransversalityFailure {
        eigmin: f64,
        threshold: f64,
        position: usize,
    },

    #[error("rank-deficient spanning set: rank {rank} < {expected} vectors")]
    RankDeficient { rank: usize, expected: usize },

    #[error("break conservation violated at break {index}: defect {defect}")]
    ConservationMismatch { index: usize, defect: f64 },

    #[error("invalid break string: {0}")]
    InvalidString(String),

    #[error("ray construction failed: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
