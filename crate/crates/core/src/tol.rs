//! Central tolerance constants.
//!
//! Collision configurations are exact-rational in practice and double
//! precision orthonormalization noise is ~1e-14, so the thresholds below
//! leave several orders of magnitude of headroom while still rejecting
//! genuinely distinct geometry.

/// Orthonormality of subspace bases: `‖BᵀB − I‖_max` must stay below this.
pub const ORTHONORMALITY: f64 = 1e-12;

/// Subspace equality / intersection rank decisions (principal-angle scale).
pub const SUBSPACE_RANK: f64 = 1e-10;

/// Stratum membership τ_mem: threshold on `|π^b y|` for a unit vector `y`.
pub const MEMBERSHIP: f64 = 1e-9;

/// Unit-vector check `||y| − 1|`.
pub const UNIT_VECTOR: f64 = 1e-9;

/// Default energy tolerance for spectral membership tests.
pub const ENERGY: f64 = 1e-9;

/// Kinetic-energy consistency of flow-segment anchors, `||ξ₀|² − σ|`.
pub const SEGMENT_ENERGY: f64 = 1e-9;

/// Continuity and conservation checks at ray breaks.
pub const BREAK_CONSERVATION: f64 = 1e-9;

/// Exact algebraic identities evaluated in floating point (τ²+|μ|²=|ξ|², …).
pub const IDENTITY: f64 = 1e-12;

/// Floor for positive-definiteness certificates, relative to a trace scale.
pub const DEFINITENESS_FLOOR: f64 = 1e-10;

/// Residual bound for symplectic-form (Lagrangian) certificates.
pub const SYMPLECTIC_RESIDUAL: f64 = 1e-10;

/// Guard band keeping arc parameters strictly inside `(s₀, s₀+π)`.
pub const ARC_GUARD: f64 = 1e-6;

/// Line–plane intersection residual accepted by the shooting constructor.
pub const PLANE_HIT: f64 = 1e-9;
