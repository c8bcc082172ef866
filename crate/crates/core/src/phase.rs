//! Compressed scattering phase space: channels and thresholds, sc-covector
//! coordinates, the characteristic variety `Σ̇(λ)`, fiber preimages under
//! `π̂_b`, radial sets, and the Mourre gap functions `d^a`, `d^{a,κ}`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::lattice::{ClusterId, ClusterLattice, FREE};
use crate::tol;

/// A channel `α = (a, m)`: a bound state of the subsystem Hamiltonian `H^a`
/// with energy `ε_α ≤ 0`. The index only labels; the geometry depends on the
/// energy value alone (multiplicities are ignored).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel<T: Float> {
    pub cluster: ClusterId,
    pub index: usize,
    pub energy: T,
}

/// Index of a channel in its [`SpectralModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelId(pub usize);

/// User-supplied hypothesis for non-discrete threshold sets: the kinetic
/// energy along rays assumes at most `m` values below `c0`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyHypothesis<T: Float> {
    pub c0: T,
    pub m: usize,
}

/// Channel table together with the derived threshold sets `Λ_a`, `Λ′_a`.
///
/// Eigenvalues are exact user-supplied reals; all sets are finite lists.
#[derive(Debug, Clone)]
pub struct SpectralModel<T: Float> {
    channels: Vec<Channel<T>>,
    /// `pspec(H^a)` per cluster, sorted ascending, deduplicated at 1e-12.
    pspec: Vec<Vec<T>>,
    discrete: bool,
}

impl<T: Float> SpectralModel<T> {
    /// Validates a channel table against the lattice and derives the
    /// spectral sets. The free cluster's unique channel `ε = 0` is added
    /// when absent.
    pub fn new(lattice: &ClusterLattice<T>, mut channels: Vec<Channel<T>>) -> Result<Self> {
        if !channels
            .iter()
            .any(|c| c.cluster == FREE && c.energy == T::zero())
        {
            channels.push(Channel {
                cluster: FREE,
                index: 0,
                energy: T::zero(),
            });
        }
        for c in &channels {
            if c.cluster.0 >= lattice.len() {
                return Err(Error::UnknownCluster(c.cluster.0));
            }
            if c.energy > T::zero() {
                return Err(Error::InvalidChannel(format!(
                    "channel ({}, {}) has positive energy {}",
                    c.cluster, c.index, c.energy.to_f64()
                )));
            }
            if c.cluster == FREE && c.energy != T::zero() {
                return Err(Error::InvalidChannel(
                    "the free cluster has the single eigenvalue 0".to_string(),
                ));
            }
        }
        let mut pspec = vec![Vec::new(); lattice.len()];
        for c in &channels {
            pspec[c.cluster.0].push(c.energy);
        }
        for list in &mut pspec {
            list.sort_by(|x, y| x.partial_cmp(y).unwrap());
            list.dedup_by(|x, y| (*x - *y).abs() <= T::c(1e-12));
        }
        Ok(Self {
            channels,
            pspec,
            discrete: true,
        })
    }

    /// Marks the threshold set as non-discrete (enumeration refuses it; the
    /// verification and bound paths then require an [`EnergyHypothesis`]).
    pub fn with_non_discrete(mut self) -> Self {
        self.discrete = false;
        self
    }

    pub fn is_discrete(&self) -> bool {
        self.discrete
    }

    pub fn channels(&self) -> &[Channel<T>] {
        &self.channels
    }

    pub fn channel(&self, id: ChannelId) -> Result<&Channel<T>> {
        self.channels
            .get(id.0)
            .ok_or_else(|| Error::InvalidChannel(format!("no channel with id {}", id.0)))
    }

    /// Id of the unique free-cluster channel (ε = 0).
    pub fn free_channel(&self) -> ChannelId {
        ChannelId(
            self.channels
                .iter()
                .position(|c| c.cluster == FREE)
                .expect("the free channel always exists"),
        )
    }

    /// Channels whose cluster plane contains `X_a`, i.e. usable by legs
    /// propagating on `a`.
    pub fn channels_for(&self, lattice: &ClusterLattice<T>, a: ClusterId) -> Vec<ChannelId> {
        (0..self.channels.len())
            .map(ChannelId)
            .filter(|&id| lattice.plane_subset(a, self.channels[id.0].cluster))
            .collect()
    }

    /// Distinct eigenvalues of `H^a`.
    pub fn pspec(&self, a: ClusterId) -> &[T] {
        &self.pspec[a.0]
    }

    /// `Λ_a = ∪_{b<a} pspec(H^b)`: thresholds of `H^a`.
    pub fn lambda_a(&self, lattice: &ClusterLattice<T>, a: ClusterId) -> Vec<T> {
        let mut out = Vec::new();
        for b in lattice.ids() {
            if b != a && lattice.leq(b, a) {
                out.extend_from_slice(self.pspec(b));
            }
        }
        sort_dedup(&mut out);
        out
    }

    /// `Λ′_a = Λ_a ∪ pspec(H^a) = ∪_{b≤a} pspec(H^b)`.
    pub fn lambda_prime(&self, lattice: &ClusterLattice<T>, a: ClusterId) -> Vec<T> {
        let mut out = self.lambda_a(lattice, a);
        out.extend_from_slice(self.pspec(a));
        sort_dedup(&mut out);
        out
    }

    /// Global threshold set `Λ₁` (all proper-subsystem eigenvalues).
    pub fn lambda_one(&self, lattice: &ClusterLattice<T>) -> Vec<T> {
        self.lambda_a(lattice, crate::lattice::ORIGIN)
    }
}

fn sort_dedup<T: Float>(v: &mut Vec<T>) {
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v.dedup_by(|x, y| (*x - *y).abs() <= T::c(1e-12));
}

/// sc-covector coordinates of `(w, ξ)`: boundary defining function `x`,
/// direction `y`, and the fiber splitting `(τ, μ)`.
#[derive(Debug, Clone)]
pub struct ScCoordinates<T: Float> {
    pub x: T,
    pub y: DVector<T>,
    pub tau: T,
    pub mu: DVector<T>,
}

/// `x = 1/|w|`, `y = w/|w|`, `τ = −y·ξ`, `μ = ξ − (y·ξ)y`; the identity
/// `τ² + |μ|² = |ξ|²` holds by construction.
pub fn sc_coordinates<T: Float>(w: &DVector<T>, xi: &DVector<T>) -> Result<ScCoordinates<T>> {
    let r = w.norm();
    if r == T::zero() {
        return Err(Error::DegenerateBasePoint);
    }
    let y = w / r;
    let tau = -y.dot(xi);
    let mu = xi + &y * tau;
    Ok(ScCoordinates {
        x: T::one() / r,
        y,
        tau,
        mu,
    })
}

/// A point of the compressed phase space over `C′_a`: direction `y ∈ C_a`
/// and external covector `ξ_a ∈ X_a`, both stored in ambient coordinates.
#[derive(Debug, Clone)]
pub struct CompressedPoint<T: Float> {
    pub cluster: ClusterId,
    pub y: DVector<T>,
    pub xi: DVector<T>,
}

impl<T: Float> CompressedPoint<T> {
    /// Checked constructor: `y` must be unit and lie on `X_a`, `ξ` must lie
    /// in `X_a`. Whether `y` is over the regular part is a separate query
    /// ([`Self::is_over_regular_part`]): flow segments may momentarily cross
    /// smaller strata.
    pub fn new(
        lattice: &ClusterLattice<T>,
        cluster: ClusterId,
        y: DVector<T>,
        xi: DVector<T>,
    ) -> Result<Self> {
        let norm = y.norm();
        if (norm - T::one()).abs() > T::c(tol::UNIT_VECTOR) {
            return Err(Error::NotUnitVector(norm.to_f64()));
        }
        let sub = lattice.subspace(cluster)?;
        if !sub.contains_vector(&y, T::c(tol::MEMBERSHIP)) {
            return Err(Error::InvalidSubspace(format!(
                "position direction not on X_{cluster}"
            )));
        }
        if sub.normal_distance(&xi) > T::c(tol::MEMBERSHIP) * (T::one() + xi.norm()) {
            return Err(Error::InvalidSubspace(format!(
                "covector not in X_{cluster}"
            )));
        }
        Ok(Self { cluster, y, xi })
    }

    /// `τ_a = −y·ξ_a`.
    pub fn tau(&self) -> T {
        -self.y.dot(&self.xi)
    }

    /// Tangential component `μ_a = ξ_a − (y·ξ_a) y`.
    pub fn mu(&self) -> DVector<T> {
        &self.xi + &self.y * self.tau()
    }

    /// `|μ_a|² = |ξ_a|² − τ_a²` evaluated directly on the components.
    pub fn mu_norm_sq(&self) -> T {
        self.mu().norm_squared()
    }

    pub fn xi_norm_sq(&self) -> T {
        self.xi.norm_squared()
    }

    /// Strict stratum test: `y ∈ C′_a`.
    pub fn is_over_regular_part(&self, lattice: &ClusterLattice<T>) -> Result<bool> {
        Ok(lattice.stratum(&self.y)? == self.cluster
            && lattice.is_regular_point(self.cluster, &self.y)?)
    }
}

/// A lift `ξ̃ ∈ π̂_b⁻¹(ξ)` of a compressed point: the base plus a normal
/// covector `ν_{ab} ∈ X_b ⊖ X_a`.
#[derive(Debug, Clone)]
pub struct FiberPoint<T: Float> {
    pub base: CompressedPoint<T>,
    pub lift_cluster: ClusterId,
    pub nu: DVector<T>,
}

impl<T: Float> FiberPoint<T> {
    pub fn new(
        lattice: &ClusterLattice<T>,
        base: CompressedPoint<T>,
        lift_cluster: ClusterId,
        nu: DVector<T>,
    ) -> Result<Self> {
        if !lattice.plane_subset(base.cluster, lift_cluster) {
            return Err(Error::InvalidSubspace(format!(
                "lift cluster {lift_cluster} does not contain X_{}",
                base.cluster
            )));
        }
        let sb = lattice.subspace(lift_cluster)?;
        let scale = T::one() + nu.norm();
        if sb.normal_distance(&nu) > T::c(tol::MEMBERSHIP) * scale {
            return Err(Error::InvalidSubspace(
                "normal covector not in the lift plane".to_string(),
            ));
        }
        let sa = lattice.subspace(base.cluster)?;
        if sa.project(&nu).norm() > T::c(tol::MEMBERSHIP) * scale {
            return Err(Error::InvalidSubspace(
                "normal covector not orthogonal to the base plane".to_string(),
            ));
        }
        Ok(Self {
            base,
            lift_cluster,
            nu,
        })
    }

    /// The lifted covector `ξ̃ = ξ_a ⊕ ν_{ab}`.
    pub fn tilde_xi(&self) -> DVector<T> {
        &self.base.xi + &self.nu
    }

    pub fn nu_norm_sq(&self) -> T {
        self.nu.norm_squared()
    }

    /// `|μ_b|² = |μ_a|² + |ν_{ab}|²` at the base point.
    pub fn mu_b_norm_sq(&self) -> T {
        self.base.mu_norm_sq() + self.nu_norm_sq()
    }
}

/// Magnitude-level description of a fiber lift: the direction of `ν` is
/// irrelevant for the test-function derivatives, only `(b, σ, |ν|²)` enter.
#[derive(Debug, Clone, Copy)]
pub struct FiberLift<T: Float> {
    pub cluster: ClusterId,
    pub channel_energy: T,
    pub nu_sq: T,
}

/// One witness family of the fiber preimage over an energy interval: the
/// admissible normal magnitudes `|ν_{ab}|²` form a closed interval.
#[derive(Debug, Clone, Copy)]
pub struct FiberPreimageSet<T: Float> {
    pub cluster: ClusterId,
    pub channel_energy: T,
    pub nu_sq_min: T,
    pub nu_sq_max: T,
}

/// Verdict of the characteristic-variety test with its witnesses `(b, ε)`.
#[derive(Debug, Clone)]
pub struct CharVarietyReport<T: Float> {
    pub in_variety: bool,
    pub witnesses: Vec<(ClusterId, T)>,
}

/// Tests `ξ ∈ Σ̇(λ)` over `C′_a`: some `b ⊇ a` and `ε ∈ pspec(H^b)` must
/// absorb the energy surplus. For `b = a` the normal fiber is trivial so
/// membership is the exact condition `λ − |ξ_a|² = ε` within `tol_e`; for
/// `b ⊋ a` the projection criterion `λ − |ξ_a|² ≥ ε − tol_e` applies.
pub fn char_variety_test<T: Float>(
    model: &SpectralModel<T>,
    lattice: &ClusterLattice<T>,
    lambda: T,
    point: &CompressedPoint<T>,
    tol_e: T,
) -> CharVarietyReport<T> {
    let surplus = lambda - point.xi_norm_sq();
    let mut witnesses = Vec::new();
    for b in lattice.planes_containing(point.cluster) {
        for &eps in model.pspec(b) {
            let hit = if b == point.cluster {
                (surplus - eps).abs() <= tol_e
            } else {
                surplus >= eps - tol_e
            };
            if hit {
                witnesses.push((b, eps));
            }
        }
    }
    CharVarietyReport {
        in_variety: !witnesses.is_empty(),
        witnesses,
    }
}

/// Fiber preimage of `ξ` over an energy interval `I = [lo, hi]`: for each
/// lift `(b, σ)`, the admissible `|ν_{ab}|²` interval.
pub fn fiber_preimage<T: Float>(
    model: &SpectralModel<T>,
    lattice: &ClusterLattice<T>,
    interval: (T, T),
    point: &CompressedPoint<T>,
) -> Vec<FiberPreimageSet<T>> {
    let (lo, hi) = interval;
    let base_sq = point.xi_norm_sq();
    let mut out = Vec::new();
    for b in lattice.planes_containing(point.cluster) {
        for &sigma in model.pspec(b) {
            let top = hi - sigma - base_sq;
            if top < T::zero() {
                continue;
            }
            let bottom = (lo - sigma - base_sq).max(T::zero());
            if b == point.cluster {
                // ν is forced to vanish; admissible only when 0 is allowed.
                if bottom <= T::zero() {
                    out.push(FiberPreimageSet {
                        cluster: b,
                        channel_energy: sigma,
                        nu_sq_min: T::zero(),
                        nu_sq_max: T::zero(),
                    });
                }
            } else {
                out.push(FiberPreimageSet {
                    cluster: b,
                    channel_energy: sigma,
                    nu_sq_min: bottom,
                    nu_sq_max: top,
                });
            }
        }
    }
    out
}

/// Sign selector for the radial sets `R_±(λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// Radial-set membership: `|μ_a| ≤ tol`, `±τ ≥ −tol`, and `λ − τ²` is an
/// eigenvalue of some `H^b` with `C_a ⊆ C_b`, within `tol`.
pub fn radial_set_test<T: Float>(
    model: &SpectralModel<T>,
    lattice: &ClusterLattice<T>,
    lambda: T,
    point: &CompressedPoint<T>,
    sign: Sign,
    tolerance: T,
) -> bool {
    let tau = point.tau();
    let signed = match sign {
        Sign::Plus => tau,
        Sign::Minus => -tau,
    };
    if signed < -tolerance || point.mu().norm() > tolerance {
        return false;
    }
    let target = lambda - tau * tau;
    lattice
        .planes_containing(point.cluster)
        .into_iter()
        .any(|b| {
            model
                .pspec(b)
                .iter()
                .any(|&eps| (target - eps).abs() <= tolerance)
        })
}

/// Mourre gap `d^a(σ) = inf{σ − σ′ : σ′ ≤ σ, σ′ ∈ Λ′_a}`, zero below
/// `inf Λ′_a`.
///
/// This is the paper's convention with `σ′ ≤ σ`; it differs slightly from
/// the Dereziński–Gérard book (the present `d^a` is bounded above by
/// theirs for `σ ≥ inf Λ_a`). No reconciliation is attempted.
pub fn gap_d<T: Float>(
    model: &SpectralModel<T>,
    lattice: &ClusterLattice<T>,
    a: ClusterId,
    sigma: T,
) -> T {
    let thresholds = model.lambda_prime(lattice, a);
    gap_from_sorted(&thresholds, sigma)
}

fn gap_from_sorted<T: Float>(thresholds: &[T], sigma: T) -> T {
    let mut best: Option<T> = None;
    for &t in thresholds {
        if t <= sigma {
            best = Some(t);
        } else {
            break;
        }
    }
    match best {
        Some(t) => sigma - t,
        None => T::zero(),
    }
}

/// Windowed gap `d^{a,κ}(σ) = inf{d^a(σ′) : σ′ ∈ [σ−κ, σ+κ]}`, `κ ≥ 0`.
///
/// `d^a` is piecewise linear with slope one, dropping to zero at every
/// threshold; the infimum over a closed window is therefore zero when the
/// window contains a threshold and `d^a(σ−κ)` otherwise.
pub fn gap_d_kappa<T: Float>(
    model: &SpectralModel<T>,
    lattice: &ClusterLattice<T>,
    a: ClusterId,
    sigma: T,
    kappa: T,
) -> T {
    assert!(kappa >= T::zero(), "window half-width must be nonnegative");
    let thresholds = model.lambda_prime(lattice, a);
    let lo = sigma - kappa;
    let hi = sigma + kappa;
    if thresholds.iter().any(|&t| t >= lo && t <= hi) {
        return T::zero();
    }
    gap_from_sorted(&thresholds, lo)
}
