//! Graph Lagrangians and the broken-geodesic relation calculus: elementary
//! relations with explicit block matrices, transversal composition with
//! positivity propagation, the radial-set Lagrangian, and numerical
//! Lagrangian-ness certificates.
//!
//! Conventions. A relation lives on `T*X_c × T*X_d` with the segment
//! running from `w′ ∈ X_d` to `w ∈ X_c` carrying `ξ̃ = √(λ−ε)(w−w′)/|w−w′|`,
//! and `ξ = π_c ξ̃`, `ξ′ = π_d ξ̃`. The stored blocks are the derivative
//! maps
//!
//! ```text
//! B = ∂ξ/∂w,   B′ = ∂ξ′/∂w′,   C = ∂ξ′/∂w,   C′ = ∂ξ/∂w′ = −Cᵀ,
//! ```
//!
//! so that `B ⪰ 0`, `B′ ⪯ 0`, and the composed graph derivative is the
//! stationary-phase Schur complement
//!
//! ```text
//! A = B + C′ (A′ − B′)⁻¹ C = B − Cᵀ (A′ − B′)⁻¹ C.
//! ```
//!
//! `A ⪰ 0` follows because the two-point phase `√(λ−ε)|w−w′|` is convex
//! where smooth, so its Hessian plus `diag(0, A′)` is positive
//! semidefinite and so is every Schur complement of it. The identity
//! `C′ = −Cᵀ` is what the twisted symplectic form `ω_c − ω_d` forces on
//! the untwisted derivative blocks; it is certified against finite
//! differences and the form residual in the test suite.
//!
//! All matrices are expressed in the orthonormal bases of their subspaces;
//! base points and momenta are stored in those coordinates as well.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::lattice::{ClusterId, ClusterLattice};
use crate::linalg;
use crate::phase::SpectralModel;
use crate::ray::BreakString;
use crate::tol;

/// A Lagrangian submanifold presented as a graph over `X_d`: base point
/// plus the self-adjoint derivative `A` of the fiber map.
#[derive(Debug, Clone)]
pub struct GraphLagrangian<T: Float> {
    pub cluster: ClusterId,
    /// Base point in the subspace's orthonormal coordinates.
    pub base_point: DVector<T>,
    pub matrix: DMatrix<T>,
}

impl<T: Float> GraphLagrangian<T> {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Tangent basis `{(v, Av)}` as stacked `2d × d` columns.
    pub fn tangent_basis(&self) -> DMatrix<T> {
        let d = self.dim();
        let mut out = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            out[(i, i)] = T::one();
            for r in 0..d {
                out[(d + r, i)] = self.matrix[(r, i)];
            }
        }
        out
    }

    pub fn symmetry_defect(&self) -> T {
        linalg::symmetry_defect(&self.matrix)
    }

    pub fn eigmin(&self) -> T {
        linalg::eigmin(&self.matrix)
    }
}

/// The elementary broken-geodesic relation for one segment, with its block
/// matrices in subspace coordinates.
#[derive(Debug, Clone)]
pub struct ElementaryRelation<T: Float> {
    /// Target plane `X_c` (segment endpoint).
    pub target: ClusterId,
    /// Source plane `X_d` (segment start).
    pub source: ClusterId,
    /// Propagation plane `X_a ⊇ X_c, X_d`.
    pub propagation: ClusterId,
    pub channel_energy: T,
    pub lambda: T,
    /// Evaluation points in subspace coordinates.
    pub w: DVector<T>,
    pub w_prime: DVector<T>,
    /// Momenta `ξ = π_c ξ̃`, `ξ′ = π_d ξ̃` in subspace coordinates.
    pub xi: DVector<T>,
    pub xi_prime: DVector<T>,
    /// `∂ξ/∂w` on `X_c`.
    pub b: DMatrix<T>,
    /// `∂ξ′/∂w′` on `X_d`.
    pub b_prime: DMatrix<T>,
    /// `∂ξ′/∂w : X_c → X_d`.
    pub c: DMatrix<T>,
    /// Whether `w′` lies in the target plane (then `B` is singular along ξ).
    pub w_prime_in_target: bool,
}

impl<T: Float> ElementaryRelation<T> {
    /// `C′ = ∂ξ/∂w′ = −Cᵀ`.
    pub fn c_prime(&self) -> DMatrix<T> {
        -self.c.transpose()
    }

    /// Tangent basis of the relation in `T(T*X_c × T*X_d)`, stacked as
    /// `(dw, dξ, dw′, dξ′)` columns of size `2(dim_c + dim_d)`.
    pub fn tangent_basis(&self) -> DMatrix<T> {
        let dc = self.b.nrows();
        let dd = self.b_prime.nrows();
        let rows = 2 * (dc + dd);
        let mut out = DMatrix::zeros(rows, dc + dd);
        let cp = self.c_prime();
        for i in 0..dc {
            out[(i, i)] = T::one();
            for r in 0..dc {
                out[(dc + r, i)] = self.b[(r, i)];
            }
            for r in 0..dd {
                out[(2 * dc + dd + r, i)] = self.c[(r, i)];
            }
        }
        for i in 0..dd {
            for r in 0..dc {
                out[(dc + r, dc + i)] = cp[(r, i)];
            }
            out[(2 * dc + i, dc + i)] = T::one();
            for r in 0..dd {
                out[(2 * dc + dd + r, dc + i)] = self.b_prime[(r, i)];
            }
        }
        out
    }
}

/// Builds the elementary relation for a segment from `w′ ∈ X_d` to
/// `w ∈ X_c` propagating along `X_a` with channel energy ε (`w`, `w′` in
/// ambient coordinates).
#[allow(clippy::too_many_arguments)]
pub fn elementary_relation<T: Float>(
    lattice: &ClusterLattice<T>,
    target: ClusterId,
    channel_energy: T,
    propagation: ClusterId,
    source: ClusterId,
    w_ambient: &DVector<T>,
    w_prime_ambient: &DVector<T>,
    lambda: T,
) -> Result<ElementaryRelation<T>> {
    if lambda <= channel_energy {
        return Err(Error::ChannelClosed {
            margin: (lambda - channel_energy).to_f64(),
        });
    }
    for (name, cluster, point) in [("w", target, w_ambient), ("w'", source, w_prime_ambient)] {
        let sub = lattice.subspace(cluster)?;
        if sub.normal_distance(point) > T::c(tol::MEMBERSHIP) * (T::one() + point.norm()) {
            return Err(Error::InvalidSubspace(format!(
                "{name} not on the plane X_{cluster}"
            )));
        }
    }
    if !lattice.plane_subset(target, propagation) || !lattice.plane_subset(source, propagation) {
        return Err(Error::InvalidSubspace(
            "propagation plane must contain both endpoint planes".to_string(),
        ));
    }
    let u = w_ambient - w_prime_ambient;
    let len = u.norm();
    let scale = w_ambient.norm().max(w_prime_ambient.norm()).max(T::one());
    if len <= T::c(1e-12) * scale {
        return Err(Error::DegenerateSegment("w = w'".to_string()));
    }
    let bc = lattice.subspace(target)?.basis();
    let bd = lattice.subspace(source)?.basis();
    let dc = bc.ncols();
    let dd = bd.ncols();
    let k = (lambda - channel_energy).sqrt();
    let pc_u = bc.transpose() * &u;
    let pd_u = bd.transpose() * &u;
    let len2 = len * len;
    let pref = k / (len2 * len);

    let b = (DMatrix::<T>::identity(dc, dc) * len2 - linalg::outer(&pc_u, &pc_u)) * pref;
    let b_prime = (DMatrix::<T>::identity(dd, dd) * len2 - linalg::outer(&pd_u, &pd_u)) * (-pref);
    let c = (bd.transpose() * bc * len2 - linalg::outer(&pd_u, &pc_u)) * pref;

    let in_target = lattice.subspace(target)?.normal_distance(w_prime_ambient)
        <= T::c(tol::MEMBERSHIP) * scale;

    Ok(ElementaryRelation {
        target,
        source,
        propagation,
        channel_energy,
        lambda,
        w: bc.transpose() * w_ambient,
        w_prime: bd.transpose() * w_prime_ambient,
        xi: &pc_u * (k / len),
        xi_prime: &pd_u * (k / len),
        b,
        b_prime,
        c,
        w_prime_in_target: in_target,
    })
}

/// Certificate data recorded by one composition step.
#[derive(Debug, Clone)]
pub struct CompositionCertificate {
    pub position: usize,
    /// Smallest eigenvalue of `A′ − B′` (transversality margin).
    pub eigmin_transversality: f64,
    /// Smallest eigenvalue of the composed `A`.
    pub eigmin_a: f64,
    pub symmetry_defect: f64,
    /// Whether positive definiteness is asserted (`c ≠ a` at this step).
    pub pd_required: bool,
    pub psd_ok: bool,
    pub pd_ok: bool,
}

fn definiteness_floor<T: Float>(m: &DMatrix<T>) -> T {
    let n = m.nrows().max(1);
    let mut trace = T::zero();
    for i in 0..m.nrows() {
        trace += m[(i, i)].abs();
    }
    T::c(tol::DEFINITENESS_FLOOR) * (trace / T::c(n as f64)).max(T::one())
}

/// Transversal composition: pushes a graph Lagrangian on the source space
/// through the relation, producing a graph Lagrangian on the target space.
///
/// Fails with [`Error::TransversalityFailure`] when `A′ − B′` is not
/// positive definite within the relative floor.
pub fn compose<T: Float>(
    rel: &ElementaryRelation<T>,
    incoming: &GraphLagrangian<T>,
    position: usize,
) -> Result<(GraphLagrangian<T>, CompositionCertificate)> {
    if incoming.cluster != rel.source {
        return Err(Error::InvalidSubspace(format!(
            "incoming Lagrangian lives on X_{}, relation expects X_{}",
            incoming.cluster, rel.source
        )));
    }
    let m = &incoming.matrix - &rel.b_prime;
    let floor = definiteness_floor(&m);
    let lowest = linalg::eigmin(&m);
    if lowest < floor {
        return Err(Error::TransversalityFailure {
            eigmin: lowest.to_f64(),
            threshold: floor.to_f64(),
            position,
        });
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::TransversalityFailure {
            eigmin: lowest.to_f64(),
            threshold: floor.to_f64(),
            position,
        })?;
    let minv_c = chol.solve(&rel.c);
    let mut a = &rel.b - rel.c.transpose() * minv_c;
    linalg::symmetrize(&mut a);

    let eig_a = linalg::eigmin(&a);
    let floor_a = definiteness_floor(&a);
    // Positive definiteness propagates when the target plane differs from
    // the propagation plane, provided the source point is off the target
    // plane (otherwise B is singular along ξ and A inherits the kernel).
    let pd_required = rel.target != rel.propagation && !rel.w_prime_in_target;
    let cert = CompositionCertificate {
        position,
        eigmin_transversality: lowest.to_f64(),
        eigmin_a: eig_a.to_f64(),
        symmetry_defect: linalg::symmetry_defect(&a).to_f64(),
        pd_required,
        psd_ok: eig_a >= -floor_a,
        pd_ok: eig_a >= floor_a,
    };
    Ok((
        GraphLagrangian {
            cluster: rel.target,
            base_point: rel.w.clone(),
            matrix: a,
        },
        cert,
    ))
}

/// Seed Lagrangian for a chain composition, living on the first break
/// plane `X_{c₁}`.
#[derive(Debug, Clone)]
pub enum SeedLagrangian<T: Float> {
    /// Point-source seed: the `B`-block of the first leg's relation from a
    /// start point `w₀ ∈ X_{a₁}` (ambient coordinates).
    FirstLeg { start: DVector<T> },
    /// Plane-wave seed `A′ = 0` (admissible when the second leg leaves the
    /// first break plane).
    PlaneWave,
    /// Radial-set Lagrangian at the first break point with channel energy
    /// σ.
    Radial { sigma: T },
    /// Caller-provided seed.
    Custom(GraphLagrangian<T>),
}

/// Left-fold of [`compose`] along a break string: seeds on `X_{c₁}`, folds
/// through the interior relations, and finishes on the final propagation
/// plane at `final_point` (a sample point of the outgoing leg, ambient
/// coordinates).
pub fn compose_chain<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    string: &BreakString,
    break_points: &[DVector<T>],
    lambda: T,
    seed: &SeedLagrangian<T>,
    final_point: &DVector<T>,
) -> Result<(GraphLagrangian<T>, Vec<CompositionCertificate>)> {
    let m = string.break_count();
    if break_points.len() != m {
        return Err(Error::InvalidString(format!(
            "expected {m} break points, got {}",
            break_points.len()
        )));
    }
    let energy = |j: usize| -> Result<T> { Ok(model.channel(string.legs[j].1)?.energy) };

    if m == 0 {
        let a1 = string.legs[0].0;
        let lag = match seed {
            SeedLagrangian::Custom(l) => l.clone(),
            SeedLagrangian::PlaneWave => GraphLagrangian {
                cluster: a1,
                base_point: lattice.subspace(a1)?.coords(final_point),
                matrix: DMatrix::zeros(lattice.dim(a1), lattice.dim(a1)),
            },
            SeedLagrangian::Radial { sigma } => radial_lagrangian_on(
                lattice,
                a1,
                final_point,
                lambda,
                *sigma,
            )?,
            SeedLagrangian::FirstLeg { start } => {
                let rel = elementary_relation(
                    lattice,
                    a1,
                    energy(0)?,
                    a1,
                    a1,
                    final_point,
                    start,
                    lambda,
                )?;
                GraphLagrangian {
                    cluster: a1,
                    base_point: rel.w.clone(),
                    matrix: rel.b.clone(),
                }
            }
        };
        return Ok((lag, vec![]));
    }

    let c1 = string.breaks[0];
    let mut current = match seed {
        SeedLagrangian::Custom(l) => {
            if l.cluster != c1 {
                return Err(Error::InvalidSubspace(format!(
                    "seed lives on X_{}, chain starts at X_{c1}",
                    l.cluster
                )));
            }
            l.clone()
        }
        SeedLagrangian::PlaneWave => GraphLagrangian {
            cluster: c1,
            base_point: lattice.subspace(c1)?.coords(&break_points[0]),
            matrix: DMatrix::zeros(lattice.dim(c1), lattice.dim(c1)),
        },
        SeedLagrangian::Radial { sigma } => {
            radial_lagrangian_on(lattice, c1, &break_points[0], lambda, *sigma)?
        }
        SeedLagrangian::FirstLeg { start } => {
            let rel = elementary_relation(
                lattice,
                c1,
                energy(0)?,
                string.legs[0].0,
                string.legs[0].0,
                &break_points[0],
                start,
                lambda,
            )?;
            GraphLagrangian {
                cluster: c1,
                base_point: rel.w.clone(),
                matrix: rel.b.clone(),
            }
        }
    };

    let mut certificates = Vec::new();
    for j in 1..=m {
        let (target, target_point) = if j == m {
            (string.legs[m].0, final_point)
        } else {
            (string.breaks[j], &break_points[j])
        };
        let rel = elementary_relation(
            lattice,
            target,
            energy(j)?,
            string.legs[j].0,
            string.breaks[j - 1],
            target_point,
            &break_points[j - 1],
            lambda,
        )?;
        let (next, cert) = compose(&rel, &current, j)?;
        certificates.push(cert);
        current = next;
    }
    Ok((current, certificates))
}

/// The radial-set Lagrangian `A′ = (√(λ−σ)/|w|³)(|w|² Id − w⊗w)` in the
/// coordinates of `w`.
pub fn radial_lagrangian<T: Float>(w: &DVector<T>, lambda: T, sigma: T) -> Result<DMatrix<T>> {
    if lambda <= sigma {
        return Err(Error::ChannelClosed {
            margin: (lambda - sigma).to_f64(),
        });
    }
    let r = w.norm();
    if r == T::zero() {
        return Err(Error::DegenerateBasePoint);
    }
    let n = w.len();
    let pref = (lambda - sigma).sqrt() / (r * r * r);
    Ok((DMatrix::<T>::identity(n, n) * (r * r) - linalg::outer(w, w)) * pref)
}

/// Radial-set Lagrangian attached to a cluster, from an ambient point.
pub fn radial_lagrangian_on<T: Float>(
    lattice: &ClusterLattice<T>,
    cluster: ClusterId,
    w_ambient: &DVector<T>,
    lambda: T,
    sigma: T,
) -> Result<GraphLagrangian<T>> {
    let sub = lattice.subspace(cluster)?;
    if sub.normal_distance(w_ambient) > T::c(tol::MEMBERSHIP) * (T::one() + w_ambient.norm()) {
        return Err(Error::InvalidSubspace(format!(
            "radial base point not on X_{cluster}"
        )));
    }
    let coords = sub.coords(w_ambient);
    Ok(GraphLagrangian {
        cluster,
        base_point: coords.clone(),
        matrix: radial_lagrangian(&coords, lambda, sigma)?,
    })
}

/// Which symplectic vector space a spanning set lives in.
#[derive(Debug, Clone, Copy)]
pub enum SymplecticSpace {
    /// `T(T*X_d)` with the canonical form; columns stacked as `(dw, dξ)`.
    Graph { dim: usize },
    /// `T(T*X_c × T*X_d)` with the twisted form `ω_c − ω_d`; columns
    /// stacked as `(dw, dξ, dw′, dξ′)`.
    Relation { dim_target: usize, dim_source: usize },
}

/// Verdict of the symplectic-form evaluation on a spanning set.
#[derive(Debug, Clone)]
pub struct LagrangianCertificate<T: Float> {
    pub is_lagrangian: bool,
    /// Largest `|ω(V_i, V_j)|` normalized by `|V_i||V_j|`.
    pub max_form_residual: T,
    pub rank: usize,
    pub expected_dim: usize,
}

/// Evaluates the (twisted) symplectic form on all pairs of spanning
/// vectors; Lagrangian iff the residual stays below the certificate
/// threshold and the span has exactly half the symplectic dimension.
pub fn lagrangian_certificate<T: Float>(
    space: SymplecticSpace,
    spanning: &DMatrix<T>,
) -> Result<LagrangianCertificate<T>> {
    let (rows, half) = match space {
        SymplecticSpace::Graph { dim } => (2 * dim, dim),
        SymplecticSpace::Relation {
            dim_target,
            dim_source,
        } => (2 * (dim_target + dim_source), dim_target + dim_source),
    };
    if spanning.nrows() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: spanning.nrows(),
        });
    }
    if spanning.ncols() != half {
        return Err(Error::RankDeficient {
            rank: spanning.ncols(),
            expected: half,
        });
    }
    let max_col = spanning
        .column_iter()
        .map(|c| c.norm())
        .fold(T::zero(), |a, b| a.max(b));
    let rank = linalg::rank(spanning, T::c(tol::SUBSPACE_RANK) * max_col.max(T::one()));
    if rank < half {
        return Err(Error::RankDeficient {
            rank,
            expected: half,
        });
    }

    let form = |v: &DVector<T>, w: &DVector<T>| -> T {
        match space {
            SymplecticSpace::Graph { dim } => {
                let mut acc = T::zero();
                for i in 0..dim {
                    acc += v[dim + i] * w[i] - w[dim + i] * v[i];
                }
                acc
            }
            SymplecticSpace::Relation {
                dim_target: dc,
                dim_source: dd,
            } => {
                let mut acc = T::zero();
                for i in 0..dc {
                    acc += v[dc + i] * w[i] - w[dc + i] * v[i];
                }
                for i in 0..dd {
                    acc -= v[2 * dc + dd + i] * w[2 * dc + i] - w[2 * dc + dd + i] * v[2 * dc + i];
                }
                acc
            }
        }
    };

    let mut residual = T::zero();
    for i in 0..half {
        let vi = spanning.column(i).into_owned();
        let ni = vi.norm().max(T::c(1e-30));
        for jj in (i + 1)..half {
            let vj = spanning.column(jj).into_owned();
            let nj = vj.norm().max(T::c(1e-30));
            residual = residual.max(form(&vi, &vj).abs() / (ni * nj));
        }
    }
    Ok(LagrangianCertificate {
        is_lagrangian: residual < T::c(tol::SYMPLECTIC_RESIDUAL),
        max_form_residual: residual,
        rank,
        expected_dim: half,
    })
}
