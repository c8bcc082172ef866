//! Constructive assembly of broken rays from break points and directions.
//!
//! Momenta follow the straight-line rule `ξ̃ = √(λ−ε) (w−w′)/|w−w′|`; break
//! conservation copies the `X_c` component exactly and spends the remaining
//! kinetic energy on a chosen normal direction.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::flow::FlowSegment;
use crate::float::Float;
use crate::lattice::{ClusterId, ClusterLattice};
use crate::phase::{CompressedPoint, SpectralModel};
use crate::tol;

use super::{BreakRecord, BreakString, BrokenRay, RadialLimit};

/// How the outgoing momentum at a break spends the normal energy budget.
#[derive(Debug, Clone)]
pub enum NormalChoice<T: Float> {
    /// Outgoing segment stays inside the break plane (`a_{j+1} = c_j`);
    /// admissible only when the tangential energy matches exactly.
    Tangential,
    /// Unit direction in `X_{a_{j+1}} ⊖ X_{c_j}` receiving the normal
    /// momentum `√(λ − ε − |ξ_c|²)`.
    Normal(DVector<T>),
}

/// Initial data of a ray.
#[derive(Debug, Clone)]
pub enum RayStart<T: Float> {
    /// `m = 0`: a full unbroken arc through `ζ = (y, tangent)`.
    FreeArc { y: DVector<T>, tangent: DVector<T> },
    /// Incoming momentum direction `û₁ = ξ̃₁/|ξ̃₁|` of the first leg.
    Incoming { direction: DVector<T> },
    /// `m ≥ 2`: the incoming momentum is derived backward from
    /// conservation at the first break, spending the surplus on the given
    /// incoming normal direction.
    FromConservation { normal_in: NormalChoice<T> },
}

/// Full parameter set for [`build_ray`].
#[derive(Debug, Clone)]
pub struct RayParams<T: Float> {
    pub start: RayStart<T>,
    /// Euclidean break points `w_j ∈ X_{c_j}` (nonzero; magnitudes are the
    /// conic representatives).
    pub break_points: Vec<DVector<T>>,
    /// Outgoing choice at the final break (unused when `m = 0`).
    pub normal_out: NormalChoice<T>,
}

struct LegData<T: Float> {
    sigma: T,
    energy: T,
    channel_cluster: ClusterId,
    cluster: ClusterId,
}

fn leg_data<T: Float>(
    string: &BreakString,
    model: &SpectralModel<T>,
    lambda: T,
) -> Result<Vec<LegData<T>>> {
    string
        .legs
        .iter()
        .map(|&(a, alpha)| {
            let ch = model.channel(alpha)?;
            Ok(LegData {
                sigma: lambda - ch.energy,
                energy: ch.energy,
                channel_cluster: ch.cluster,
                cluster: a,
            })
        })
        .collect()
}

/// Outgoing momentum at a break: exact `X_c`-component copy plus the chosen
/// normal spend.
fn conserve<T: Float>(
    lattice: &ClusterLattice<T>,
    c: ClusterId,
    a_next: ClusterId,
    sigma_next: T,
    xi_in: &DVector<T>,
    choice: &NormalChoice<T>,
) -> Result<(DVector<T>, bool)> {
    let base = lattice.project_external(c, xi_in)?;
    let deficit = sigma_next - base.norm_squared();
    match choice {
        NormalChoice::Tangential => {
            if a_next != c {
                return Err(Error::InvalidString(format!(
                    "tangential continuation requires a_next = {c}, got {a_next}"
                )));
            }
            if deficit.abs() > T::c(tol::SEGMENT_ENERGY) {
                return Err(Error::EnergyMismatch {
                    expected: sigma_next.to_f64(),
                    got: base.norm_squared().to_f64(),
                });
            }
            Ok((base, true))
        }
        NormalChoice::Normal(dir) => {
            if deficit < -T::c(tol::SEGMENT_ENERGY) {
                return Err(Error::ChannelClosed {
                    margin: deficit.to_f64(),
                });
            }
            if deficit <= T::c(tol::SEGMENT_ENERGY) {
                return Err(Error::DegenerateSegment(
                    "normal continuation with vanishing normal momentum".to_string(),
                ));
            }
            let sub_next = lattice.subspace(a_next)?;
            let in_plane = sub_next.normal_distance(dir) <= T::c(tol::MEMBERSHIP);
            let orth = lattice.project_external(c, dir)?.norm() <= T::c(tol::MEMBERSHIP);
            let unit = (dir.norm() - T::one()).abs() <= T::c(tol::UNIT_VECTOR);
            if !in_plane || !orth || !unit {
                return Err(Error::DegenerateSegment(
                    "normal direction not a unit vector of X_a ⊖ X_c".to_string(),
                ));
            }
            Ok((base + dir * deficit.sqrt(), false))
        }
    }
}

/// Builds a ray from fully specified parameters and checks every invariant
/// the construction does not enforce by itself (notably conservation at
/// interior breaks, whose directions are forced by the break points).
#[allow(clippy::needless_range_loop)]
pub fn build_ray<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    string: &BreakString,
    lambda: T,
    params: &RayParams<T>,
) -> Result<BrokenRay<T>> {
    string.validate(lattice, model, lambda)?;
    let legs = leg_data(string, model, lambda)?;
    let m = string.break_count();
    if params.break_points.len() != m {
        return Err(Error::InvalidString(format!(
            "expected {m} break points, got {}",
            params.break_points.len()
        )));
    }

    if m == 0 {
        return build_free_arc(lattice, string, lambda, &legs[0], &params.start);
    }

    // Validate break points.
    for (j, w) in params.break_points.iter().enumerate() {
        let c = string.breaks[j];
        let sub = lattice.subspace(c)?;
        if w.norm() <= T::c(1e-9) {
            return Err(Error::DegenerateSegment(format!("break point {j} at the origin")));
        }
        if sub.normal_distance(w) > T::c(tol::MEMBERSHIP) * w.norm() {
            return Err(Error::DegenerateSegment(format!(
                "break point {j} not on X_{c}"
            )));
        }
    }

    // Interior momenta are forced by the break points.
    let mut momenta: Vec<Option<DVector<T>>> = vec![None; m + 1];
    for j in 1..m {
        let chord = &params.break_points[j] - &params.break_points[j - 1];
        let len = chord.norm();
        if len <= T::c(1e-12) {
            return Err(Error::DegenerateSegment(format!(
                "coincident break points {} and {}",
                j - 1,
                j
            )));
        }
        momenta[j] = Some(chord * (legs[j].sigma.sqrt() / len));
    }

    // First momentum: explicit direction or backward conservation.
    match &params.start {
        RayStart::Incoming { direction } => {
            let sub = lattice.subspace(legs[0].cluster)?;
            if (direction.norm() - T::one()).abs() > T::c(tol::UNIT_VECTOR)
                || sub.normal_distance(direction) > T::c(tol::MEMBERSHIP)
            {
                return Err(Error::DegenerateSegment(
                    "incoming direction must be a unit vector of X_{a_1}".to_string(),
                ));
            }
            momenta[0] = Some(direction * legs[0].sigma.sqrt());
        }
        RayStart::FromConservation { normal_in } => {
            if m < 2 {
                return Err(Error::InvalidString(
                    "backward-derived starts need at least two breaks".to_string(),
                ));
            }
            let xi2 = momenta[1].as_ref().unwrap();
            // Reversed roles: the incoming momentum must share the X_{c_1}
            // component of the second leg.
            let (xi1, _) = conserve(
                lattice,
                string.breaks[0],
                legs[0].cluster,
                legs[0].sigma,
                xi2,
                normal_in,
            )?;
            momenta[0] = Some(xi1);
        }
        RayStart::FreeArc { .. } => {
            return Err(Error::InvalidString(
                "free-arc start is only valid for unbroken strings".to_string(),
            ));
        }
    }

    // Final momentum by conservation at the last break.
    let (xi_last, tangential_last) = conserve(
        lattice,
        string.breaks[m - 1],
        legs[m].cluster,
        legs[m].sigma,
        momenta[m - 1].as_ref().unwrap(),
        &params.normal_out,
    )?;
    momenta[m] = Some(xi_last);

    // Conservation at every break (exact for constructed legs, a genuine
    // check where the break points force the directions).
    let mut defects = Vec::with_capacity(m);
    for j in 0..m {
        let c = string.breaks[j];
        let d = lattice
            .project_external(c, &(momenta[j + 1].as_ref().unwrap() - momenta[j].as_ref().unwrap()))?
            .norm();
        if d > T::c(tol::BREAK_CONSERVATION) {
            return Err(Error::ConservationMismatch {
                index: j,
                defect: d.to_f64(),
            });
        }
        defects.push(d);
    }

    // Segments.
    let mut segments = Vec::with_capacity(m + 1);
    let xi1 = momenta[0].as_ref().unwrap();
    let u1 = xi1 / xi1.norm();
    segments.push(incoming_leg(&legs[0], lambda, &u1, &params.break_points[0])?);
    for j in 1..m {
        segments.push(FlowSegment::interior(
            legs[j].cluster,
            legs[j].channel_cluster,
            legs[j].energy,
            lambda,
            &params.break_points[j - 1],
            &params.break_points[j],
        )?);
    }
    let xi_out = momenta[m].as_ref().unwrap();
    segments.push(outgoing_leg(&legs[m], lambda, xi_out, &params.break_points[m - 1])?);

    // Break records.
    let mut breaks = Vec::with_capacity(m);
    for j in 0..m {
        let c = string.breaks[j];
        let w = params.break_points[j].clone();
        let y = &w / w.norm();
        let xi_c = lattice.project_external(c, momenta[j].as_ref().unwrap())?;
        breaks.push(BreakRecord {
            cluster: c,
            point: CompressedPoint {
                cluster: c,
                y,
                xi: xi_c,
            },
            w,
            xi_in: momenta[j].as_ref().unwrap().clone(),
            xi_out: momenta[j + 1].as_ref().unwrap().clone(),
            tangential_out: if j == m - 1 { tangential_last } else { false },
            conservation_defect: defects[j],
        });
    }
    // Interior tangential flags from the string.
    for j in 0..m.saturating_sub(1) {
        breaks[j].tangential_out = string.legs[j + 1].0 == string.breaks[j];
    }

    let sigma1 = legs[0].sigma;
    let sigma_last = legs[m].sigma;
    Ok(BrokenRay {
        string: string.clone(),
        lambda,
        segments,
        breaks,
        incoming_limit: Some(RadialLimit {
            y: -&u1,
            tau: sigma1.sqrt(),
            channel_cluster: legs[0].channel_cluster,
            channel_energy: legs[0].energy,
        }),
        outgoing_limit: Some(RadialLimit {
            y: xi_out / xi_out.norm(),
            tau: -sigma_last.sqrt(),
            channel_cluster: legs[m].channel_cluster,
            channel_energy: legs[m].energy,
        }),
    })
}

fn build_free_arc<T: Float>(
    lattice: &ClusterLattice<T>,
    string: &BreakString,
    lambda: T,
    leg: &LegData<T>,
    start: &RayStart<T>,
) -> Result<BrokenRay<T>> {
    let (y, tangent) = match start {
        RayStart::FreeArc { y, tangent } => (y, tangent),
        _ => {
            return Err(Error::InvalidString(
                "unbroken strings take a free-arc start".to_string(),
            ))
        }
    };
    let sub = lattice.subspace(leg.cluster)?;
    let ok = (y.norm() - T::one()).abs() <= T::c(tol::UNIT_VECTOR)
        && (tangent.norm() - T::one()).abs() <= T::c(tol::UNIT_VECTOR)
        && y.dot(tangent).abs() <= T::c(tol::MEMBERSHIP)
        && sub.normal_distance(y) <= T::c(tol::MEMBERSHIP)
        && sub.normal_distance(tangent) <= T::c(tol::MEMBERSHIP);
    if !ok {
        return Err(Error::DegenerateSegment(
            "free-arc data must be an orthonormal pair in X_a".to_string(),
        ));
    }
    let seg = FlowSegment::incoming(
        leg.cluster,
        leg.channel_cluster,
        leg.energy,
        lambda,
        y,
        tangent,
        None,
    )?;
    let root = leg.sigma.sqrt();
    Ok(BrokenRay {
        string: string.clone(),
        lambda,
        segments: vec![seg],
        breaks: vec![],
        incoming_limit: Some(RadialLimit {
            y: y.clone(),
            tau: root,
            channel_cluster: leg.channel_cluster,
            channel_energy: leg.energy,
        }),
        outgoing_limit: Some(RadialLimit {
            y: -y,
            tau: -root,
            channel_cluster: leg.channel_cluster,
            channel_energy: leg.energy,
        }),
    })
}

fn incoming_leg<T: Float>(
    leg: &LegData<T>,
    lambda: T,
    u_hat: &DVector<T>,
    w1: &DVector<T>,
) -> Result<FlowSegment<T>> {
    let rejected = w1 - u_hat * u_hat.dot(w1);
    let perp = rejected.norm();
    if perp <= T::c(1e-12) * w1.norm() {
        return Err(Error::DegenerateSegment(
            "incoming line passes through the origin".to_string(),
        ));
    }
    let p_hat = rejected / perp;
    let y1 = w1 / w1.norm();
    let phi_end = y1.dot(&p_hat).atan2(-y1.dot(u_hat));
    FlowSegment::from_frame(
        leg.cluster,
        leg.channel_cluster,
        leg.energy,
        lambda,
        u_hat.clone(),
        p_hat,
        (T::c(tol::ARC_GUARD), phi_end),
        (false, true),
    )
}

fn outgoing_leg<T: Float>(
    leg: &LegData<T>,
    lambda: T,
    xi_out: &DVector<T>,
    w_last: &DVector<T>,
) -> Result<FlowSegment<T>> {
    let u_hat = xi_out / xi_out.norm();
    let rejected = w_last - &u_hat * u_hat.dot(w_last);
    let perp = rejected.norm();
    if perp <= T::c(1e-12) * w_last.norm() {
        return Err(Error::DegenerateSegment(
            "outgoing line passes through the origin".to_string(),
        ));
    }
    let p_hat = rejected / perp;
    let y = w_last / w_last.norm();
    let phi_start = y.dot(&p_hat).atan2(-y.dot(&u_hat));
    FlowSegment::from_frame(
        leg.cluster,
        leg.channel_cluster,
        leg.energy,
        lambda,
        u_hat,
        p_hat,
        (phi_start, T::pi() - T::c(tol::ARC_GUARD)),
        (true, false),
    )
}

/// Forward shooting: from an incoming direction and first break point,
/// derive every later break point as the intersection of the current leg's
/// line with the next break plane.
///
/// Fails with [`Error::Infeasible`] when a leg's line misses its target
/// plane (the generic situation for planes of codimension above one inside
/// the propagation plane): relation and image samplers treat that as
/// rejection.
pub fn shoot_ray<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    string: &BreakString,
    lambda: T,
    direction: &DVector<T>,
    w1: &DVector<T>,
    normals: &[NormalChoice<T>],
) -> Result<BrokenRay<T>> {
    string.validate(lattice, model, lambda)?;
    let legs = leg_data(string, model, lambda)?;
    let m = string.break_count();
    if m == 0 {
        return Err(Error::InvalidString(
            "shooting requires at least one break; use build_ray for arcs".to_string(),
        ));
    }
    if normals.len() != m {
        return Err(Error::InvalidString(format!(
            "expected {m} normal choices, got {}",
            normals.len()
        )));
    }
    let mut points = vec![w1.clone()];
    let mut xi = direction * legs[0].sigma.sqrt();
    for j in 0..m {
        let (xi_next, _) = conserve(
            lattice,
            string.breaks[j],
            legs[j + 1].cluster,
            legs[j + 1].sigma,
            &xi,
            &normals[j],
        )?;
        if j + 1 < m {
            let c_next = string.breaks[j + 1];
            let w = hit_plane(lattice, c_next, &points[j], &xi_next)?;
            points.push(w);
        }
        xi = xi_next;
    }
    build_ray(
        lattice,
        model,
        string,
        lambda,
        &RayParams {
            start: RayStart::Incoming {
                direction: direction.clone(),
            },
            break_points: points,
            normal_out: normals[m - 1].clone(),
        },
    )
}

/// Least-squares forward intersection of the line `w + t ξ`, `t > 0`, with
/// the plane `X_c`.
fn hit_plane<T: Float>(
    lattice: &ClusterLattice<T>,
    c: ClusterId,
    w: &DVector<T>,
    xi: &DVector<T>,
) -> Result<DVector<T>> {
    let wn = lattice.project_internal(c, w)?;
    let xn = lattice.project_internal(c, xi)?;
    let scale = w.norm().max(T::one());
    if xn.norm() <= T::c(1e-12) * xi.norm() {
        // Motion parallel to the plane: a hit only if we are already on it.
        if wn.norm() <= T::c(tol::PLANE_HIT) * scale {
            return Ok(w + xi * (scale / xi.norm()));
        }
        return Err(Error::Infeasible(format!(
            "leg parallel to X_{c} at offset {:.3e}",
            wn.norm().to_f64()
        )));
    }
    let t = -wn.dot(&xn) / xn.norm_squared();
    if t <= T::c(1e-9) * (scale / xi.norm()) {
        return Err(Error::Infeasible(format!(
            "plane X_{c} lies behind the leg (t = {:.3e})",
            t.to_f64()
        )));
    }
    let hit = w + xi * t;
    let residual = lattice.project_internal(c, &hit)?.norm();
    if residual > T::c(tol::PLANE_HIT) * hit.norm().max(scale) {
        return Err(Error::Infeasible(format!(
            "leg misses X_{c} by {:.3e}",
            residual.to_f64()
        )));
    }
    Ok(hit)
}
