//! Forward images `Φ₊` and the channel relations `R_{βα}`, computed by
//! string enumeration plus deterministic sampling.
//!
//! Both outputs are approximations, sound up to the sampling resolution;
//! every emitted element carries a constructive ray witness.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::FlowSegment;
use crate::float::Float;
use crate::lattice::{ClusterId, ClusterLattice};
use crate::linalg;
use crate::phase::{
    char_variety_test, radial_set_test, ChannelId, CompressedPoint, Sign, SpectralModel,
};
use crate::tol;

use super::build::{build_ray, NormalChoice, RayParams, RayStart};
use super::verify::{verify_ray, VerifyMode};
use super::{enumerate_strings, BreakRecord, BreakString, BrokenRay, RadialLimit};

/// A point of the cosphere bundle `S*C′_a`: base direction and a unit
/// cotangent direction.
#[derive(Debug, Clone)]
pub struct SphereCotangent<T: Float> {
    pub y: DVector<T>,
    pub mu_hat: DVector<T>,
}

/// Terminal regime of a relation entry.
#[derive(Debug, Clone)]
pub enum RelationOutcome<T: Float> {
    Channel {
        channel: ChannelId,
        zeta_out: SphereCotangent<T>,
    },
    Terminal(CompressedPoint<T>),
}

/// One sampled element of `R_{βα}` (or of an `R_{α,+}`-style image), with
/// its witness ray.
#[derive(Debug, Clone)]
pub struct RelationEntry<T: Float> {
    pub incoming_channel: ChannelId,
    pub zeta_in: SphereCotangent<T>,
    pub outgoing: RelationOutcome<T>,
    pub string: BreakString,
    pub ray: BrokenRay<T>,
}

/// Sampling resolution for relation construction.
#[derive(Debug, Clone, Copy)]
pub struct SamplingSpec {
    /// Number of incoming cosphere samples ζ.
    pub n_zeta: usize,
    /// Unit directions drawn on each normal sphere at a break.
    pub normal_dirs: usize,
    /// Positions sampled along a leg for breaks inside the own plane.
    pub tangential_positions: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            n_zeta: 32,
            normal_dirs: 6,
            tangential_positions: 4,
        }
    }
}

/// Output grid for forward images.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec<T: Float> {
    /// Arclength step between emitted points along a leg.
    pub arc_step: T,
    /// Unit directions drawn on each normal sphere at a break.
    pub normal_dirs: usize,
    /// Matching radius for closure points.
    pub epsilon: T,
}

/// A point reached by the forward broken bicharacteristic relation.
#[derive(Debug, Clone)]
pub struct ReachedPoint<T: Float> {
    pub point: CompressedPoint<T>,
    pub source_index: usize,
    /// True for radial limit points contributed by the closure.
    pub closure_derived: bool,
    pub witness: BrokenRay<T>,
}

/// Forward image approximation together with resolution diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardImage<T: Float> {
    pub points: Vec<ReachedPoint<T>>,
    /// Set when the grid is coarser than the requested matching radius.
    pub resolution_warning: bool,
}

fn unit_in_span<T: Float>(basis: &nalgebra::DMatrix<T>, rng: &mut ChaCha8Rng) -> DVector<T> {
    let k = basis.ncols();
    loop {
        let coeffs = DVector::<T>::from_fn(k, |_, _| T::c(rng.random::<f64>() * 2.0 - 1.0));
        let v = basis * &coeffs;
        let n = v.norm();
        if n > T::c(1e-3) {
            return v / n;
        }
    }
}

/// Deterministic unit directions on the normal sphere `X_a ⊖ X_c`.
fn normal_directions<T: Float>(
    lattice: &ClusterLattice<T>,
    c: ClusterId,
    a_next: ClusterId,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<T>> {
    let xa = lattice.subspace(a_next).unwrap().basis();
    let xc = lattice.subspace(c).unwrap().basis();
    let perp = linalg::orthocomplement(xc, lattice.ambient_dim());
    let normal = linalg::intersection(xa, &perp, lattice.ambient_dim());
    match normal.ncols() {
        0 => vec![],
        1 => {
            let v = normal.column(0).into_owned();
            vec![v.clone(), -v]
        }
        _ => (0..count).map(|_| unit_in_span(&normal, rng)).collect(),
    }
}

/// Points along the Euclidean line `{foot-based}` at a φ-grid of the
/// projected arc; `phi_lo`/`phi_hi` clip the sampled range.
fn line_points<T: Float>(
    w_base: &DVector<T>,
    xi: &DVector<T>,
    phi_lo: T,
    phi_hi: T,
    count: usize,
) -> Vec<DVector<T>> {
    let u = xi / xi.norm();
    let foot = w_base - &u * u.dot(w_base);
    let b = foot.norm();
    if b <= T::c(1e-12) {
        return vec![];
    }
    let p_hat = foot / b;
    let mut out = Vec::new();
    for k in 0..count {
        let phi = phi_lo + (phi_hi - phi_lo) * T::c((k as f64 + 0.5) / count as f64);
        // w(φ) = b (p̂ − cot φ · û)
        let w = (&p_hat - &u * (phi.cos() / phi.sin())) * b;
        out.push(w);
    }
    out
}

fn phi_on_line<T: Float>(w: &DVector<T>, xi: &DVector<T>) -> T {
    let u = xi / xi.norm();
    let y = w / w.norm();
    let s = (&y - &u * u.dot(&y)).norm();
    s.atan2(-y.dot(&u))
}

/// Two-sided line/plane intersection (no forward constraint), for the
/// first break on an incoming leg.
fn hit_plane_two_sided<T: Float>(
    lattice: &ClusterLattice<T>,
    c: ClusterId,
    w: &DVector<T>,
    xi: &DVector<T>,
) -> Option<DVector<T>> {
    let wn = lattice.project_internal(c, w).ok()?;
    let xn = lattice.project_internal(c, xi).ok()?;
    let scale = w.norm().max(T::one());
    if xn.norm() <= T::c(1e-12) * xi.norm() {
        return None;
    }
    let t = -wn.dot(&xn) / xn.norm_squared();
    let hit = w + xi * t;
    let residual = lattice.project_internal(c, &hit).ok()?.norm();
    if residual > T::c(tol::PLANE_HIT) * hit.norm().max(scale) || hit.norm() < T::c(1e-9) {
        return None;
    }
    Some(hit)
}

fn forward_hit<T: Float>(
    lattice: &ClusterLattice<T>,
    c: ClusterId,
    w: &DVector<T>,
    xi: &DVector<T>,
) -> Option<DVector<T>> {
    let hit = hit_plane_two_sided(lattice, c, w, xi)?;
    let t = (&hit - w).dot(xi) / xi.norm_squared();
    if t <= T::c(1e-9) {
        return None;
    }
    Some(hit)
}

/// Samples the channel relation `R_{βα}` at total energy λ: incoming legs
/// `γ_{α,−}(ζ)` extended through every enumerated break pattern whose final
/// regime is a `γ_{β,+}(ζ′)` leg.
#[allow(clippy::too_many_arguments)]
pub fn channel_relation<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    alpha: ChannelId,
    beta: ChannelId,
    lambda: T,
    m_max: usize,
    spec: &SamplingSpec,
    seed: u64,
) -> Result<Vec<RelationEntry<T>>> {
    let ch_a = *model.channel(alpha)?;
    let ch_b = *model.channel(beta)?;
    for ch in [&ch_a, &ch_b] {
        if lambda <= ch.energy {
            return Err(Error::ChannelClosed {
                margin: (lambda - ch.energy).to_f64(),
            });
        }
    }
    if lattice.dim(ch_a.cluster) < 2 || lattice.dim(ch_b.cluster) < 2 {
        return Err(Error::InvalidChannel(
            "cosphere sampling needs channel clusters of dimension ≥ 2".to_string(),
        ));
    }
    let strings: Vec<BreakString> = enumerate_strings(lattice, model, lambda, m_max)?
        .into_iter()
        .filter(|s| {
            s.legs.first() == Some(&(ch_a.cluster, alpha))
                && s.legs.last() == Some(&(ch_b.cluster, beta))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis_a = lattice.subspace(ch_a.cluster)?.basis().clone();
    let mut entries = Vec::new();
    for _ in 0..spec.n_zeta {
        // ζ = (y, μ̂) ∈ S*C′_a.
        let y = unit_in_span(&basis_a, &mut rng);
        if !lattice.is_regular_point(ch_a.cluster, &y).unwrap_or(false) {
            continue;
        }
        let mut mu = unit_in_span(&basis_a, &mut rng);
        mu -= &y * y.dot(&mu);
        let n = mu.norm();
        if n < T::c(1e-3) {
            continue;
        }
        mu /= n;
        let zeta = SphereCotangent {
            y: y.clone(),
            mu_hat: mu.clone(),
        };
        for string in &strings {
            extend_through_string(
                lattice, model, string, lambda, &zeta, alpha, beta, spec, &mut rng, &mut entries,
            );
        }
    }
    Ok(entries)
}

/// Depth-first realization of one string from one incoming sample.
#[allow(clippy::too_many_arguments)]
fn extend_through_string<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    string: &BreakString,
    lambda: T,
    zeta: &SphereCotangent<T>,
    alpha: ChannelId,
    beta: ChannelId,
    spec: &SamplingSpec,
    rng: &mut ChaCha8Rng,
    entries: &mut Vec<RelationEntry<T>>,
) {
    let m = string.break_count();
    if m == 0 {
        // Single unbroken arc: the two regimes coincide, so α = β and the
        // endpoints are antipodal.
        if alpha != beta {
            return;
        }
        let params = RayParams {
            start: RayStart::FreeArc {
                y: zeta.y.clone(),
                tangent: zeta.mu_hat.clone(),
            },
            break_points: vec![],
            normal_out: NormalChoice::Tangential,
        };
        if let Ok(ray) = build_ray(lattice, model, string, lambda, &params) {
            if verify_ray(lattice, model, &ray, lambda, VerifyMode::Structural).passed() {
                entries.push(RelationEntry {
                    incoming_channel: alpha,
                    zeta_in: zeta.clone(),
                    outgoing: RelationOutcome::Channel {
                        channel: beta,
                        zeta_out: SphereCotangent {
                            y: -&zeta.y,
                            mu_hat: -&zeta.mu_hat,
                        },
                    },
                    string: string.clone(),
                    ray,
                });
            }
        }
        return;
    }

    // Incoming Euclidean line: direction û₁ = −y_ζ, impact point μ̂_ζ.
    let sigma1 = lambda - model.channel(string.legs[0].1).unwrap().energy;
    let u1 = -&zeta.y;
    let xi1 = &u1 * sigma1.sqrt();
    let w_base = zeta.mu_hat.clone();

    // First break point candidates.
    let c1 = string.breaks[0];
    let first_points: Vec<DVector<T>> = if string.legs[0].0 == c1 {
        line_points(
            &w_base,
            &xi1,
            T::c(0.25),
            T::pi() - T::c(0.25),
            spec.tangential_positions,
        )
    } else {
        hit_plane_two_sided(lattice, c1, &w_base, &xi1)
            .into_iter()
            .collect()
    };

    for w1 in first_points {
        if !lattice.is_regular_point(c1, &(&w1 / w1.norm())).unwrap_or(false) {
            continue;
        }
        descend(
            lattice,
            model,
            string,
            lambda,
            zeta,
            alpha,
            beta,
            &u1,
            vec![w1.clone()],
            xi1.clone(),
            1,
            spec,
            rng,
            entries,
        );
    }
}

/// Recursive descent past break `j` (1-based; `points` holds `w_1..w_j`).
#[allow(clippy::too_many_arguments)]
fn descend<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    string: &BreakString,
    lambda: T,
    zeta: &SphereCotangent<T>,
    alpha: ChannelId,
    beta: ChannelId,
    u1: &DVector<T>,
    points: Vec<DVector<T>>,
    xi_in: DVector<T>,
    j: usize,
    spec: &SamplingSpec,
    rng: &mut ChaCha8Rng,
    entries: &mut Vec<RelationEntry<T>>,
) {
    let m = string.break_count();
    let c = string.breaks[j - 1];
    let a_next = string.legs[j].0;
    let sigma_next = lambda - model.channel(string.legs[j].1).unwrap().energy;
    let base = lattice.project_external(c, &xi_in).unwrap();
    let deficit = sigma_next - base.norm_squared();

    let choices: Vec<NormalChoice<T>> = if a_next == c {
        if deficit.abs() <= T::c(tol::SEGMENT_ENERGY) {
            vec![NormalChoice::Tangential]
        } else {
            vec![]
        }
    } else if deficit > T::c(tol::SEGMENT_ENERGY) {
        normal_directions(lattice, c, a_next, spec.normal_dirs, rng)
            .into_iter()
            .map(NormalChoice::Normal)
            .collect()
    } else {
        vec![]
    };

    let w_j = points.last().unwrap().clone();
    for choice in choices {
        let xi_next = match &choice {
            NormalChoice::Tangential => base.clone(),
            NormalChoice::Normal(dir) => &base + dir * deficit.sqrt(),
        };
        if j == m {
            // Final leg: assemble and record.
            let params = RayParams {
                start: RayStart::Incoming {
                    direction: u1.clone(),
                },
                break_points: points.clone(),
                normal_out: choice.clone(),
            };
            let ray = match build_ray(lattice, model, string, lambda, &params) {
                Ok(r) => r,
                Err(_) => continue,
            };
            if !verify_ray(lattice, model, &ray, lambda, VerifyMode::Structural).passed() {
                continue;
            }
            let y_out = &xi_next / xi_next.norm();
            if !lattice
                .is_regular_point(string.legs[m].0, &y_out)
                .unwrap_or(false)
            {
                continue;
            }
            // Arrival cotangent direction of γ_{β,+}: −p̂ of the final leg.
            let foot = &w_j - &y_out * y_out.dot(&w_j);
            let n = foot.norm();
            if n <= T::c(1e-9) {
                continue;
            }
            let zeta_out = SphereCotangent {
                y: y_out,
                mu_hat: foot / n,
            };
            entries.push(RelationEntry {
                incoming_channel: alpha,
                zeta_in: zeta.clone(),
                outgoing: RelationOutcome::Channel {
                    channel: beta,
                    zeta_out,
                },
                string: string.clone(),
                ray,
            });
        } else {
            // Locate the next break point on the new leg.
            let c_next = string.breaks[j];
            let next_points: Vec<DVector<T>> = if string.legs[j].0 == c_next {
                let phi_now = phi_on_line(&w_j, &xi_next);
                line_points(
                    &w_j,
                    &xi_next,
                    phi_now + T::c(0.15),
                    T::pi() - T::c(0.25),
                    spec.tangential_positions,
                )
            } else {
                forward_hit(lattice, c_next, &w_j, &xi_next)
                    .into_iter()
                    .collect()
            };
            for w_next in next_points {
                if !lattice
                    .is_regular_point(c_next, &(&w_next / w_next.norm()))
                    .unwrap_or(false)
                {
                    continue;
                }
                let mut pts = points.clone();
                pts.push(w_next);
                descend(
                    lattice,
                    model,
                    string,
                    lambda,
                    zeta,
                    alpha,
                    beta,
                    u1,
                    pts,
                    xi_next.clone(),
                    j + 1,
                    spec,
                    rng,
                    entries,
                );
            }
        }
    }
}

/// Approximates the forward image `Φ₊(K)` of a finite point set: for each
/// start point, tangential continuations are emitted along the remaining
/// arc (with the radial limit as a closure point), and break continuations
/// are explored recursively within the break budget. `Φ₊(K) = ∪ Φ₊({ξ})`
/// holds by construction.
pub fn forward_image<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    starts: &[CompressedPoint<T>],
    lambda: T,
    m_max: usize,
    grid: &GridSpec<T>,
    seed: u64,
) -> Result<ForwardImage<T>> {
    if !model.is_discrete() {
        return Err(Error::NotDiscrete);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let resolution_warning = grid.arc_step > grid.epsilon;
    for (idx, start) in starts.iter().enumerate() {
        let rep = char_variety_test(model, lattice, lambda, start, T::c(tol::ENERGY));
        if !rep.in_variety {
            continue;
        }
        // Stationary branch at radial points: the constant curve stays.
        if radial_set_test(model, lattice, lambda, start, Sign::Plus, T::c(tol::ENERGY))
            || radial_set_test(model, lattice, lambda, start, Sign::Minus, T::c(tol::ENERGY))
        {
            let seg = FlowSegment::stationary(
                start.cluster,
                start.cluster,
                lambda - start.tau() * start.tau(),
                lambda,
                start.y.clone(),
                start.xi.clone(),
                T::one(),
            );
            let witness = BrokenRay {
                string: BreakString::new(vec![(start.cluster, ChannelId(0))], vec![]),
                lambda,
                segments: vec![seg],
                breaks: vec![],
                incoming_limit: None,
                outgoing_limit: None,
            };
            points.push(ReachedPoint {
                point: start.clone(),
                source_index: idx,
                closure_derived: false,
                witness,
            });
        }
        // Moving branches: one per tangential channel witness.
        for &(b, eps) in &rep.witnesses {
            let sigma = lambda - eps;
            if (start.xi_norm_sq() - sigma).abs() > T::c(tol::ENERGY)
                || start.mu_norm_sq() <= T::c(tol::ENERGY)
            {
                continue;
            }
            let channel_id = model
                .channels()
                .iter()
                .position(|ch| ch.cluster == b && (ch.energy - eps).abs() <= T::c(1e-12))
                .map(ChannelId);
            let Some(channel_id) = channel_id else { continue };
            explore_forward(
                lattice,
                model,
                lambda,
                idx,
                start.cluster,
                channel_id,
                &start.y,
                &start.xi,
                Vec::new(),
                Vec::new(),
                Vec::new(),
                m_max,
                grid,
                &mut rng,
                &mut points,
            );
        }
    }
    Ok(ForwardImage {
        points,
        resolution_warning,
    })
}

/// Extends the trail by the leg starting at `(y0, xi0)` on `cluster`, emits
/// its grid samples and radial closure point, then branches over breaks.
#[allow(clippy::too_many_arguments)]
fn explore_forward<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    lambda: T,
    source_index: usize,
    cluster: ClusterId,
    channel: ChannelId,
    y0: &DVector<T>,
    xi0: &DVector<T>,
    trail_legs: Vec<(ClusterId, ChannelId)>,
    trail_segments: Vec<FlowSegment<T>>,
    trail_breaks: Vec<BreakRecord<T>>,
    budget: usize,
    grid: &GridSpec<T>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<ReachedPoint<T>>,
) {
    let ch = *model.channel(channel).unwrap();
    let guard = T::c(tol::ARC_GUARD);
    let seg = match FlowSegment::arc_from_anchor(
        cluster,
        ch.cluster,
        ch.energy,
        lambda,
        y0,
        xi0,
        (T::zero(), T::pi()),
        (true, false),
    ) {
        Ok(_) => {
            // Rebuild with the anchor's actual phase as the attained start.
            let sigma = lambda - ch.energy;
            let u = xi0 / sigma.sqrt();
            let cos_phi0 = -y0.dot(&u);
            let rej = y0 + &u * cos_phi0;
            let p = &rej / rej.norm();
            let phi0 = rej.norm().atan2(cos_phi0);
            match FlowSegment::from_frame(
                cluster,
                ch.cluster,
                ch.energy,
                lambda,
                u,
                p,
                (phi0, T::pi() - guard),
                (true, false),
            ) {
                Ok(s) => s,
                Err(_) => return,
            }
        }
        Err(_) => return,
    };

    let mut legs = trail_legs;
    legs.push((cluster, channel));
    let mut segments = trail_segments;
    segments.push(seg.clone());

    let make_witness = |segs: &[FlowSegment<T>],
                        brks: &[BreakRecord<T>],
                        lgs: &[(ClusterId, ChannelId)],
                        cut_last_at: Option<T>|
     -> BrokenRay<T> {
        let mut segs = segs.to_vec();
        if let Some(phi) = cut_last_at {
            if let Some(last) = segs.last_mut() {
                if let crate::flow::SegmentKind::Arc {
                    u_hat,
                    p_hat,
                    phi_range,
                    ..
                } = &last.kind
                {
                    *last = FlowSegment::from_frame(
                        last.cluster,
                        last.channel_cluster,
                        last.channel_energy,
                        last.lambda,
                        u_hat.clone(),
                        p_hat.clone(),
                        (phi_range.0, phi),
                        (true, true),
                    )
                    .unwrap_or_else(|_| last.clone());
                }
            }
        }
        let breaks_c: Vec<ClusterId> = brks.iter().map(|b| b.cluster).collect();
        BrokenRay {
            string: BreakString::new(lgs.to_vec(), breaks_c),
            lambda,
            segments: segs,
            breaks: brks.to_vec(),
            incoming_limit: None,
            outgoing_limit: None,
        }
    };

    // Emit grid samples along the remaining arc.
    let (s_lo, s_hi) = seg.s_range();
    let span = s_hi - s_lo;
    let steps = (span / grid.arc_step).to_f64().ceil().max(1.0) as usize;
    for k in 1..=steps {
        let s = s_lo + span * T::c(k as f64 / steps as f64);
        if let Ok(p) = seg.flow_point(s) {
            out.push(ReachedPoint {
                point: p,
                source_index,
                closure_derived: false,
                witness: make_witness(&segments, &trail_breaks, &legs, Some(s - seg.s0)),
            });
        }
    }
    // Radial closure point of the maximal extension (τ limit exists; the
    // limit point is emitted with the closure label).
    let sigma = lambda - ch.energy;
    let u = xi0 / sigma.sqrt();
    let closure_point = CompressedPoint {
        cluster,
        y: u.clone(),
        xi: &u * sigma.sqrt(),
    };
    let mut closure_witness = make_witness(&segments, &trail_breaks, &legs, None);
    closure_witness.outgoing_limit = Some(RadialLimit {
        y: u.clone(),
        tau: -sigma.sqrt(),
        channel_cluster: ch.cluster,
        channel_energy: ch.energy,
    });
    out.push(ReachedPoint {
        point: closure_point,
        source_index,
        closure_derived: true,
        witness: closure_witness,
    });

    if budget == 0 {
        return;
    }

    // Break continuations: every cluster c ⊆ a whose sphere the leg's line
    // crosses forward (or c = a anywhere along the leg), then every
    // admissible outgoing channel and normal direction.
    let w_now = y0.clone();
    for c in lattice.ids() {
        if lattice.dim(c) == 0 || !lattice.plane_subset(c, cluster) {
            continue;
        }
        let candidates: Vec<DVector<T>> = if c == cluster {
            line_points(
                &w_now,
                xi0,
                phi_on_line(&w_now, xi0) + T::c(0.15),
                T::pi() - T::c(0.25),
                2,
            )
        } else {
            forward_hit(lattice, c, &w_now, xi0).into_iter().collect()
        };
        for w_break in candidates {
            let y_break = &w_break / w_break.norm();
            if !lattice.is_regular_point(c, &y_break).unwrap_or(false) {
                continue;
            }
            let xi_c = lattice.project_external(c, xi0).unwrap();
            for (ch_idx, out_ch) in model.channels().iter().enumerate() {
                let sigma_next = lambda - out_ch.energy;
                let deficit = sigma_next - xi_c.norm_squared();
                // Outgoing legs live in planes between X_c and the channel
                // cluster; sample the maximal normal sphere.
                if !lattice.plane_subset(c, out_ch.cluster) {
                    continue;
                }
                let phi_break = phi_on_line(&w_now, xi0);
                let phi_at = phi_on_line(&w_break, xi0).max(phi_break);
                let cut = phi_at;
                let push_branch = |xi_next: DVector<T>,
                                       a_next: ClusterId,
                                       tangential: bool,
                                       rng: &mut ChaCha8Rng,
                                       out: &mut Vec<ReachedPoint<T>>| {
                    let mut brks = trail_breaks.clone();
                    brks.push(BreakRecord {
                        cluster: c,
                        w: w_break.clone(),
                        point: CompressedPoint {
                            cluster: c,
                            y: y_break.clone(),
                            xi: xi_c.clone(),
                        },
                        xi_in: xi0.clone(),
                        xi_out: xi_next.clone(),
                        tangential_out: tangential,
                        conservation_defect: T::zero(),
                    });
                    // Truncate the current leg at the break.
                    let mut segs = segments.clone();
                    if let Some(last) = segs.last_mut() {
                        if let crate::flow::SegmentKind::Arc {
                            u_hat,
                            p_hat,
                            phi_range,
                            ..
                        } = &last.kind
                        {
                            if let Ok(s) = FlowSegment::from_frame(
                                last.cluster,
                                last.channel_cluster,
                                last.channel_energy,
                                last.lambda,
                                u_hat.clone(),
                                p_hat.clone(),
                                (phi_range.0, cut),
                                (true, true),
                            ) {
                                *last = s;
                            } else {
                                return;
                            }
                        }
                    }
                    explore_forward(
                        lattice,
                        model,
                        lambda,
                        source_index,
                        a_next,
                        ChannelId(ch_idx),
                        &y_break,
                        &xi_next,
                        legs.clone(),
                        segs,
                        brks,
                        budget - 1,
                        grid,
                        rng,
                        out,
                    );
                };
                if deficit.abs() <= T::c(tol::SEGMENT_ENERGY) {
                    // Tangential continuation inside X_c.
                    if c != cluster && xi_c.norm_squared() > T::c(tol::ENERGY) {
                        push_branch(xi_c.clone(), c, true, rng, out);
                    }
                } else if deficit > T::c(tol::SEGMENT_ENERGY) {
                    for dir in normal_directions(lattice, c, out_ch.cluster, grid.normal_dirs, rng)
                    {
                        let xi_next = &xi_c + &dir * deficit.sqrt();
                        // Smallest lattice plane containing X_c and ν̂.
                        let a_next = smallest_plane_containing(lattice, c, &dir);
                        push_branch(xi_next, a_next, false, rng, out);
                    }
                }
            }
        }
    }
}

fn smallest_plane_containing<T: Float>(
    lattice: &ClusterLattice<T>,
    c: ClusterId,
    dir: &DVector<T>,
) -> ClusterId {
    let mut best: Option<ClusterId> = None;
    for a in lattice.ids() {
        if !lattice.plane_subset(c, a) {
            continue;
        }
        let sub = lattice.subspace(a).unwrap();
        if sub.normal_distance(dir) <= T::c(tol::MEMBERSHIP) {
            best = match best {
                None => Some(a),
                Some(b) if lattice.dim(a) < lattice.dim(b) => Some(a),
                keep => keep,
            };
        }
    }
    best.expect("the free cluster contains every direction")
}
