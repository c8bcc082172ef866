//! Quantitative constants for the length and break-count bounds.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::lattice::{ClusterId, ClusterLattice};
use crate::linalg;
use crate::phase::{EnergyHypothesis, SpectralModel};

/// Arclength–τ constant: `|cos s − cos s′| ≥ C₀⁻² |s−s′|²` on `(0, π)²`.
///
/// The minimum of `|cos s − cos s′|/|s−s′|²` is `2/π²`, attained in the
/// corner limit `s → 0, s′ → π`; the grid-plus-refinement oracle in the
/// test suite pins this before the constant is trusted.
pub fn c0_constant<T: Float>() -> T {
    T::pi() / T::c(2.0).sqrt()
}

/// The computed bound constants for a discrete-threshold configuration.
#[derive(Debug, Clone)]
pub struct BoundConstants<T: Float> {
    /// Localization length: curves shorter than `l` stay inside the good
    /// region of a single cluster.
    pub l: T,
    /// Arclength–τ constant `π/√2`.
    pub c0: T,
    /// Number of thresholds `|Λ₁|`.
    pub c1: usize,
    /// Break-count bound for the full system from the subsystem recursion.
    pub m_n: f64,
    /// Body count N of the configuration.
    pub body_count: usize,
    /// The critical cluster subsets and their co-approach radii that
    /// produced `l` (pairs carry the exact principal-angle value).
    pub certificates: Vec<(Vec<ClusterId>, T)>,
}

/// Computes `{l, C₀, C₁, M_N}` for a discrete threshold set.
///
/// `l` is half the smallest co-approach radius over minimal cluster subsets
/// with zero total intersection: any ball of radius `l` on the sphere then
/// meets only planes whose common intersection is a nonzero lattice
/// element, which is what the subsystem reduction of the break-count
/// recursion needs. Pairs are certified in closed form (half the first
/// principal angle); larger subsets are sampled and carry a safety factor.
pub fn bound_constants<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    lambda: T,
) -> Result<BoundConstants<T>> {
    if !model.is_discrete() {
        return Err(Error::NotDiscrete);
    }
    let _ = lambda;
    let proper: Vec<ClusterId> = lattice
        .ids()
        .filter(|&a| lattice.dim(a) >= 1 && lattice.dim(a) < lattice.ambient_dim())
        .collect();

    let mut certificates: Vec<(Vec<ClusterId>, T)> = Vec::new();
    let half = T::c(0.5);

    // Pairs with trivial intersection: δ = θ₁/2 exactly.
    for (i, &a) in proper.iter().enumerate() {
        for &b in proper.iter().skip(i + 1) {
            if lattice.dim(lattice.meet(a, b)) == 0 {
                let cosang = linalg::cos_first_principal_angle(
                    lattice.subspace(a)?.basis(),
                    lattice.subspace(b)?.basis(),
                );
                let theta = cosang.acos();
                certificates.push((vec![a, b], theta * half));
            }
        }
    }

    // Minimal triples: pairwise intersections nonzero, total zero. The
    // co-approach radius is sampled; a 0.9 safety factor absorbs the grid.
    for (i, &a) in proper.iter().enumerate() {
        for (j, &b) in proper.iter().enumerate().skip(i + 1) {
            for &c in proper.iter().skip(j + 1) {
                let ab = lattice.meet(a, b);
                let bc = lattice.meet(b, c);
                let ac = lattice.meet(a, c);
                if lattice.dim(ab) == 0 || lattice.dim(bc) == 0 || lattice.dim(ac) == 0 {
                    continue;
                }
                if lattice.dim(lattice.meet(ab, c)) > 0 {
                    continue;
                }
                let delta = sampled_co_approach(lattice, &[a, b, c]);
                certificates.push((vec![a, b, c], delta * T::c(0.9)));
            }
        }
    }

    let l = certificates
        .iter()
        .map(|&(_, d)| d)
        .fold(None, |acc: Option<T>, d| {
            Some(match acc {
                None => d,
                Some(v) => v.min(d),
            })
        })
        .map(|d| d * half)
        // No zero-intersection subsets (e.g. 2-body): any curve localizes.
        .unwrap_or_else(T::pi);

    let c1 = model.lambda_one(lattice).len();
    let n = lattice.body_count();
    let m_n = break_bound_recursion(n, c1 as f64, l.to_f64());

    Ok(BoundConstants {
        l,
        c0: c0_constant(),
        c1,
        m_n,
        body_count: n,
        certificates,
    })
}

/// `M₂ = 0`; `M₃ = (π/l + 1)(2M₂ + 3)` (kinetic energy is constant in a
/// three-body system, so the single-energy length bound π applies);
/// `M_k = (C₁π/l + 1)(2M_{k−1} + 3)` beyond.
fn break_bound_recursion(n: usize, c1: f64, l: f64) -> f64 {
    if n <= 2 {
        return 0.0;
    }
    let pi = std::f64::consts::PI;
    let mut m = 0.0; // M₂
    for k in 3..=n {
        let pieces = if k == 3 { pi / l + 1.0 } else { c1 * pi / l + 1.0 };
        m = pieces * (2.0 * m + 3.0);
    }
    m
}

/// Break bound without discreteness, from the hypothesis that the kinetic
/// energy takes at most `m` values below `c0`: solving
/// `n ≤ A + B√n` with `A = (2M+2)(1 + mπ/l)` and
/// `B = 2(2M+2) C₀ c₀^{−1/2} (λ − inf Λ₁)^{1/2}/l` for the break count `n`.
pub fn break_bound_non_discrete<T: Float>(
    hypothesis: EnergyHypothesis<T>,
    m_subsystem: f64,
    l: T,
    lambda: T,
    inf_lambda_one: T,
) -> f64 {
    let pi = std::f64::consts::PI;
    let c0: T = c0_constant();
    let mm = 2.0 * m_subsystem + 2.0;
    let a = mm * (1.0 + hypothesis.m as f64 * pi / l.to_f64());
    let b = 2.0 * mm * c0.to_f64() * hypothesis.c0.to_f64().powf(-0.5)
        * (lambda - inf_lambda_one).to_f64().max(0.0).sqrt()
        / l.to_f64();
    let root = (b + (b * b + 4.0 * a).sqrt()) / 2.0;
    (root * root).floor()
}

/// Right-hand side of the arclength–τ inequality:
/// `C₀ (Σ_{σ_j>0} σ_j⁻¹)^{1/2} |Δτ|` for a family of segments.
pub fn tau_arclength_rhs<T: Float>(sigmas: &[T], delta_tau: T) -> T {
    let mut inv_sum = T::zero();
    for &s in sigmas {
        if s > T::zero() {
            inv_sum += T::one() / s;
        }
    }
    c0_constant::<T>() * inv_sum.sqrt() * delta_tau.abs()
}

/// Sampled minimax `min_p max_i d(p, C_i)` over the unit sphere, where
/// `d(p, C_b) = arccos |π_b p|`. Coarse random sampling followed by local
/// refinement; accuracy only affects how tight (not whether valid) the
/// final break bound is, through the 0.9 safety factor.
fn sampled_co_approach<T: Float>(lattice: &ClusterLattice<T>, subset: &[ClusterId]) -> T {
    use rand::prelude::*;
    let n = lattice.ambient_dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let cost = |p: &DVector<T>| -> T {
        let mut worst = T::zero();
        for &b in subset {
            let proj = lattice.subspace(b).unwrap().project(p).norm();
            let d = proj.min(T::one()).acos();
            worst = worst.max(d);
        }
        worst
    };
    let mut best_p: Option<DVector<T>> = None;
    let mut best = T::pi();
    for _ in 0..4096 {
        let mut p = DVector::from_fn(n, |_, _| T::c(rng.random::<f64>() * 2.0 - 1.0));
        let norm = p.norm();
        if norm < T::c(1e-6) {
            continue;
        }
        p /= norm;
        let v = cost(&p);
        if v < best {
            best = v;
            best_p = Some(p);
        }
    }
    // Local refinement by shrinking random perturbations.
    if let Some(mut p) = best_p {
        let mut step = T::c(0.2);
        for _ in 0..200 {
            let mut improved = false;
            for _ in 0..16 {
                let mut q =
                    &p + DVector::from_fn(n, |_, _| T::c(rng.random::<f64>() * 2.0 - 1.0)) * step;
                q /= q.norm();
                let v = cost(&q);
                if v < best {
                    best = v;
                    p = q;
                    improved = true;
                }
            }
            if !improved {
                step *= T::c(0.5);
                if step < T::c(1e-9) {
                    break;
                }
            }
        }
    }
    best
}
