//! Structural and Dini-inequality verification of ray candidates.
//!
//! Structural mode checks the discrete-threshold characterization directly:
//! every piece an integral curve of some rescaled Hamilton field, exact
//! conservation at breaks, global τ-monotonicity, and the tangential/normal
//! dichotomy immediately after each break. Dini mode additionally runs the
//! one-sided lower-derivative test on the test-function library at every
//! break time.

use crate::flow::{dini_check, EtaFunction, SampledCurve, TauFunction, TestFunction};
use crate::float::Float;
use crate::lattice::ClusterLattice;
use crate::phase::{char_variety_test, Sign, SpectralModel};
use crate::tol;

use super::BrokenRay;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMode {
    Structural,
    Dini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Monotonicity,
    Conservation,
    Energy,
    Continuity,
    CharVariety,
    Tangency,
    StringMismatch,
    Dini,
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ViolationKind::Monotonicity => "MonotonicityViolation",
            ViolationKind::Conservation => "ConservationViolation",
            ViolationKind::Energy => "EnergyViolation",
            ViolationKind::Continuity => "ContinuityViolation",
            ViolationKind::CharVariety => "CharVarietyViolation",
            ViolationKind::Tangency => "TangencyViolation",
            ViolationKind::StringMismatch => "StringMismatch",
            ViolationKind::Dini => "DiniViolation",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub mode: VerifyMode,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push<T: Float>(&mut self, kind: ViolationKind, magnitude: T, detail: String) {
        self.violations.push(Violation {
            kind,
            detail,
            magnitude: magnitude.to_f64(),
        });
    }
}

/// Verifies a constructed ray.
pub fn verify_ray<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    ray: &BrokenRay<T>,
    lambda: T,
    mode: VerifyMode,
) -> VerifyReport {
    let mut report = VerifyReport {
        mode,
        violations: Vec::new(),
    };
    let tol_c = T::c(tol::BREAK_CONSERVATION);

    // String bookkeeping matches the segments.
    if ray.segments.len() != ray.string.legs.len() || ray.breaks.len() != ray.string.breaks.len() {
        report.push(
            ViolationKind::StringMismatch,
            T::zero(),
            format!(
                "{} segments / {} breaks vs string {} / {}",
                ray.segments.len(),
                ray.breaks.len(),
                ray.string.legs.len(),
                ray.string.breaks.len()
            ),
        );
        return report;
    }
    for (j, seg) in ray.segments.iter().enumerate() {
        let (a, alpha) = ray.string.legs[j];
        if seg.cluster != a {
            report.push(
                ViolationKind::StringMismatch,
                T::zero(),
                format!("segment {j} cluster {} vs string {a}", seg.cluster),
            );
        }
        if let Ok(ch) = model.channel(alpha) {
            if (ch.energy - seg.channel_energy).abs() > T::c(tol::ENERGY) {
                report.push(
                    ViolationKind::StringMismatch,
                    (ch.energy - seg.channel_energy).abs(),
                    format!("segment {j} channel energy mismatch"),
                );
            }
        }
        if !lattice.plane_subset(seg.cluster, seg.channel_cluster) {
            report.push(
                ViolationKind::StringMismatch,
                T::zero(),
                format!("segment {j}: propagation plane not inside the channel cluster"),
            );
        }
    }

    // Per-segment energy and characteristic-variety membership.
    for (j, seg) in ray.segments.iter().enumerate() {
        let sigma = ray.lambda - seg.channel_energy;
        if (seg.sigma - sigma).abs() > T::c(tol::ENERGY) || sigma < -T::c(tol::ENERGY) {
            report.push(
                ViolationKind::Energy,
                (seg.sigma - sigma).abs(),
                format!("segment {j} kinetic energy inconsistent with λ − ε"),
            );
        }
        for point in [seg.start_point(), seg.end_point()] {
            let got = point.xi_norm_sq();
            if !seg.is_stationary() && (got - seg.sigma).abs() > T::c(tol::SEGMENT_ENERGY) {
                report.push(
                    ViolationKind::Energy,
                    (got - seg.sigma).abs(),
                    format!("segment {j}: |ξ|² departs from σ"),
                );
            }
            let rep = char_variety_test(model, lattice, lambda, &point, T::c(tol::ENERGY));
            if !rep.in_variety {
                report.push(
                    ViolationKind::CharVariety,
                    T::zero(),
                    format!("segment {j} endpoint not in Σ̇(λ)"),
                );
            }
        }
    }

    // Breaks: continuity, conservation, τ-monotonicity, tangency dichotomy.
    for (j, brk) in ray.breaks.iter().enumerate() {
        let seg_in = &ray.segments[j];
        let seg_out = &ray.segments[j + 1];
        let end = seg_in.end_point();
        let start = seg_out.start_point();
        let pos_gap = (&end.y - &start.y).norm();
        if pos_gap > tol_c {
            report.push(
                ViolationKind::Continuity,
                pos_gap,
                format!("break {j}: segment endpoints disagree on the sphere"),
            );
        }
        let c = brk.cluster;
        let xi_in_c = lattice.project_external(c, &end.xi).unwrap();
        let xi_out_c = lattice.project_external(c, &start.xi).unwrap();
        let defect = (&xi_out_c - &xi_in_c).norm();
        if defect > tol_c {
            report.push(
                ViolationKind::Conservation,
                defect,
                format!("break {j}: external momentum defect {:.3e}", defect.to_f64()),
            );
        }
        let recorded = lattice
            .project_external(c, &(&brk.xi_out - &brk.xi_in))
            .unwrap()
            .norm();
        if recorded > tol_c {
            report.push(
                ViolationKind::Conservation,
                recorded,
                format!(
                    "break {j}: recorded momenta violate conservation by {:.3e}",
                    recorded.to_f64()
                ),
            );
        }
        // τ is continuous at a conservative break and decreases within
        // segments, so monotonicity reduces to the break comparison.
        let tau_in = end.tau();
        let tau_out = start.tau();
        if tau_out > tau_in + tol_c {
            report.push(
                ViolationKind::Monotonicity,
                tau_out - tau_in,
                format!("break {j}: τ increases by {:.3e}", (tau_out - tau_in).to_f64()),
            );
        }
        // Break point over the regular part of C_c.
        match lattice.is_regular_point(c, &brk.point.y) {
            Ok(true) => {}
            _ => report.push(
                ViolationKind::Continuity,
                T::zero(),
                format!("break {j}: break point not over C′_{c}"),
            ),
        }
        // Tangential/normal dichotomy for the outgoing side.
        let nu_out = lattice.project_internal(c, &brk.xi_out).unwrap().norm();
        let a_next = ray.string.legs[j + 1].0;
        if brk.tangential_out || a_next == c {
            if nu_out > tol_c {
                report.push(
                    ViolationKind::Tangency,
                    nu_out,
                    format!("break {j}: tangential continuation carries normal momentum"),
                );
            }
            let sigma_next = ray.lambda - seg_out.channel_energy;
            let have = xi_out_c.norm_squared();
            if (have - sigma_next).abs() > T::c(tol::SEGMENT_ENERGY) {
                report.push(
                    ViolationKind::Tangency,
                    (have - sigma_next).abs(),
                    format!("break {j}: tangential energy constraint |ξ_c|² = λ − ε fails"),
                );
            }
        } else if nu_out <= tol_c {
            report.push(
                ViolationKind::Tangency,
                nu_out,
                format!("break {j}: claimed normal continuation is tangent to X_{c}"),
            );
        }
    }

    // Monotonicity across the sampled profile (covers stationary pieces
    // and guards the closed forms).
    let profile = ray.tau_profile(16);
    let mut worst_increase = T::zero();
    for w in profile.windows(2) {
        worst_increase = worst_increase.max(w[1].2 - w[0].2);
    }
    if worst_increase > tol_c {
        report.push(
            ViolationKind::Monotonicity,
            worst_increase,
            format!("τ increases by {:.3e} along the profile", worst_increase.to_f64()),
        );
    }

    if mode == VerifyMode::Dini {
        let h = T::c(1e-4);
        let curve = ray.sampled_curve(h, 3);
        for (j, tb) in ray.break_times().iter().enumerate() {
            let mut fns: Vec<Box<dyn TestFunction<T>>> = vec![Box::new(TauFunction)];
            fns.push(Box::new(EtaFunction {
                plane: ray.breaks[j].cluster,
            }));
            for f in &fns {
                for side in [Sign::Plus, Sign::Minus] {
                    match dini_check(model, lattice, lambda, &curve, f.as_ref(), *tb, side) {
                        Ok(rep) if !rep.pass => {
                            report.push(
                                ViolationKind::Dini,
                                rep.rhs_inf - rep.lhs_estimate,
                                format!(
                                    "break {j}: D{}({} ∘ γ) = {:.3e} < inf scHg f = {:.3e} − tol",
                                    if side == Sign::Plus { "₊" } else { "₋" },
                                    f.name(),
                                    rep.lhs_estimate.to_f64(),
                                    rep.rhs_inf.to_f64()
                                ),
                            );
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    report
}

/// Verification of a bare sampled curve (used e.g. for subsystem-reduced
/// rays): τ-monotonicity, characteristic-variety membership, and optional
/// Dini tests at interior sample times.
pub fn verify_sampled_curve<T: Float>(
    lattice: &ClusterLattice<T>,
    model: &SpectralModel<T>,
    curve: &SampledCurve<T>,
    lambda: T,
    dini_times: &[T],
) -> VerifyReport {
    let mut report = VerifyReport {
        mode: if dini_times.is_empty() {
            VerifyMode::Structural
        } else {
            VerifyMode::Dini
        },
        violations: Vec::new(),
    };
    let tol_c = T::c(tol::BREAK_CONSERVATION);
    let mut prev_tau: Option<T> = None;
    for (i, (_, p)) in curve.samples.iter().enumerate() {
        let tau = p.tau();
        if let Some(prev) = prev_tau {
            if tau > prev + tol_c {
                report.push(
                    ViolationKind::Monotonicity,
                    tau - prev,
                    format!("sample {i}: τ increases"),
                );
            }
        }
        prev_tau = Some(tau);
        let rep = char_variety_test(model, lattice, lambda, p, T::c(tol::ENERGY));
        if !rep.in_variety {
            report.push(
                ViolationKind::CharVariety,
                T::zero(),
                format!("sample {i} not in Σ̇(λ)"),
            );
        }
    }
    for &t0 in dini_times {
        for side in [Sign::Plus, Sign::Minus] {
            if let Ok(rep) = dini_check(model, lattice, lambda, curve, &TauFunction, t0, side) {
                if !rep.pass {
                    report.push(
                        ViolationKind::Dini,
                        rep.rhs_inf - rep.lhs_estimate,
                        format!("t = {}: τ Dini inequality fails", t0.to_f64()),
                    );
                }
            }
        }
    }
    report
}
