//! Shared fixtures for the integration suites.

use brokenray::lattice::{build_lattice, ClusterId, ClusterLattice, Subspace, FREE};
use brokenray::phase::{Channel, ChannelId, SpectralModel};
use brokenray::ray::{
    build_ray, enumerate_strings, shoot_ray, BreakString, BrokenRay, NormalChoice, RayParams,
    RayStart,
};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn line2(theta: f64) -> Subspace<f64> {
    Subspace::new(DMatrix::from_column_slice(2, 1, &[theta.cos(), theta.sin()])).unwrap()
}

/// Three lines in ℝ² with Λ₁ = {0, −0.5}.
pub fn three_lines_r2() -> (ClusterLattice<f64>, SpectralModel<f64>) {
    let lat = build_lattice(vec![line2(0.0), line2(1.0), line2(2.2)], 2).unwrap();
    let channels = lat
        .ids()
        .filter(|&a| lat.dim(a) == 1)
        .map(|a| Channel {
            cluster: a,
            index: 0,
            energy: -0.5,
        })
        .collect();
    let model = SpectralModel::new(&lat, channels).unwrap();
    (lat, model)
}

/// Four-body configuration in ℝ³: two planes meeting in a line, with a
/// bound channel on one plane.
pub fn four_body_r3() -> (ClusterLattice<f64>, SpectralModel<f64>) {
    let p1 = Subspace::new(DMatrix::from_column_slice(
        3,
        2,
        &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    ))
    .unwrap();
    let p2 = Subspace::new(DMatrix::from_column_slice(
        3,
        2,
        &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ))
    .unwrap();
    let lat = build_lattice(vec![p1, p2], 3).unwrap();
    let plane = lat.ids().find(|&a| lat.dim(a) == 2).unwrap();
    let model = SpectralModel::new(
        &lat,
        vec![Channel {
            cluster: plane,
            index: 0,
            energy: -0.4,
        }],
    )
    .unwrap();
    (lat, model)
}

pub fn unit_in<T: rand::Rng>(lat: &ClusterLattice<f64>, a: ClusterId, rng: &mut T) -> DVector<f64> {
    let basis = lat.subspace(a).unwrap().basis().clone();
    loop {
        let coords = DVector::from_fn(basis.ncols(), |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let v = &basis * coords;
        let n = v.norm();
        if n > 0.3 {
            return v / n;
        }
    }
}

fn normal_dir<T: rand::Rng>(
    lat: &ClusterLattice<f64>,
    c: ClusterId,
    a: ClusterId,
    rng: &mut T,
) -> Option<DVector<f64>> {
    let dim_gap = lat.dim(a) - lat.dim(c);
    if dim_gap == 0 {
        return None;
    }
    for _ in 0..32 {
        let v = unit_in(lat, a, rng);
        let perp = lat.project_internal(c, &v).unwrap();
        let n = perp.norm();
        if n > 0.3 {
            return Some(perp / n);
        }
    }
    None
}

/// Deterministic stream of structurally valid random rays over a scenario:
/// unbroken arcs, single breaks, and two-break through-point rays.
pub fn random_rays(
    lat: &ClusterLattice<f64>,
    model: &SpectralModel<f64>,
    lambda: f64,
    count: usize,
    seed: u64,
) -> Vec<BrokenRay<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let free_ch = ChannelId(
        model
            .channels()
            .iter()
            .position(|c| c.cluster == FREE)
            .unwrap(),
    );
    let breakable: Vec<ClusterId> = lat
        .ids()
        .filter(|&a| lat.dim(a) >= 1 && lat.dim(a) < lat.ambient_dim())
        .collect();
    let mut attempts = 0;
    while out.len() < count && attempts < 200 * count {
        attempts += 1;
        let kind = rng.random::<u32>() % 3;
        let ray = match kind {
            0 => {
                // Unbroken free arc.
                let y = unit_in(lat, FREE, &mut rng);
                let mut t = unit_in(lat, FREE, &mut rng);
                t -= &y * y.dot(&t);
                let n = t.norm();
                if n < 0.3 {
                    continue;
                }
                t /= n;
                build_ray(
                    lat,
                    model,
                    &BreakString::new(vec![(FREE, free_ch)], vec![]),
                    lambda,
                    &RayParams {
                        start: RayStart::FreeArc { y, tangent: t },
                        break_points: vec![],
                        normal_out: NormalChoice::Tangential,
                    },
                )
            }
            1 => {
                // Single break at a random proper cluster, random outgoing
                // channel.
                let c = breakable[(rng.random::<u32>() as usize) % breakable.len()];
                let w1 = unit_in(lat, c, &mut rng) * (0.5 + rng.random::<f64>());
                let dir = unit_in(lat, FREE, &mut rng);
                let n_channels = model.channels().len();
                let beta = ChannelId((rng.random::<u32>() as usize) % n_channels);
                let bcl = model.channel(beta).unwrap().cluster;
                if !lat.plane_subset(c, bcl) {
                    continue;
                }
                // Outgoing propagation plane: the channel cluster itself.
                let Some(nu) = normal_dir(lat, c, bcl, &mut rng) else {
                    continue;
                };
                build_ray(
                    lat,
                    model,
                    &BreakString::new(vec![(FREE, free_ch), (bcl, beta)], vec![c]),
                    lambda,
                    &RayParams {
                        start: RayStart::Incoming { direction: dir },
                        break_points: vec![w1],
                        normal_out: NormalChoice::Normal(nu),
                    },
                )
            }
            _ => {
                // Two breaks through random points, incoming direction
                // derived backward from conservation.
                if breakable.len() < 2 {
                    continue;
                }
                let c1 = breakable[(rng.random::<u32>() as usize) % breakable.len()];
                let c2 = breakable[(rng.random::<u32>() as usize) % breakable.len()];
                if c1 == c2 {
                    continue;
                }
                let w1 = unit_in(lat, c1, &mut rng) * (0.5 + rng.random::<f64>());
                let w2 = unit_in(lat, c2, &mut rng) * (0.5 + rng.random::<f64>());
                let Some(nu_in) = normal_dir(lat, c1, FREE, &mut rng) else {
                    continue;
                };
                let Some(nu_out) = normal_dir(lat, c2, FREE, &mut rng) else {
                    continue;
                };
                build_ray(
                    lat,
                    model,
                    &BreakString::new(
                        vec![(FREE, free_ch), (FREE, free_ch), (FREE, free_ch)],
                        vec![c1, c2],
                    ),
                    lambda,
                    &RayParams {
                        start: RayStart::FromConservation {
                            normal_in: NormalChoice::Normal(nu_in),
                        },
                        break_points: vec![w1, w2],
                        normal_out: NormalChoice::Normal(nu_out),
                    },
                )
            }
        };
        if let Ok(r) = ray {
            out.push(r);
        }
    }
    out
}

/// Exhaustive-ish ray sweep: for every enumerated string up to the budget,
/// a few shooting attempts from random incoming data.
#[allow(dead_code)]
pub fn sweep_rays(
    lat: &ClusterLattice<f64>,
    model: &SpectralModel<f64>,
    lambda: f64,
    m_max: usize,
    per_string: usize,
    seed: u64,
) -> Vec<(BreakString, BrokenRay<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for string in enumerate_strings(lat, model, lambda, m_max).unwrap() {
        let m = string.break_count();
        if m == 0 {
            if lat.dim(string.legs[0].0) < 2 {
                continue;
            }
            for _ in 0..per_string {
                let a = string.legs[0].0;
                let y = unit_in(lat, a, &mut rng);
                let mut t = unit_in(lat, a, &mut rng);
                t -= &y * y.dot(&t);
                let n = t.norm();
                if n < 0.3 {
                    continue;
                }
                t /= n;
                if let Ok(r) = build_ray(
                    lat,
                    model,
                    &string,
                    lambda,
                    &RayParams {
                        start: RayStart::FreeArc { y, tangent: t },
                        break_points: vec![],
                        normal_out: NormalChoice::Tangential,
                    },
                ) {
                    out.push((string.clone(), r));
                }
            }
            continue;
        }
        for _ in 0..(4 * per_string) {
            let a1 = string.legs[0].0;
            if lat.dim(a1) < 2 {
                continue;
            }
            let dir = unit_in(lat, a1, &mut rng);
            let w1 = unit_in(lat, string.breaks[0], &mut rng) * (0.5 + rng.random::<f64>());
            let normals: Option<Vec<NormalChoice<f64>>> = (0..m)
                .map(|j| {
                    let c = string.breaks[j];
                    let a_next = string.legs[j + 1].0;
                    if a_next == c {
                        Some(NormalChoice::Tangential)
                    } else {
                        normal_dir(lat, c, a_next, &mut rng).map(NormalChoice::Normal)
                    }
                })
                .collect();
            let Some(normals) = normals else { continue };
            if let Ok(r) = shoot_ray(lat, model, &string, lambda, &dir, &w1, &normals) {
                out.push((string.clone(), r));
            }
        }
    }
    out
}

/// Pure-geometry oracle for the planar double-reflection family: a ray
/// from the source `w0` with direction angle `theta` reflecting off the
/// x-axis and then the y-axis. Returns `(w1, w2, xi1, xi2, xi3)`; `None`
/// when the ordering is infeasible.
pub type ReflectionData = (
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
    DVector<f64>,
);

pub fn double_reflection_family(w0: &DVector<f64>, theta: f64) -> Option<ReflectionData> {
    let u = DVector::from_column_slice(&[theta.cos(), theta.sin()]);
    if u[1].abs() < 1e-6 {
        return None;
    }
    let t1 = -w0[1] / u[1];
    if t1 <= 1e-6 {
        return None;
    }
    let w1 = w0 + &u * t1;
    let xi2 = DVector::from_column_slice(&[u[0], -u[1]]);
    if xi2[0].abs() < 1e-6 {
        return None;
    }
    let t2 = -w1[0] / xi2[0];
    if t2 <= 1e-6 {
        return None;
    }
    let w2 = &w1 + &xi2 * t2;
    let xi3 = DVector::from_column_slice(&[-xi2[0], xi2[1]]);
    if w1.norm() < 1e-3 || w2.norm() < 1e-3 {
        return None;
    }
    Some((w1, w2, u, xi2, xi3))
}
