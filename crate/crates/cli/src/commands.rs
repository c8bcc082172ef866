//! Subcommand implementations. All outputs are deterministic for a fixed
//! scenario and seed: work items carry derived seeds and results are
//! merged in canonical order regardless of the thread count.

use std::fs;
use std::path::Path;

use brokenray::lagrangian::{compose_chain, lagrangian_certificate, SeedLagrangian, SymplecticSpace};
use brokenray::lattice::ClusterId;
use brokenray::ray::{
    bound_constants, build_ray, channel_relation, enumerate_strings, shoot_ray, BreakString,
    BrokenRay, NormalChoice, RayParams, RayStart, RelationOutcome, SamplingSpec, VerifyMode,
};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::emit::{csv_vec, fmt17, json_matrix, json_str, json_vec};
use crate::scenario::Compiled;

pub enum CmdError {
    /// Input/scenario problems → exit 2.
    Input(String),
    /// Structurally infeasible requests (closed channels, unrealizable
    /// strings) → exit 3.
    Infeasible(String),
    /// Verification failures → exit 1.
    Verification(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Verification(_) => 1,
            CmdError::Input(_) => 2,
            CmdError::Infeasible(_) => 3,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, msg) = match self {
            CmdError::Verification(m) => ("verification_failure", m),
            CmdError::Input(m) => ("input_error", m),
            CmdError::Infeasible(m) => ("infeasible", m),
        };
        format!("{{\"error\": {}, \"detail\": {}}}", json_str(kind), json_str(msg))
    }
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), CmdError> {
    fs::create_dir_all(dir).map_err(|e| CmdError::Input(format!("create {dir:?}: {e}")))?;
    fs::write(dir.join(name), content)
        .map_err(|e| CmdError::Input(format!("write {name}: {e}")))
}

fn unit_in(comp: &Compiled, a: ClusterId, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
    let basis = comp.lattice.subspace(a).ok()?.basis().clone();
    for _ in 0..32 {
        let coords = DVector::from_fn(basis.ncols(), |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let v = &basis * coords;
        let n = v.norm();
        if n > 0.3 {
            return Some(v / n);
        }
    }
    None
}

fn normal_choice(
    comp: &Compiled,
    c: ClusterId,
    a_next: ClusterId,
    rng: &mut ChaCha8Rng,
) -> Option<NormalChoice<f64>> {
    if a_next == c {
        return Some(NormalChoice::Tangential);
    }
    for _ in 0..32 {
        let v = unit_in(comp, a_next, rng)?;
        let perp = comp.lattice.project_internal(c, &v).ok()?;
        let n = perp.norm();
        if n > 0.3 {
            return Some(NormalChoice::Normal(perp / n));
        }
    }
    None
}

/// One shooting attempt for a string, from a derived seed.
fn attempt_ray(comp: &Compiled, string: &BreakString, item_seed: u64) -> Option<BrokenRay<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
    let lambda = comp.lambda();
    let a1 = string.legs[0].0;
    if comp.lattice.dim(a1) < 2 {
        return None;
    }
    if string.break_count() == 0 {
        let y = unit_in(comp, a1, &mut rng)?;
        let mut t = unit_in(comp, a1, &mut rng)?;
        t -= &y * y.dot(&t);
        let n = t.norm();
        if n < 0.3 {
            return None;
        }
        t /= n;
        return build_ray(
            &comp.lattice,
            &comp.model,
            string,
            lambda,
            &RayParams {
                start: RayStart::FreeArc { y, tangent: t },
                break_points: vec![],
                normal_out: NormalChoice::Tangential,
            },
        )
        .ok();
    }
    let dir = unit_in(comp, a1, &mut rng)?;
    let w1 = unit_in(comp, string.breaks[0], &mut rng)? * (0.5 + rng.random::<f64>());
    let normals: Option<Vec<NormalChoice<f64>>> = (0..string.break_count())
        .map(|j| normal_choice(comp, string.breaks[j], string.legs[j + 1].0, &mut rng))
        .collect();
    shoot_ray(
        &comp.lattice,
        &comp.model,
        string,
        lambda,
        &dir,
        &w1,
        &normals?,
    )
    .ok()
}

/// Deterministic parallel sweep over strings, sorted on (string, attempt).
fn sweep(
    comp: &Compiled,
    strings: &[BreakString],
    attempts_per_string: usize,
    seed: u64,
) -> Vec<(usize, usize, BrokenRay<f64>)> {
    let items: Vec<(usize, usize)> = (0..strings.len())
        .flat_map(|s| (0..attempts_per_string).map(move |k| (s, k)))
        .collect();
    let mut rays: Vec<(usize, usize, BrokenRay<f64>)> = items
        .par_iter()
        .filter_map(|&(s, k)| {
            let item_seed = seed ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64);
            attempt_ray(comp, &strings[s], item_seed).map(|r| (s, k, r))
        })
        .collect();
    rays.sort_by_key(|&(s, k, _)| (s, k));
    rays
}

fn trace_record(comp: &Compiled, ray_id: usize, ray: &BrokenRay<f64>, verified: bool) -> String {
    let mut segs = Vec::new();
    for seg in &ray.segments {
        let start = seg.start_point();
        let (lo, hi) = seg.s_range();
        segs.push(format!(
            "{{\"cluster\": {}, \"channel_cluster\": {}, \"energy\": {}, \"sigma\": {}, \"s_range\": [{}, {}], \"anchor_y\": {}, \"anchor_xi\": {}}}",
            json_str(comp.label(seg.cluster)),
            json_str(comp.label(seg.channel_cluster)),
            fmt17(seg.channel_energy),
            fmt17(seg.sigma),
            fmt17(lo),
            fmt17(hi),
            json_vec(&start.y),
            json_vec(&start.xi)
        ));
    }
    let mut brks = Vec::new();
    for b in &ray.breaks {
        brks.push(format!(
            "{{\"cluster\": {}, \"w\": {}, \"conservation_defect\": {}, \"tangential\": {}}}",
            json_str(comp.label(b.cluster)),
            json_vec(&b.w),
            fmt17(b.conservation_defect),
            b.tangential_out
        ));
    }
    let profile = ray.tau_profile(8);
    let tau_max = profile.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let tau_min = profile.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    format!(
        "{{\"ray_id\": {ray_id}, \"string\": {}, \"lambda\": {}, \"break_count\": {}, \"length\": {}, \"tau_max\": {}, \"tau_min\": {}, \"segments\": [{}], \"breaks\": [{}], \"verified\": {verified}}}",
        json_str(&comp.string_label(&ray.string)),
        fmt17(ray.lambda),
        ray.break_count(),
        fmt17(ray.length()),
        fmt17(tau_max),
        fmt17(tau_min),
        segs.join(", "),
        brks.join(", ")
    )
}

fn trace_csv_row(comp: &Compiled, ray_id: usize, ray: &BrokenRay<f64>, verified: bool) -> String {
    format!(
        "{ray_id},{},{},{},{},{},{}",
        json_str(&comp.string_label(&ray.string)).replace(',', ";"),
        ray.break_count(),
        fmt17(ray.length()),
        fmt17(
            ray.breaks
                .iter()
                .map(|b| b.conservation_defect)
                .fold(0.0, f64::max)
        ),
        verified,
        fmt17(ray.lambda)
    )
}

/// `trace`: build and verify rays (a given string, or every enumerated
/// one), emitting trace records and the τ profile.
pub fn cmd_trace(
    comp: &Compiled,
    string_text: Option<&str>,
    out: &Path,
    format: &str,
) -> Result<i32, CmdError> {
    let params = &comp.scenario.params;
    let strings: Vec<BreakString> = match string_text {
        Some(text) => {
            let s = comp.parse_string(text).map_err(CmdError::Input)?;
            s.validate(&comp.lattice, &comp.model, comp.lambda())
                .map_err(|e| CmdError::Infeasible(format!("string rejected: {e}")))?;
            vec![s]
        }
        None => enumerate_strings(&comp.lattice, &comp.model, comp.lambda(), params.max_breaks)
            .map_err(|e| CmdError::Input(e.to_string()))?,
    };
    let rays = sweep(comp, &strings, params.samples.max(1), params.seed);
    if rays.is_empty() {
        if let Some(text) = string_text {
            return Err(CmdError::Infeasible(format!(
                "no ray realizes the string '{text}' with the configured sampling"
            )));
        }
    }

    let verdicts: Vec<bool> = rays
        .par_iter()
        .map(|(_, _, ray)| {
            brokenray::ray::verify_ray(&comp.lattice, &comp.model, ray, comp.lambda(), VerifyMode::Dini)
                .passed()
        })
        .collect();

    let mut records = String::new();
    let mut profile = String::from("ray_id,t,s,tau\n");
    if format == "csv" {
        records.push_str("ray_id,string,break_count,length,max_conservation_defect,verified,lambda\n");
    }
    for (ray_id, ((_, _, ray), verified)) in rays.iter().zip(verdicts.iter()).enumerate() {
        if format == "csv" {
            records.push_str(&trace_csv_row(comp, ray_id, ray, *verified));
        } else {
            records.push_str(&trace_record(comp, ray_id, ray, *verified));
        }
        records.push('\n');
        for (t, s, tau) in ray.tau_profile(24) {
            profile.push_str(&format!("{ray_id},{},{},{}\n", fmt17(t), fmt17(s), fmt17(tau)));
        }
    }
    let name = if format == "csv" { "traces.csv" } else { "traces.jsonl" };
    write_out(out, name, &records)?;
    write_out(out, "tau_profile.csv", &profile)?;
    write_out(out, "scenario_normalized.json", &comp.scenario.emit())?;

    let all_ok = verdicts.iter().all(|&v| v);
    eprintln!(
        "trace: {} rays from {} strings, {} verified",
        rays.len(),
        strings.len(),
        verdicts.iter().filter(|&&v| v).count()
    );
    if all_ok {
        Ok(0)
    } else {
        Err(CmdError::Verification(format!(
            "{} of {} rays failed verification",
            verdicts.iter().filter(|&&v| !v).count(),
            rays.len()
        )))
    }
}

/// `relation`: sample `R_{βα}` and certify one chain per string.
pub fn cmd_relation(
    comp: &Compiled,
    alpha: &str,
    beta: &str,
    out: &Path,
) -> Result<i32, CmdError> {
    comp.check_lambda_off_thresholds()
        .map_err(CmdError::Input)?;
    let alpha = comp.channel_by_selector(alpha).map_err(CmdError::Input)?;
    let beta = comp.channel_by_selector(beta).map_err(CmdError::Input)?;
    let params = &comp.scenario.params;
    for id in [alpha, beta] {
        let ch = comp.model.channel(id).unwrap();
        if comp.lambda() <= ch.energy {
            return Err(CmdError::Infeasible(format!(
                "channel {} is closed at lambda = {}",
                id.0,
                comp.lambda()
            )));
        }
    }
    let spec = SamplingSpec {
        n_zeta: params.samples,
        normal_dirs: params.normal_dirs,
        tangential_positions: params.tangential_positions,
    };
    let entries = channel_relation(
        &comp.lattice,
        &comp.model,
        alpha,
        beta,
        comp.lambda(),
        params.max_breaks,
        &spec,
        params.seed,
    )
    .map_err(|e| match e {
        brokenray::Error::ChannelClosed { .. } => CmdError::Infeasible(e.to_string()),
        _ => CmdError::Input(e.to_string()),
    })?;

    let n = comp.lattice.ambient_dim();
    let mut csv = String::from("entry_id,string,break_count");
    for part in ["y_in", "mu_in", "y_out", "mu_out"] {
        for i in 0..n {
            csv.push_str(&format!(",{part}_{i}"));
        }
    }
    csv.push('\n');
    for (k, e) in entries.iter().enumerate() {
        let (y_out, mu_out) = match &e.outgoing {
            RelationOutcome::Channel { zeta_out, .. } => (zeta_out.y.clone(), zeta_out.mu_hat.clone()),
            RelationOutcome::Terminal(p) => (p.y.clone(), p.mu()),
        };
        csv.push_str(&format!(
            "{k},{},{},{},{},{},{}\n",
            json_str(&comp.string_label(&e.string)).replace(',', ";"),
            e.ray.break_count(),
            csv_vec(&e.zeta_in.y),
            csv_vec(&e.zeta_in.mu_hat),
            csv_vec(&y_out),
            csv_vec(&mu_out)
        ));
    }
    write_out(out, "relation.csv", &csv)?;

    // Lagrangian certificate summary: one representative chain per string.
    let mut seen: Vec<String> = Vec::new();
    let mut certs = Vec::new();
    for e in &entries {
        let label = comp.string_label(&e.string);
        if seen.contains(&label) || e.ray.break_count() == 0 {
            continue;
        }
        seen.push(label.clone());
        let brk = &e.ray.breaks[0];
        let w0 = &brk.w - &brk.xi_in;
        let last = e.ray.breaks.last().unwrap();
        let w_fin = &last.w + &last.xi_out;
        let points: Vec<DVector<f64>> = e.ray.breaks.iter().map(|b| b.w.clone()).collect();
        match compose_chain(
            &comp.lattice,
            &comp.model,
            &e.string,
            &points,
            comp.lambda(),
            &SeedLagrangian::FirstLeg { start: w0 },
            &w_fin,
        ) {
            Ok((lag, chain)) => {
                let steps: Vec<String> = chain
                    .iter()
                    .map(|c| {
                        format!(
                            "{{\"position\": {}, \"eigmin_transversality\": {}, \"eigmin_a\": {}, \"symmetry_defect\": {}, \"pd_required\": {}, \"pd_ok\": {}, \"psd_ok\": {}}}",
                            c.position,
                            fmt17(c.eigmin_transversality),
                            fmt17(c.eigmin_a),
                            fmt17(c.symmetry_defect),
                            c.pd_required,
                            c.pd_ok,
                            c.psd_ok
                        )
                    })
                    .collect();
                certs.push(format!(
                    "{{\"string\": {}, \"status\": \"ok\", \"steps\": [{}], \"final_matrix\": {}}}",
                    json_str(&label),
                    steps.join(", "),
                    json_matrix(&lag.matrix)
                ));
            }
            Err(err) => {
                certs.push(format!(
                    "{{\"string\": {}, \"status\": \"failed\", \"reason\": {}}}",
                    json_str(&label),
                    json_str(&err.to_string())
                ));
            }
        }
    }
    write_out(
        out,
        "certificates.json",
        &format!("[\n  {}\n]\n", certs.join(",\n  ")),
    )?;
    eprintln!(
        "relation: {} entries across {} strings",
        entries.len(),
        seen.len().max(1)
    );
    Ok(0)
}

/// `bounds`: computed constants plus empirical maxima from a sweep.
pub fn cmd_bounds(comp: &Compiled, out: &Path) -> Result<i32, CmdError> {
    let params = &comp.scenario.params;
    let bc = bound_constants(&comp.lattice, &comp.model, comp.lambda()).map_err(|e| match e {
        brokenray::Error::NotDiscrete => CmdError::Input(e.to_string()),
        _ => CmdError::Input(e.to_string()),
    })?;
    let strings = enumerate_strings(&comp.lattice, &comp.model, comp.lambda(), params.max_breaks)
        .map_err(|e| CmdError::Input(e.to_string()))?;
    let rays = sweep(comp, &strings, params.samples.max(1), params.seed);
    let max_len = rays.iter().map(|(_, _, r)| r.length()).fold(0.0, f64::max);
    let max_breaks = rays.iter().map(|(_, _, r)| r.break_count()).max().unwrap_or(0);
    let per_energy_max = rays
        .iter()
        .flat_map(|(_, _, r)| r.length_by_energy().into_iter().map(|(_, l)| l))
        .fold(0.0, f64::max);
    let pass = (max_breaks as f64) <= bc.m_n
        && max_len <= bc.c1 as f64 * std::f64::consts::PI + 1e-9
        && per_energy_max <= std::f64::consts::PI + 1e-9;
    let subsets: Vec<String> = bc
        .certificates
        .iter()
        .map(|(subset, delta)| {
            let names: Vec<String> = subset.iter().map(|&a| json_str(comp.label(a))).collect();
            format!("{{\"clusters\": [{}], \"co_approach\": {}}}", names.join(", "), fmt17(*delta))
        })
        .collect();
    let report = format!(
        "{{\n  \"l\": {},\n  \"c0\": {},\n  \"c1\": {},\n  \"m_n\": {},\n  \"body_count\": {},\n  \"zero_intersection_subsets\": [{}],\n  \"observed\": {{\"rays\": {}, \"max_length\": {}, \"max_breaks\": {}, \"max_per_energy_length\": {}}},\n  \"pass\": {}\n}}\n",
        fmt17(bc.l),
        fmt17(bc.c0),
        bc.c1,
        fmt17(bc.m_n),
        bc.body_count,
        subsets.join(", "),
        rays.len(),
        fmt17(max_len),
        max_breaks,
        fmt17(per_energy_max),
        pass
    );
    write_out(out, "bounds.json", &report)?;
    eprintln!(
        "bounds: l = {:.4}, C0 = {:.4}, C1 = {}, M_N = {:.1}, observed (len {:.4}, breaks {})",
        bc.l, bc.c0, bc.c1, bc.m_n, max_len, max_breaks
    );
    if pass {
        Ok(0)
    } else {
        Err(CmdError::Verification(
            "observed maxima exceed the computed bounds".to_string(),
        ))
    }
}

#[derive(serde::Deserialize)]
struct ChainSpecFile {
    string: String,
    break_points: Vec<Vec<f64>>,
    #[serde(default)]
    seed_kind: Option<String>,
    #[serde(default)]
    seed_start: Option<Vec<f64>>,
    #[serde(default)]
    seed_sigma: Option<f64>,
    final_point: Vec<f64>,
}

/// `certify`: chain certificates, from an explicit chain file or sampled
/// from the scenario's own ray sweep.
pub fn cmd_certify(comp: &Compiled, chain_file: Option<&Path>, out: &Path) -> Result<i32, CmdError> {
    let params = &comp.scenario.params;
    type ChainJob = (BreakString, Vec<DVector<f64>>, SeedLagrangian<f64>, DVector<f64>);
    let mut jobs: Vec<ChainJob> = Vec::new();
    match chain_file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CmdError::Input(format!("read {path:?}: {e}")))?;
            let spec: ChainSpecFile =
                serde_json::from_str(&text).map_err(|e| CmdError::Input(format!("chain: {e}")))?;
            let string = comp.parse_string(&spec.string).map_err(CmdError::Input)?;
            let points: Vec<DVector<f64>> = spec
                .break_points
                .iter()
                .map(|p| DVector::from_column_slice(p))
                .collect();
            let seed = match spec.seed_kind.as_deref() {
                None | Some("first_leg") => SeedLagrangian::FirstLeg {
                    start: DVector::from_column_slice(
                        spec.seed_start
                            .as_deref()
                            .ok_or_else(|| CmdError::Input("seed_start required".into()))?,
                    ),
                },
                Some("plane_wave") => SeedLagrangian::PlaneWave,
                Some("radial") => SeedLagrangian::Radial {
                    sigma: spec
                        .seed_sigma
                        .ok_or_else(|| CmdError::Input("seed_sigma required".into()))?,
                },
                Some(other) => {
                    return Err(CmdError::Input(format!("unknown seed kind '{other}'")))
                }
            };
            jobs.push((
                string,
                points,
                seed,
                DVector::from_column_slice(&spec.final_point),
            ));
        }
        None => {
            let strings =
                enumerate_strings(&comp.lattice, &comp.model, comp.lambda(), params.max_breaks)
                    .map_err(|e| CmdError::Input(e.to_string()))?;
            let rays = sweep(comp, &strings, params.samples.max(1), params.seed);
            for (_, _, ray) in rays.iter().filter(|(_, _, r)| r.break_count() >= 1) {
                let brk = &ray.breaks[0];
                let w0 = &brk.w - &brk.xi_in;
                let last = ray.breaks.last().unwrap();
                let w_fin = &last.w + &last.xi_out;
                let points: Vec<DVector<f64>> = ray.breaks.iter().map(|b| b.w.clone()).collect();
                jobs.push((
                    ray.string.clone(),
                    points,
                    SeedLagrangian::FirstLeg { start: w0 },
                    w_fin,
                ));
                if jobs.len() >= params.samples.max(8) {
                    break;
                }
            }
            if jobs.is_empty() {
                return Err(CmdError::Infeasible(
                    "no broken rays available to certify".to_string(),
                ));
            }
        }
    }

    let mut reports = Vec::new();
    let mut all_ok = true;
    for (k, (string, points, seed, final_point)) in jobs.iter().enumerate() {
        match compose_chain(
            &comp.lattice,
            &comp.model,
            string,
            points,
            comp.lambda(),
            seed,
            final_point,
        ) {
            Ok((lag, chain)) => {
                let tangent_cert = lagrangian_certificate(
                    SymplecticSpace::Graph { dim: lag.dim() },
                    &lag.tangent_basis(),
                )
                .map_err(|e| CmdError::Input(e.to_string()))?;
                let ok = chain.iter().all(|c| c.psd_ok && (!c.pd_required || c.pd_ok))
                    && tangent_cert.is_lagrangian;
                all_ok &= ok;
                let steps: Vec<String> = chain
                    .iter()
                    .map(|c| {
                        format!(
                            "{{\"position\": {}, \"eigmin_transversality\": {}, \"eigmin_a\": {}, \"symmetry_defect\": {}, \"pd_required\": {}, \"pd_ok\": {}, \"psd_ok\": {}}}",
                            c.position,
                            fmt17(c.eigmin_transversality),
                            fmt17(c.eigmin_a),
                            fmt17(c.symmetry_defect),
                            c.pd_required,
                            c.pd_ok,
                            c.psd_ok
                        )
                    })
                    .collect();
                reports.push(format!(
                    "{{\"chain_id\": {k}, \"string\": {}, \"status\": \"ok\", \"pass\": {ok}, \"symplectic_residual\": {}, \"steps\": [{}], \"final_matrix\": {}}}",
                    json_str(&comp.string_label(string)),
                    fmt17(tangent_cert.max_form_residual),
                    steps.join(", "),
                    json_matrix(&lag.matrix)
                ));
            }
            Err(e) => {
                all_ok = false;
                reports.push(format!(
                    "{{\"chain_id\": {k}, \"string\": {}, \"status\": \"failed\", \"reason\": {}}}",
                    json_str(&comp.string_label(string)),
                    json_str(&e.to_string())
                ));
            }
        }
    }
    write_out(
        out,
        "certificates.json",
        &format!("[\n  {}\n]\n", reports.join(",\n  ")),
    )?;
    eprintln!("certify: {} chains", jobs.len());
    if all_ok {
        Ok(0)
    } else {
        Err(CmdError::Verification(
            "some chain certificates failed".to_string(),
        ))
    }
}

/// `enumerate`: break strings to stdout as JSON lines.
pub fn cmd_enumerate(comp: &Compiled) -> Result<i32, CmdError> {
    let params = &comp.scenario.params;
    let strings = enumerate_strings(&comp.lattice, &comp.model, comp.lambda(), params.max_breaks)
        .map_err(|e| CmdError::Input(e.to_string()))?;
    for (i, s) in strings.iter().enumerate() {
        let legs: Vec<String> = s
            .legs
            .iter()
            .map(|(a, ch)| {
                let chd = comp.model.channel(*ch).unwrap();
                format!(
                    "{{\"cluster\": {}, \"channel\": {}, \"energy\": {}}}",
                    json_str(comp.label(*a)),
                    ch.0,
                    fmt17(chd.energy)
                )
            })
            .collect();
        let brks: Vec<String> = s
            .breaks
            .iter()
            .map(|c| json_str(comp.label(*c)))
            .collect();
        println!(
            "{{\"index\": {i}, \"break_count\": {}, \"label\": {}, \"legs\": [{}], \"break_clusters\": [{}]}}",
            s.break_count(),
            json_str(&comp.string_label(s)),
            legs.join(", "),
            brks.join(", ")
        );
    }
    eprintln!("enumerate: {} strings", strings.len());
    Ok(0)
}
