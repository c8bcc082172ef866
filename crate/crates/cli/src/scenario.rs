//! Scenario files: a single JSON document with exact decimal basis rows,
//! the channel table, the total energy, and run parameters.

use std::collections::BTreeMap;

use brokenray::lattice::{build_lattice, ClusterId, ClusterLattice, Subspace, FREE, ORIGIN};
use brokenray::phase::{Channel, ChannelId, SpectralModel};
use serde::{Deserialize, Serialize};

use crate::emit::fmt17;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceSpec {
    pub name: String,
    pub basis_rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub cluster: String,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    pub max_breaks: usize,
    pub seed: u64,
    pub samples: usize,
    pub normal_dirs: usize,
    pub tangential_positions: usize,
    pub arc_step: f64,
    pub epsilon: f64,
    pub lambda_margin: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            max_breaks: 2,
            seed: 1,
            samples: 32,
            normal_dirs: 4,
            tangential_positions: 2,
            arc_step: 0.1,
            epsilon: 0.15,
            lambda_margin: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub ambient_dim: usize,
    #[serde(default)]
    pub subspaces: Vec<SubspaceSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    pub lambda: f64,
    #[serde(default)]
    pub params: RunParams,
}

/// A scenario compiled against the lattice: stable cluster names in both
/// directions plus the spectral model.
pub struct Compiled {
    pub scenario: Scenario,
    pub lattice: ClusterLattice<f64>,
    pub model: SpectralModel<f64>,
    pub names: BTreeMap<String, ClusterId>,
    pub labels: Vec<String>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, String> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| format!("scenario parse error: {e}"))?;
        if s.schema_version != 1 {
            return Err(format!("unsupported schema_version {}", s.schema_version));
        }
        Ok(s)
    }

    /// Canonical emission: fixed key order, 17-significant-digit floats.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n  \"schema_version\": 1,\n");
        out.push_str(&format!("  \"ambient_dim\": {},\n", self.ambient_dim));
        out.push_str("  \"subspaces\": [\n");
        for (i, s) in self.subspaces.iter().enumerate() {
            let rows: Vec<String> = s
                .basis_rows
                .iter()
                .map(|r| {
                    let cells: Vec<String> = r.iter().map(|&x| fmt17(x)).collect();
                    format!("[{}]", cells.join(", "))
                })
                .collect();
            out.push_str(&format!(
                "    {{\"name\": {}, \"basis_rows\": [{}]}}{}\n",
                serde_json::to_string(&s.name).unwrap(),
                rows.join(", "),
                if i + 1 < self.subspaces.len() { "," } else { "" }
            ));
        }
        out.push_str("  ],\n  \"channels\": [\n");
        for (i, c) in self.channels.iter().enumerate() {
            out.push_str(&format!(
                "    {{\"cluster\": {}, \"energy\": {}}}{}\n",
                serde_json::to_string(&c.cluster).unwrap(),
                fmt17(c.energy),
                if i + 1 < self.channels.len() { "," } else { "" }
            ));
        }
        out.push_str("  ],\n");
        out.push_str(&format!("  \"lambda\": {},\n", fmt17(self.lambda)));
        let p = &self.params;
        out.push_str(&format!(
            "  \"params\": {{\"max_breaks\": {}, \"seed\": {}, \"samples\": {}, \"normal_dirs\": {}, \"tangential_positions\": {}, \"arc_step\": {}, \"epsilon\": {}, \"lambda_margin\": {}}}\n",
            p.max_breaks,
            p.seed,
            p.samples,
            p.normal_dirs,
            p.tangential_positions,
            fmt17(p.arc_step),
            fmt17(p.epsilon),
            fmt17(p.lambda_margin)
        ));
        out.push_str("}\n");
        out
    }

    /// Builds the lattice and spectral model, assigning stable names:
    /// `free`, `origin`, the generator names, and `meet<k>` for closure
    /// products in id order.
    pub fn compile(self) -> Result<Compiled, String> {
        let mut generators = Vec::new();
        for s in &self.subspaces {
            let sub = Subspace::from_rows(&s.basis_rows, self.ambient_dim)
                .map_err(|e| format!("subspace {}: {e}", s.name))?;
            generators.push(sub);
        }
        let lattice =
            build_lattice(generators, self.ambient_dim).map_err(|e| format!("lattice: {e}"))?;

        let mut labels = vec![String::new(); lattice.len()];
        labels[FREE.0] = "free".to_string();
        labels[ORIGIN.0] = "origin".to_string();
        // Generators appear right after the two distinguished elements in
        // the order given (deduplication may merge onto earlier ids).
        let mut names = BTreeMap::new();
        names.insert("free".to_string(), FREE);
        names.insert("origin".to_string(), ORIGIN);
        for (spec, _) in self.subspaces.iter().zip(0..) {
            let sub = Subspace::from_rows(&spec.basis_rows, self.ambient_dim)
                .map_err(|e| format!("subspace {}: {e}", spec.name))?;
            let id = lattice
                .ids()
                .find(|&a| {
                    brokenray::linalg::same_span(lattice.subspace(a).unwrap().basis(), sub.basis())
                })
                .ok_or_else(|| format!("generator {} vanished from the closure", spec.name))?;
            if labels[id.0].is_empty() {
                labels[id.0] = spec.name.clone();
            }
            names.insert(spec.name.clone(), id);
        }
        let mut meet_count = 0usize;
        for a in lattice.ids() {
            if labels[a.0].is_empty() {
                labels[a.0] = format!("meet{meet_count}");
                meet_count += 1;
            }
            names.entry(labels[a.0].clone()).or_insert(a);
        }

        let mut channels = Vec::new();
        for (i, c) in self.channels.iter().enumerate() {
            let cluster = *names
                .get(&c.cluster)
                .ok_or_else(|| format!("channel {i}: unknown cluster '{}'", c.cluster))?;
            channels.push(Channel {
                cluster,
                index: i,
                energy: c.energy,
            });
        }
        let model =
            SpectralModel::new(&lattice, channels).map_err(|e| format!("channel table: {e}"))?;
        Ok(Compiled {
            scenario: self,
            lattice,
            model,
            names,
            labels,
        })
    }
}

impl Compiled {
    pub fn label(&self, a: ClusterId) -> &str {
        &self.labels[a.0]
    }

    pub fn lambda(&self) -> f64 {
        self.scenario.lambda
    }

    /// Rejects total energies on the threshold set (needed by relation
    /// runs), within the configured margin.
    pub fn check_lambda_off_thresholds(&self) -> Result<(), String> {
        let margin = self.scenario.params.lambda_margin.max(1e-9);
        for t in self.model.lambda_one(&self.lattice) {
            if (self.lambda() - t).abs() < margin {
                return Err(format!(
                    "lambda = {} is within {margin} of the threshold {t}",
                    self.lambda()
                ));
            }
        }
        Ok(())
    }

    /// Channel selector "k" (table index) or "cluster/index".
    pub fn channel_by_selector(&self, sel: &str) -> Result<ChannelId, String> {
        if let Ok(k) = sel.parse::<usize>() {
            if k < self.model.channels().len() {
                return Ok(ChannelId(k));
            }
            return Err(format!("channel index {k} out of range"));
        }
        if let Some((cluster, idx)) = sel.split_once('/') {
            let a = self
                .names
                .get(cluster)
                .ok_or_else(|| format!("unknown cluster '{cluster}'"))?;
            let idx: usize = idx.parse().map_err(|_| "bad channel index".to_string())?;
            let pos = self
                .model
                .channels()
                .iter()
                .position(|c| c.cluster == *a && c.index == idx)
                .ok_or_else(|| format!("no channel {idx} on cluster {cluster}"))?;
            return Ok(ChannelId(pos));
        }
        Err(format!("cannot parse channel selector '{sel}'"))
    }

    /// Break-string text: semicolon-separated alternation of legs
    /// `cluster:channel` and break cluster names, e.g.
    /// `free:0;L1;free:0`.
    pub fn parse_string(&self, text: &str) -> Result<brokenray::ray::BreakString, String> {
        let mut legs = Vec::new();
        let mut breaks = Vec::new();
        for (i, tok) in text.split(';').enumerate() {
            let tok = tok.trim();
            if i % 2 == 0 {
                let (cluster, channel) = tok
                    .split_once(':')
                    .ok_or_else(|| format!("leg '{tok}' must be cluster:channel"))?;
                let a = self
                    .names
                    .get(cluster)
                    .ok_or_else(|| format!("unknown cluster '{cluster}'"))?;
                let ch = self.channel_by_selector(channel)?;
                legs.push((*a, ch));
            } else {
                let c = self
                    .names
                    .get(tok)
                    .ok_or_else(|| format!("unknown break cluster '{tok}'"))?;
                breaks.push(*c);
            }
        }
        if legs.len() != breaks.len() + 1 {
            return Err("string must end with a leg".to_string());
        }
        Ok(brokenray::ray::BreakString::new(legs, breaks))
    }

    pub fn string_label(&self, s: &brokenray::ray::BreakString) -> String {
        let mut out = String::new();
        for (j, (a, ch)) in s.legs.iter().enumerate() {
            if j > 0 {
                out.push_str(&format!(";{};", self.label(s.breaks[j - 1])));
            }
            out.push_str(&format!("{}:{}", self.label(*a), ch.0));
        }
        out
    }
}
