//! Run configuration: flag values layered over an optional config file.
//!
//! The file is either JSON or flat `key = value` text with `[section]`
//! headers for one level of nesting (`[tol]` then `chen = 1e-8` is the same
//! as `tol.chen = 1e-8`). Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde_json::{json, Value};

use phi4_core::field::{Grid, NoiseSpec};
use phi4_core::suite::{LiftSpec, Tolerances};
use phi4_core::symtree::{check_delta_admissible, parse_rational};
use phi4_core::{Error, Rational};

use crate::Common;

/// Flattened `key -> value` view of a config file.
pub fn read_file(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        flatten_json(&v)
    } else {
        parse_flat(&text)
    }
}

fn scalar(v: &Value) -> anyhow::Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => bail!("config values must be scalars, found {v}"),
    }
}

fn flatten_json(v: &Value) -> anyhow::Result<BTreeMap<String, String>> {
    let obj = v.as_object().ok_or_else(|| anyhow!("config must be a JSON object"))?;
    let mut out = BTreeMap::new();
    for (k, v) in obj {
        match v {
            Value::Object(inner) => {
                for (k2, v2) in inner {
                    out.insert(format!("{k}.{k2}"), scalar(v2)?);
                }
            }
            _ => {
                out.insert(k.clone(), scalar(v)?);
            }
        }
    }
    Ok(out)
}

pub fn parse_flat(text: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key = value", no + 1))?;
        let key = match &section {
            Some(s) => format!("{s}.{}", k.trim()),
            None => k.trim().to_string(),
        };
        out.insert(key, v.trim().trim_matches('"').to_string());
    }
    Ok(out)
}

/// Fully resolved configuration of one run.
pub struct RunConfig {
    pub delta: Rational,
    pub dim: usize,
    pub grid: Grid,
    pub grid_spec: String,
    pub noise: NoiseSpec,
    pub noise_spec: String,
    pub lift: LiftSpec,
    pub lift_spec: String,
    pub tol: Tolerances,
    pub seed: u64,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(c: &Common) -> anyhow::Result<RunConfig> {
        let file = match &c.config {
            Some(p) => read_file(p)?,
            None => BTreeMap::new(),
        };
        let pick = |flag: &Option<String>, key: &str, default: &str| -> String {
            flag.clone().or_else(|| file.get(key).cloned()).unwrap_or_else(|| default.to_string())
        };
        for k in file.keys() {
            let known = ["delta", "dim", "grid", "noise", "lift", "seed", "samples", "out"];
            if !known.contains(&k.as_str()) && !k.starts_with("tol.") {
                bail!(Error::Config(format!("unknown config key '{k}'")));
            }
        }
        let delta_s = pick(&c.delta, "delta", "3/10");
        let delta = parse_rational(&delta_s)?;
        if !check_delta_admissible(delta) {
            bail!(Error::Config(format!("inadmissible delta {delta_s}")));
        }
        let dim: usize = pick(&c.dim.map(|d| d.to_string()), "dim", "1")
            .parse()
            .map_err(|_| Error::Config("dim must be a positive integer".into()))?;
        let grid_spec = pick(&c.grid, "grid", "default");
        let grid = Grid::parse(&grid_spec, dim)?;
        if grid.dim != dim {
            bail!(Error::Config(format!("grid dimension {} differs from --dim {dim}", grid.dim)));
        }
        let noise_spec = pick(&c.noise, "noise", "gaussian:1:0.03125");
        let noise: NoiseSpec = noise_spec.parse()?;
        let lift_spec = pick(&c.lift, "lift", "multiplicative");
        let mut lift: LiftSpec = lift_spec.parse()?;
        // Files named in a config file are relative to it.
        if c.lift.is_none() {
            if let (Some(cfg), LiftSpec::Counterterm(p) | LiftSpec::Custom(p)) = (&c.config, &mut lift) {
                if p.is_relative() {
                    *p = cfg.parent().unwrap_or(Path::new("")).join(&*p);
                }
            }
        }
        let mut tol = Tolerances::default();
        for (k, v) in &file {
            if let Some(name) = k.strip_prefix("tol.") {
                tol.set(&format!("{name}={v}"))?;
            }
        }
        for t in &c.tol {
            tol.set(t)?;
        }
        let seed: u64 = pick(&c.seed.map(|s| s.to_string()), "seed", "1")
            .parse()
            .map_err(|_| Error::Config("seed must be a non-negative integer".into()))?;
        let samples = match c.samples.map(|s| s.to_string()).or_else(|| file.get("samples").cloned()) {
            Some(s) => Some(s.parse().map_err(|_| Error::Config("samples must be a positive integer".into()))?),
            None => None,
        };
        let out = c.out.clone().or_else(|| file.get("out").map(PathBuf::from));
        Ok(RunConfig { delta, dim, grid, grid_spec, noise, noise_spec, lift, lift_spec, tol, seed, samples, out })
    }

    /// Echo of the configuration for the report header.
    pub fn to_json(&self) -> Value {
        json!({
            "delta": self.delta.to_string(),
            "dim": self.dim,
            "grid": self.grid_spec,
            "noise": self.noise_spec,
            "lift": self.lift_spec,
            "seed": self.seed,
            "samples": self.samples,
            "tolerances": self.tol,
        })
    }

    pub fn samples_or(&self, default: usize) -> usize {
        self.samples.unwrap_or(default)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_sections_nest_one_level() {
        let m = parse_flat("delta = 3/10\n# comment\n[tol]\nchen = 1e-6\n").unwrap();
        assert_eq!(m["delta"], "3/10");
        assert_eq!(m["tol.chen"], "1e-6");
        assert!(parse_flat("nonsense").is_err());
    }

    #[test]
    fn json_and_flat_agree() {
        let a = parse_flat("delta = 9/20\ndim = 1\n[tol]\nchen = 0.001\n").unwrap();
        let b = flatten_json(&json!({"delta": "9/20", "dim": 1, "tol": {"chen": 0.001}})).unwrap();
        assert_eq!(a, b);
    }
}
