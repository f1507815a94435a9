//! Key-value scenario configuration.
//!
//! ```text
//! # comments start with '#'
//! grid = ../grids/synth-rural      # directory, or bundled:<name>
//! t0 = 0
//! t1 = 672
//! seed = 42
//! workers = 4
//! out = out/synth-rural
//!
//! [variant 1]
//! name = reference
//! substation = none
//! ikvs_pct = 0
//! imsys_pct = 0
//!
//! [variant 2]
//! substation = digions
//! ```
//!
//! Top-level keys: `grid`, `t0`, `t1`, `seed`, `workers`, `out`, `noise`
//! (`clamped|unclamped|off`), `warm_start`, `slack_voltage_pu`, `pf_tol`,
//! `pf_max_iter`, `se_tol`, `se_max_iter`, `cos_phi`, `sigma_load_rel`,
//! `sigma_pv_rel`, `sigma_slack_v_rel`, `sigma_floor_rel`, `h0_profile`,
//! `h0_annual_kwh`. Variant keys: `name`, `substation`, `ikvs_pct`,
//! `imsys_pct`, `seed` (allocation seed, defaults to the master seed).
//! Relative paths are resolved against the config file's directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;

use crate::allocation::EquipmentVariant;
use crate::error::{Error, Result};
use crate::estimation::WlsOptions;
use crate::measurement::{NoiseMode, PseudoConfig};
use crate::power_flow::PowerFlowOptions;

#[derive(Debug, Clone, PartialEq)]
pub enum GridSource {
    Directory(PathBuf),
    Bundled(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub grid: GridSource,
    pub t0: usize,
    pub t1: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub noise: NoiseMode,
    pub warm_start: bool,
    pub pseudo: PseudoConfig,
    pub power_flow: PowerFlowOptions,
    pub wls: WlsOptions,
    pub variants: Vec<EquipmentVariant>,
}

impl ScenarioConfig {
    pub fn new(grid: GridSource, t0: usize, t1: usize, seed: u64) -> Self {
        ScenarioConfig {
            grid,
            t0,
            t1,
            seed,
            workers: 1,
            out: PathBuf::from("out"),
            noise: NoiseMode::Clamped,
            warm_start: false,
            pseudo: PseudoConfig::default(),
            power_flow: PowerFlowOptions::default(),
            wls: WlsOptions::default(),
            variants: Vec::new(),
        }
    }

    pub fn steps(&self) -> std::ops::Range<usize> {
        self.t0..self.t1
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 <= self.t0 {
            return Err(Error::Config(format!("t1 ({}) must exceed t0 ({})", self.t1, self.t0)));
        }
        if let GridSource::Directory(d) = &self.grid {
            if !d.is_dir() {
                return Err(Error::Config(format!("grid directory {} does not exist", d.display())));
            }
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no [variant] sections".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.variants {
            if !seen.insert(&v.id) {
                return Err(Error::Config(format!("duplicate variant id {}", v.id)));
            }
            v.validate()?;
        }
        self.pseudo.validate()
    }

    /// Canonical text of every setting that influences results (not `out`
    /// or `workers`).
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let grid = match &self.grid {
            GridSource::Directory(_) => "directory".to_string(),
            GridSource::Bundled(n) => format!("bundled:{n}"),
        };
        let p = &self.pseudo;
        let _ = writeln!(s, "grid={grid}\nt0={}\nt1={}\nseed={}", self.t0, self.t1, self.seed);
        let _ = writeln!(s, "noise={:?}\nwarm_start={}", self.noise, self.warm_start);
        let _ = writeln!(
            s,
            "pf={:?},{},{:?}\nse={:?},{},{}",
            self.power_flow.tolerance,
            self.power_flow.max_iterations,
            self.power_flow.slack_voltage,
            self.wls.tolerance,
            self.wls.max_iterations,
            self.wls.max_halvings
        );
        let _ = writeln!(
            s,
            "pseudo={:?},{:?},{:?},{:?},{:?},{},{:?}",
            p.cos_phi, p.sigma_load_rel, p.sigma_pv_rel, p.sigma_slack_v_rel, p.sigma_floor_rel, p.h0_profile, p.h0_annual_kwh
        );
        for v in &self.variants {
            let _ = writeln!(
                s,
                "variant={},{},{:?},{:?},{:?},{}",
                v.id, v.name, v.substation, v.ikvs_pct, v.imsys_pct, v.allocation_seed
            );
        }
        s
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let (top, sections) = parse_key_values(text)?;
        let get = |k: &str| top.get(k).map(String::as_str);
        let num = |k: &str| -> Result<Option<f64>> {
            get(k)
                .map(|v| f64::from_str(v).map_err(|_| Error::Config(format!("bad number for {k}: {v}"))))
                .transpose()
        };
        let int = |k: &str| -> Result<Option<u64>> {
            get(k)
                .map(|v| u64::from_str(v).map_err(|_| Error::Config(format!("bad integer for {k}: {v}"))))
                .transpose()
        };

        let grid = match get("grid") {
            Some(g) => match g.strip_prefix("bundled:") {
                Some(name) => GridSource::Bundled(name.to_string()),
                None => GridSource::Directory(base_dir.join(g)),
            },
            None => return Err(Error::Config("missing key grid".into())),
        };
        let t0 = int("t0")?.unwrap_or(0) as usize;
        let t1 = int("t1")?.ok_or_else(|| Error::Config("missing key t1".into()))? as usize;
        let seed = int("seed")?.unwrap_or(0);
        let mut cfg = ScenarioConfig::new(grid, t0, t1, seed);
        if let Some(w) = int("workers")? {
            cfg.workers = (w as usize).max(1);
        }
        if let Some(o) = get("out") {
            cfg.out = base_dir.join(o);
        }
        if let Some(n) = get("noise") {
            cfg.noise = match n {
                "clamped" => NoiseMode::Clamped,
                "unclamped" => NoiseMode::Unclamped,
                "off" => NoiseMode::Off,
                other => return Err(Error::Config(format!("unknown noise mode {other}"))),
            };
        }
        if let Some(w) = get("warm_start") {
            cfg.warm_start = parse_bool(w)?;
        }
        if let Some(v) = num("slack_voltage_pu")? {
            cfg.power_flow.slack_voltage = Complex64::new(v, 0.0);
        }
        if let Some(v) = num("pf_tol")? {
            cfg.power_flow.tolerance = v;
        }
        if let Some(v) = int("pf_max_iter")? {
            cfg.power_flow.max_iterations = v as usize;
        }
        if let Some(v) = num("se_tol")? {
            cfg.wls.tolerance = v;
        }
        if let Some(v) = int("se_max_iter")? {
            cfg.wls.max_iterations = v as usize;
        }
        let p = &mut cfg.pseudo;
        for (key, field) in [
            ("cos_phi", &mut p.cos_phi),
            ("sigma_load_rel", &mut p.sigma_load_rel),
            ("sigma_pv_rel", &mut p.sigma_pv_rel),
            ("sigma_slack_v_rel", &mut p.sigma_slack_v_rel),
            ("sigma_floor_rel", &mut p.sigma_floor_rel),
            ("h0_annual_kwh", &mut p.h0_annual_kwh),
        ] {
            if let Some(v) = num(key)? {
                *field = v;
            }
        }
        if let Some(h) = get("h0_profile") {
            p.h0_profile = h.to_string();
        }

        const KNOWN: [&str; 20] = [
            "grid", "t0", "t1", "seed", "workers", "out", "noise", "warm_start", "slack_voltage_pu",
            "pf_tol", "pf_max_iter", "se_tol", "se_max_iter", "cos_phi", "sigma_load_rel",
            "sigma_pv_rel", "sigma_slack_v_rel", "sigma_floor_rel", "h0_profile", "h0_annual_kwh",
        ];
        if let Some(k) = top.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k}")));
        }

        for (id, mut keys) in sections {
            keys.entry("seed".into()).or_insert_with(|| seed.to_string());
            if let Some(k) = keys
                .keys()
                .find(|k| !["name", "substation", "ikvs_pct", "imsys_pct", "seed"].contains(&k.as_str()))
            {
                return Err(Error::Config(format!("variant {id}: unknown key {k}")));
            }
            cfg.variants.push(EquipmentVariant::from_keys(&id, &keys)?);
        }
        Ok(cfg)
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {s}"))),
    }
}

type Sections = Vec<(String, HashMap<String, String>)>;

/// Splits `key = value` lines into top-level keys and `[variant <id>]` sections.
pub fn parse_key_values(text: &str) -> Result<(HashMap<String, String>, Sections)> {
    let mut top = HashMap::new();
    let mut sections: Sections = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let mut parts = header.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("variant"), Some(id), None) => sections.push((id.to_string(), HashMap::new())),
                _ => return Err(Error::Config(format!("line {}: bad section header [{header}]", n + 1))),
            }
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        let target = match sections.last_mut() {
            Some((_, map)) => map,
            None => &mut top,
        };
        if target.insert(k.clone(), v).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok((top, sections))
}
