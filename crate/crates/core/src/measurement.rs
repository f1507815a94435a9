//! Measurement synthesis: noisy device readings drawn around the power-flow
//! truth, plus pseudo-measurements for unmetered prosumers and the slack
//! voltage.
//!
//! Noise is Gaussian with the device's maximum error taken as 3σ and, by
//! default, clamped to ±3σ. Every draw uses its own RNG stream derived from
//! `(master seed, timestep, spec index)`, so results do not depend on the order
//! in which timesteps are evaluated.

use std::collections::HashSet;
use std::io::Write;
use std::ops::Range;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::allocation::{Location, MeasurementSpec, Quantity};
use crate::error::{Error, Result};
use crate::fixtures::{H0_ANNUAL_KWH, H0_PROFILE_ID};
use crate::grid::{GridTopology, ProfileLibrary, Prosumer, ProsumerCategory};
use crate::power_flow::{Network, PowerFlowSolution};

/// Magnitude floor (pu) for the relative-error reference of P, Q and I.
pub const REFERENCE_FLOOR_PU: f64 = 1e-4;
/// Smallest standard deviation handed to the estimator.
pub const MIN_SIGMA_PU: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub quantity: Quantity,
    pub location: Location,
    /// Per-unit value; powers in generator convention.
    pub value: f64,
    pub sigma: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Clamped,
    Unclamped,
    /// Values equal the truth; sigmas are still reported for weighting.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoConfig {
    pub cos_phi: f64,
    /// Relative σ of household-type pseudo values.
    pub sigma_load_rel: f64,
    /// Relative σ of PV pseudo values.
    pub sigma_pv_rel: f64,
    /// σ of the slack voltage pseudo value relative to nominal.
    pub sigma_slack_v_rel: f64,
    /// σ floor as a share of the prosumer's mean pseudo apparent power.
    pub sigma_floor_rel: f64,
    pub h0_profile: String,
    /// Annual energy the H0 profile is normalised to.
    pub h0_annual_kwh: f64,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig {
            cos_phi: 0.95,
            sigma_load_rel: 0.5 / 3.0,
            sigma_pv_rel: 0.2 / 3.0,
            sigma_slack_v_rel: 0.001,
            sigma_floor_rel: 0.1,
            h0_profile: H0_PROFILE_ID.to_string(),
            h0_annual_kwh: H0_ANNUAL_KWH,
        }
    }
}

impl PseudoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cos_phi > 0.0 && self.cos_phi <= 1.0) {
            return Err(Error::Config(format!("cos_phi {} outside (0, 1]", self.cos_phi)));
        }
        for (k, v) in [
            ("sigma_load_rel", self.sigma_load_rel),
            ("sigma_pv_rel", self.sigma_pv_rel),
            ("sigma_slack_v_rel", self.sigma_slack_v_rel),
            ("h0_annual_kwh", self.h0_annual_kwh),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be > 0")));
            }
        }
        if self.sigma_floor_rel < 0.0 {
            return Err(Error::Config("sigma_floor_rel must be >= 0".into()));
        }
        Ok(())
    }

    pub fn tan_phi(&self) -> f64 {
        self.cos_phi.acos().tan()
    }
}

/// σ for a maximum error given in percent, read as a 3σ bound.
pub fn sigma_for(max_error_pct: f64, reference_magnitude: f64) -> f64 {
    max_error_pct / 100.0 * reference_magnitude / 3.0
}

/// Draws `true_value + e`, `e ~ N(0, σ)`, optionally clamped to ±3σ.
/// Returns the value and the σ used.
pub fn noise_draw(
    true_value: f64,
    max_error_pct: f64,
    reference_magnitude: f64,
    rng: &mut impl Rng,
    mode: NoiseMode,
) -> (f64, f64) {
    let sigma = sigma_for(max_error_pct, reference_magnitude);
    let e = match mode {
        NoiseMode::Off => 0.0,
        NoiseMode::Unclamped => sigma * rng.sample::<f64, _>(StandardNormal),
        NoiseMode::Clamped => (sigma * rng.sample::<f64, _>(StandardNormal)).clamp(-3.0 * sigma, 3.0 * sigma),
    };
    (true_value + e, sigma)
}

/// Relative errors refer to nominal voltage for V and to the instantaneous
/// magnitude (floored) for P, Q and I.
pub fn reference_magnitude(quantity: Quantity, truth: f64) -> f64 {
    match quantity {
        Quantity::Voltage => 1.0,
        _ => truth.abs().max(REFERENCE_FLOOR_PU),
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG for one (seed, timestep, spec) triple.
pub fn substream(seed: u64, t: usize, index: usize) -> ChaCha8Rng {
    let k = splitmix(splitmix(splitmix(seed) ^ t as u64) ^ index as u64);
    ChaCha8Rng::seed_from_u64(k)
}

/// True value of a measured quantity (pu) in a power-flow solution.
pub fn truth_value(
    grid: &GridTopology,
    net: &Network,
    sol: &PowerFlowSolution,
    quantity: Quantity,
    location: &Location,
) -> Result<f64> {
    let flows = &sol.flows;
    let missing = || Error::MissingTruth(format!("{} at {location}", quantity.symbol()));
    let pick = |s: Complex64, i: f64| match quantity {
        Quantity::ActivePower => Ok(s.re),
        Quantity::ReactivePower => Ok(s.im),
        Quantity::Current => Ok(i),
        Quantity::Voltage => Err(missing()),
    };
    match location {
        Location::Bus(b) => {
            let i = grid.bus_idx(b).map_err(|_| missing())?;
            let v = flows.voltages[i];
            match quantity {
                Quantity::Voltage => Ok(v.norm()),
                _ => {
                    let s = flows.injections[i];
                    pick(s, s.norm() / v.norm())
                }
            }
        }
        Location::Transformer => match net.transformer_branch {
            Some(b) => {
                let f = &flows.branch_flows[b];
                pick(f.s_from, f.i_from)
            }
            None => {
                let s = flows.injections[net.slack];
                pick(s, s.norm() / flows.voltages[net.slack].norm())
            }
        },
        Location::LineEnd { line, bus } => {
            let k = grid.line_idx(line).map_err(|_| missing())?;
            let b = &net.branches[net.line_branch[k]];
            let at = grid.bus_idx(bus).map_err(|_| missing())?;
            let f = &flows.branch_flows[net.line_branch[k]];
            if at == b.from {
                pick(f.s_from, f.i_from)
            } else if at == b.to {
                pick(f.s_to, f.i_to)
            } else {
                Err(missing())
            }
        }
        Location::Prosumer(p) => {
            let k = grid.prosumer_idx(p).map_err(|_| missing())?;
            let s = sol.prosumer_injections[k];
            let v = flows.voltages[grid.bus_idx(&grid.prosumers[k].bus)?].norm();
            pick(s, s.norm() / v)
        }
    }
}

/// Noisy readings for every spec at one timestep.
pub fn synthesize_real(
    grid: &GridTopology,
    net: &Network,
    specs: &[MeasurementSpec],
    sol: &PowerFlowSolution,
    seed: u64,
    mode: NoiseMode,
) -> Result<Vec<Measurement>> {
    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let truth = truth_value(grid, net, sol, spec.quantity, &spec.location)?;
            let mut rng = substream(seed, sol.t, k);
            let (value, sigma) = noise_draw(
                truth,
                spec.max_error_pct,
                reference_magnitude(spec.quantity, truth),
                &mut rng,
                mode,
            );
            Ok(Measurement {
                quantity: spec.quantity,
                location: spec.location.clone(),
                value,
                sigma: sigma.max(MIN_SIGMA_PU * 1e-3),
                origin: Origin::Real,
            })
        })
        .collect()
}

/// Household-type pseudo value (P kW, Q kvar; load convention): the H0 shape
/// scaled by the prosumer's annual energy, Q at the configured power factor.
pub fn pseudo_load(prosumer: &Prosumer, t: usize, library: &ProfileLibrary, cfg: &PseudoConfig) -> Result<(f64, f64)> {
    let h0 = library.get(&cfg.h0_profile).ok_or_else(|| Error::MissingProfile {
        profile: cfg.h0_profile.clone(),
        prosumer: prosumer.id.clone(),
    })?;
    if t >= h0.len() {
        return Err(Error::ProfileTooShort {
            profile: cfg.h0_profile.clone(),
            available: h0.len(),
            required: t + 1,
        });
    }
    let p = h0.p_kw[t] * prosumer.annual_energy / cfg.h0_annual_kwh;
    Ok((p, p * cfg.tan_phi()))
}

/// The PV plant whose measured profile stands in for all others: the largest
/// installed power, ties to the smaller id.
pub fn pv_reference(grid: &GridTopology) -> Option<usize> {
    grid.prosumers
        .iter()
        .enumerate()
        .filter(|(_, p)| p.category == ProsumerCategory::PvPlant)
        .max_by(|(_, a), (_, b)| a.installed_power.total_cmp(&b.installed_power).then(b.id.cmp(&a.id)))
        .map(|(i, _)| i)
}

/// PV pseudo value (load convention): the reference plant's true profile
/// scaled by installed power.
pub fn pseudo_pv(
    plant: &Prosumer,
    t: usize,
    grid: &GridTopology,
    library: &ProfileLibrary,
    cfg: &PseudoConfig,
) -> Result<(f64, f64)> {
    let r = pv_reference(grid).ok_or_else(|| Error::NoPvReference(plant.id.clone()))?;
    let reference = &grid.prosumers[r];
    let prof = library.get(&reference.profile).ok_or_else(|| Error::MissingProfile {
        profile: reference.profile.clone(),
        prosumer: reference.id.clone(),
    })?;
    let p = prof.p_kw[t] * (plant.installed_power / reference.installed_power);
    Ok((p, p * cfg.tan_phi()))
}

/// Slack voltage magnitude from the overlaying grid, passed through untouched.
pub fn pseudo_slack_voltage(grid: &GridTopology, sol: &PowerFlowSolution, cfg: &PseudoConfig) -> Measurement {
    let slack = grid.slack_index();
    Measurement {
        quantity: Quantity::Voltage,
        location: Location::Bus(grid.buses[slack].id.clone()),
        value: sol.flows.voltages[slack].norm(),
        sigma: cfg.sigma_slack_v_rel,
        origin: Origin::Pseudo,
    }
}

/// Builds the full measurement vector for each timestep of one variant.
#[derive(Debug, Clone)]
pub struct MeasurementSynthesizer<'a> {
    grid: &'a GridTopology,
    net: &'a Network,
    specs: &'a [MeasurementSpec],
    cfg: PseudoConfig,
    seed: u64,
    noise: NoiseMode,
    metered: HashSet<String>,
    /// Per-prosumer σ floor (pu).
    floors: Vec<f64>,
}

impl<'a> MeasurementSynthesizer<'a> {
    /// `horizon` is the study window used to compute each prosumer's mean pseudo power.
    pub fn new(
        grid: &'a GridTopology,
        net: &'a Network,
        specs: &'a [MeasurementSpec],
        cfg: PseudoConfig,
        seed: u64,
        noise: NoiseMode,
        horizon: Range<usize>,
    ) -> Result<Self> {
        cfg.validate()?;
        let metered = specs
            .iter()
            .filter_map(|s| match &s.location {
                Location::Prosumer(p) => Some(p.clone()),
                _ => None,
            })
            .collect();
        let mut synth = MeasurementSynthesizer {
            grid,
            net,
            specs,
            cfg,
            seed,
            noise,
            metered,
            floors: vec![0.0; grid.prosumers.len()],
        };
        let n = horizon.len().max(1) as f64;
        for k in 0..grid.prosumers.len() {
            if synth.metered.contains(&grid.prosumers[k].id) {
                continue;
            }
            let mut sum = 0.0;
            for t in horizon.clone() {
                let (p, q) = synth.pseudo_kw(k, t)?;
                sum += p.hypot(q);
            }
            synth.floors[k] = (synth.cfg.sigma_floor_rel * net.kw_to_pu(sum / n)).max(MIN_SIGMA_PU);
        }
        Ok(synth)
    }

    pub fn config(&self) -> &PseudoConfig {
        &self.cfg
    }

    pub fn is_metered(&self, prosumer: &str) -> bool {
        self.metered.contains(prosumer)
    }

    fn pseudo_kw(&self, k: usize, t: usize) -> Result<(f64, f64)> {
        let p = &self.grid.prosumers[k];
        match p.category {
            ProsumerCategory::PvPlant => pseudo_pv(p, t, self.grid, &self.grid.profiles, &self.cfg),
            _ => pseudo_load(p, t, &self.grid.profiles, &self.cfg),
        }
    }

    /// Pseudo P and Q injection measurements for prosumer `k`.
    pub fn pseudo_pair(&self, k: usize, t: usize) -> Result<[Measurement; 2]> {
        let p = &self.grid.prosumers[k];
        let rel = if p.category == ProsumerCategory::PvPlant {
            self.cfg.sigma_pv_rel
        } else {
            self.cfg.sigma_load_rel
        };
        let (pk, qk) = self.pseudo_kw(k, t)?;
        let make = |quantity, kw: f64| {
            let value = -self.net.kw_to_pu(kw);
            Measurement {
                quantity,
                location: Location::Prosumer(p.id.clone()),
                value,
                sigma: (rel * value.abs()).max(self.floors[k]),
                origin: Origin::Pseudo,
            }
        };
        Ok([make(Quantity::ActivePower, pk), make(Quantity::ReactivePower, qk)])
    }

    pub fn assemble(&self, sol: &PowerFlowSolution) -> Result<Vec<Measurement>> {
        let t = sol.t;
        let mut out = synthesize_real(self.grid, self.net, self.specs, sol, self.seed, self.noise)?;
        for k in 0..self.grid.prosumers.len() {
            if !self.metered.contains(&self.grid.prosumers[k].id) {
                out.extend(self.pseudo_pair(k, t)?);
            }
        }
        out.push(pseudo_slack_voltage(self.grid, sol, &self.cfg));
        Ok(out)
    }
}

pub fn write_measurement_rows(out: &mut impl Write, t: usize, ms: &[Measurement]) -> std::io::Result<()> {
    for m in ms {
        let origin = match m.origin {
            Origin::Real => "real",
            Origin::Pseudo => "pseudo",
        };
        writeln!(
            out,
            "{t},{},{},{},{},{origin}",
            m.quantity.symbol(),
            m.location,
            m.value,
            m.sigma
        )?;
    }
    Ok(())
}
