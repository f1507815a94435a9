//! Metering devices, equipment variants and the priority heuristics that
//! place cable-cabinet meters and smart meters in a grid.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridTopology, ProsumerCategory};

/// Annual consumption above which a consumer is obliged to get a smart meter.
pub const MANDATORY_METER_KWH: f64 = 6000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    /// Digital substation: transformer, busbar and every outgoing feeder.
    DigiOns,
    /// Intelligent substation: transformer and busbar only.
    Ions,
    /// Intelligent cable distribution cabinet.
    Ikvs,
    /// Smart meter at a prosumer.
    Imsys,
}

impl DeviceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::DigiOns => "digions",
            DeviceKind::Ions => "ions",
            DeviceKind::Ikvs => "ikvs",
            DeviceKind::Imsys => "imsys",
        }
    }

    /// Maximum tolerated measurement error in percent.
    pub fn max_error_pct(self, quantity: Quantity) -> f64 {
        match (self, quantity) {
            (_, Quantity::Voltage) => 0.5,
            (_, Quantity::Current) => 1.0,
            (DeviceKind::Imsys, Quantity::ActivePower) => 1.0,
            (DeviceKind::Imsys, Quantity::ReactivePower) => 2.0,
            (_, Quantity::ActivePower) => 0.5,
            (_, Quantity::ReactivePower) => 1.0,
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    Voltage,
    ActivePower,
    ReactivePower,
    Current,
}

impl Quantity {
    pub fn symbol(self) -> &'static str {
        match self {
            Quantity::Voltage => "V",
            Quantity::ActivePower => "P",
            Quantity::ReactivePower => "Q",
            Quantity::Current => "I",
        }
    }
}

/// Where a quantity is measured.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Location {
    /// Bus voltage, or net injection at a bus for P/Q/I.
    Bus(String),
    /// Line flow measured at the end attached to `bus`.
    LineEnd { line: String, bus: String },
    /// MV/LV transformer, power flowing from the MV side into the LV grid.
    Transformer,
    /// Injection of a single prosumer.
    Prosumer(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Bus(b) => write!(f, "{b}"),
            Location::LineEnd { line, bus } => write!(f, "{line}@{bus}"),
            Location::Transformer => f.write_str("transformer"),
            Location::Prosumer(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub quantity: Quantity,
    pub location: Location,
    pub max_error_pct: f64,
    pub device: DeviceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubstationDevice {
    DigiOns,
    Ions,
}

impl SubstationDevice {
    pub fn kind(self) -> DeviceKind {
        match self {
            SubstationDevice::DigiOns => DeviceKind::DigiOns,
            SubstationDevice::Ions => DeviceKind::Ions,
        }
    }
}

/// Parses `none`, `digions` or `ions`.
pub fn parse_substation(s: &str) -> Result<Option<SubstationDevice>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "none" | "-" | "" => Ok(None),
        "digions" => Ok(Some(SubstationDevice::DigiOns)),
        "ions" => Ok(Some(SubstationDevice::Ions)),
        other => Err(Error::Config(format!("unknown substation device {other}"))),
    }
}

/// A rollout strategy: which devices, and what share of the possible sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquipmentVariant {
    pub id: String,
    pub name: String,
    pub substation: Option<SubstationDevice>,
    pub ikvs_pct: f64,
    pub imsys_pct: f64,
    pub allocation_seed: u64,
}

impl EquipmentVariant {
    pub fn new(id: impl Into<String>, substation: Option<SubstationDevice>, ikvs_pct: f64, imsys_pct: f64) -> Self {
        let id = id.into();
        EquipmentVariant {
            name: id.clone(),
            id,
            substation,
            ikvs_pct,
            imsys_pct,
            allocation_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.allocation_seed = seed;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("ikvs_pct", self.ikvs_pct), ("imsys_pct", self.imsys_pct)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Config(format!(
                    "variant {}: {what} = {v} outside [0, 100]",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Builds a variant from `substation`, `ikvs_pct`, `imsys_pct`, `seed`
    /// (and optional `name`) keys.
    pub fn from_keys(id: &str, keys: &HashMap<String, String>) -> Result<Self> {
        let num = |k: &str| -> Result<f64> {
            keys.get(k).map_or(Ok(0.0), |v| {
                f64::from_str(v.trim()).map_err(|_| Error::Config(format!("variant {id}: bad {k} = {v}")))
            })
        };
        let seed = match keys.get("seed") {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("variant {id}: bad seed = {v}")))?,
            None => 0,
        };
        let variant = EquipmentVariant {
            id: id.to_string(),
            name: keys.get("name").cloned().unwrap_or_else(|| id.to_string()),
            substation: parse_substation(keys.get("substation").map_or("none", String::as_str))?,
            ikvs_pct: num("ikvs_pct")?,
            imsys_pct: num("imsys_pct")?,
            allocation_seed: seed,
        };
        variant.validate()?;
        Ok(variant)
    }
}

/// The six reference rollout variants.
pub fn reference_variants() -> Vec<EquipmentVariant> {
    use SubstationDevice::DigiOns;
    vec![
        EquipmentVariant::new("1", None, 0.0, 0.0).with_name("reference"),
        EquipmentVariant::new("2", Some(DigiOns), 0.0, 0.0).with_name("digiONS"),
        EquipmentVariant::new("3", None, 100.0, 0.0).with_name("100% iKVS"),
        EquipmentVariant::new("4", None, 25.0, 0.0).with_name("25% iKVS"),
        EquipmentVariant::new("5", None, 0.0, 11.0).with_name("11% iMSys"),
        EquipmentVariant::new("6", None, 0.0, 5.0).with_name("5% iMSys"),
    ]
}

/// `round_half_up(pct / 100 * count)`.
pub fn target_count(pct: f64, count: usize) -> usize {
    let exact = pct * count as f64 / 100.0;
    // absorb representation error so that e.g. 25% of 2 rounds up
    ((exact + 0.5 + 1e-9).floor() as usize).min(count)
}

fn shuffled_tail(mut rest: Vec<String>, seed: u64) -> Vec<String> {
    rest.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    rest
}

/// Complete cabinet priority order: the farthest cabinet from the substation
/// busbar, then the one with most feeder lines among the rest, then a seeded
/// random order. Ties go to the smaller id.
pub fn ikvs_priority(grid: &GridTopology, seed: u64) -> Vec<String> {
    let dist = grid.distances_from(grid.substation_busbar_index());
    let mut remaining: Vec<_> = grid
        .cabinets
        .iter()
        .map(|c| (c.id.clone(), dist[grid.bus_idx(&c.busbar).unwrap()], c.feeder_count()))
        .collect();
    remaining.sort_by(|a, b| a.0.cmp(&b.0));
    let mut order = Vec::with_capacity(remaining.len());

    let farthest = remaining
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    if let Some(i) = farthest {
        order.push(remaining.remove(i).0);
    }
    let most_feeders = remaining
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.2.cmp(&b.2).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    if let Some(i) = most_feeders {
        order.push(remaining.remove(i).0);
    }
    order.extend(shuffled_tail(remaining.into_iter().map(|r| r.0).collect(), seed));
    order
}

pub fn allocate_ikvs(grid: &GridTopology, pct: f64, seed: u64) -> Vec<String> {
    let mut order = ikvs_priority(grid, seed);
    order.truncate(target_count(pct, grid.cabinets.len()));
    order
}

/// Complete smart-meter priority order: consumers above the mandatory
/// threshold by descending consumption, then electric vehicles by id, then a
/// seeded random order.
pub fn imsys_priority(grid: &GridTopology, seed: u64) -> Vec<String> {
    let mut big: Vec<_> = grid
        .prosumers
        .iter()
        .filter(|p| p.annual_energy > MANDATORY_METER_KWH)
        .collect();
    big.sort_by(|a, b| b.annual_energy.total_cmp(&a.annual_energy).then(a.id.cmp(&b.id)));
    let mut order: Vec<String> = big.into_iter().map(|p| p.id.clone()).collect();

    let mut evs: Vec<String> = grid
        .prosumers
        .iter()
        .filter(|p| p.category == ProsumerCategory::ElectricVehicle && !order.contains(&p.id))
        .map(|p| p.id.clone())
        .collect();
    evs.sort();
    order.extend(evs);

    let rest = grid
        .prosumers
        .iter()
        .filter(|p| !order.contains(&p.id))
        .map(|p| p.id.clone())
        .collect();
    order.extend(shuffled_tail(rest, seed));
    order
}

pub fn allocate_imsys(grid: &GridTopology, pct: f64, seed: u64) -> Vec<String> {
    let mut order = imsys_priority(grid, seed);
    order.truncate(target_count(pct, grid.prosumers.len()));
    order
}

/// Concrete devices placed for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub substation: Option<SubstationDevice>,
    pub ikvs: Vec<String>,
    pub imsys: Vec<String>,
}

pub fn allocate(grid: &GridTopology, variant: &EquipmentVariant) -> Allocation {
    Allocation {
        substation: variant.substation,
        ikvs: allocate_ikvs(grid, variant.ikvs_pct, variant.allocation_seed),
        imsys: allocate_imsys(grid, variant.imsys_pct, variant.allocation_seed),
    }
}

impl Allocation {
    /// `device_kind,location_id` rows.
    pub fn write_csv(&self, grid: &GridTopology, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "device_kind,location_id")?;
        if let Some(dev) = self.substation {
            writeln!(out, "{},{}", dev.kind(), grid.transformer.substation_busbar)?;
        }
        for c in &self.ikvs {
            writeln!(out, "ikvs,{c}")?;
        }
        for p in &self.imsys {
            writeln!(out, "imsys,{p}")?;
        }
        Ok(())
    }

    pub fn specs(&self, grid: &GridTopology) -> Result<Vec<MeasurementSpec>> {
        let mut specs = Vec::new();
        let mut push = |quantity: Quantity, location: Location, device: DeviceKind| {
            specs.push(MeasurementSpec {
                quantity,
                max_error_pct: device.max_error_pct(quantity),
                location,
                device,
            })
        };
        use Quantity::*;

        if let Some(dev) = self.substation {
            let dev = dev.kind();
            for q in [ActivePower, ReactivePower, Current] {
                push(q, Location::Transformer, dev);
            }
            let busbar = grid.transformer.substation_busbar.clone();
            push(Voltage, Location::Bus(busbar.clone()), dev);
            if dev == DeviceKind::DigiOns {
                for l in grid.substation_feeder_lines() {
                    for q in [ActivePower, ReactivePower, Current] {
                        push(
                            q,
                            Location::LineEnd {
                                line: grid.lines[l].id.clone(),
                                bus: busbar.clone(),
                            },
                            dev,
                        );
                    }
                }
            }
        }
        for cid in &self.ikvs {
            let cab = grid
                .cabinets
                .iter()
                .find(|c| &c.id == cid)
                .ok_or_else(|| Error::invalid("cabinet", cid, "not in grid"))?;
            push(Voltage, Location::Bus(cab.busbar.clone()), DeviceKind::Ikvs);
            for l in &cab.feeder_lines {
                for q in [ActivePower, ReactivePower, Current] {
                    push(
                        q,
                        Location::LineEnd {
                            line: l.clone(),
                            bus: cab.busbar.clone(),
                        },
                        DeviceKind::Ikvs,
                    );
                }
            }
        }
        for pid in &self.imsys {
            let p = grid.prosumer(pid)?;
            push(ActivePower, Location::Prosumer(pid.clone()), DeviceKind::Imsys);
            push(ReactivePower, Location::Prosumer(pid.clone()), DeviceKind::Imsys);
            push(Voltage, Location::Bus(p.bus.clone()), DeviceKind::Imsys);
            push(Current, Location::Prosumer(pid.clone()), DeviceKind::Imsys);
        }
        Ok(dedup_specs(specs))
    }
}

/// Keeps the first occurrence of each (quantity, location); on conflict the
/// smaller maximum error wins.
pub fn dedup_specs(specs: Vec<MeasurementSpec>) -> Vec<MeasurementSpec> {
    let mut pos: HashMap<(Quantity, Location), usize> = HashMap::new();
    let mut out: Vec<MeasurementSpec> = Vec::with_capacity(specs.len());
    for s in specs {
        match pos.get(&(s.quantity, s.location.clone())) {
            Some(&i) => {
                if s.max_error_pct < out[i].max_error_pct {
                    out[i] = s;
                }
            }
            None => {
                pos.insert((s.quantity, s.location.clone()), out.len());
                out.push(s);
            }
        }
    }
    out
}

pub fn expand_to_specs(grid: &GridTopology, variant: &EquipmentVariant) -> Result<Vec<MeasurementSpec>> {
    variant.validate()?;
    allocate(grid, variant).specs(grid)
}
