//! Low-voltage grid model: buses, lines, cable cabinets, prosumers and their
//! load/generation profiles, plus the topology queries used by device
//! allocation (electrical distance, feeder membership).
//!
//! A grid is read from a directory of CSV files:
//!
//! | file            | columns                                                         |
//! |-----------------|-----------------------------------------------------------------|
//! | `grid.csv`      | `base_va,slack_bus,substation_busbar[,trafo_r_ohm,trafo_x_ohm,trafo_sn_va]` |
//! | `buses.csv`     | `id,kind,vn_volts`                                              |
//! | `lines.csv`     | `id,from,to,r_ohm,x_ohm,i_max_a`                                |
//! | `cabinets.csv`  | `id,busbar,feeder_lines` (line ids separated by `;`)            |
//! | `prosumers.csv` | `id,bus,category,annual_kwh,installed_kw,profile_id`            |
//! | `profiles.csv`  | `profile_id,t_index,p_kw,q_kvar`                                |
//!
//! When `slack_bus == substation_busbar` the MV/LV transformer is an ideal
//! coupling and the slack bus doubles as the substation busbar. Otherwise the
//! transformer is a series impedance (referred to the busbar side) between the
//! two buses and `trafo_r_ohm`/`trafo_x_ohm` are required.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    SlackCoupling,
    SubstationBusbar,
    CabinetBusbar,
    Junction,
    ConnectionPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    #[serde(rename = "vn_volts")]
    pub nominal_voltage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    #[serde(rename = "from")]
    pub from_bus: String,
    #[serde(rename = "to")]
    pub to_bus: String,
    #[serde(rename = "r_ohm")]
    pub resistance: f64,
    #[serde(rename = "x_ohm")]
    pub reactance: f64,
    #[serde(rename = "i_max_a")]
    pub thermal_current_limit: f64,
}

impl Line {
    pub fn impedance_magnitude(&self) -> f64 {
        self.resistance.hypot(self.reactance)
    }

    pub fn is_incident(&self, bus: &str) -> bool {
        self.from_bus == bus || self.to_bus == bus
    }

    pub fn other_end(&self, bus: &str) -> Option<&str> {
        if self.from_bus == bus {
            Some(&self.to_bus)
        } else if self.to_bus == bus {
            Some(&self.from_bus)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CableCabinet {
    pub id: String,
    pub busbar: String,
    pub feeder_lines: Vec<String>,
}

impl CableCabinet {
    pub fn feeder_count(&self) -> usize {
        self.feeder_lines.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProsumerCategory {
    Household,
    PvPlant,
    ElectricVehicle,
    HeatPump,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prosumer {
    pub id: String,
    pub bus: String,
    pub category: ProsumerCategory,
    #[serde(rename = "annual_kwh")]
    pub annual_energy: f64,
    #[serde(rename = "installed_kw")]
    pub installed_power: f64,
    #[serde(rename = "profile_id")]
    pub profile: String,
}

impl Prosumer {
    pub fn is_generator(&self) -> bool {
        self.category == ProsumerCategory::PvPlant
    }
}

/// One load/generation series at 15-minute resolution, load convention
/// (positive = withdrawal from the grid).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Profile {
    pub p_kw: Vec<f64>,
    pub q_kvar: Vec<f64>,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.p_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_kw.is_empty()
    }

    pub fn at(&self, t: usize) -> (f64, f64) {
        (self.p_kw[t], self.q_kvar[t])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileLibrary {
    series: BTreeMap<String, Profile>,
}

impl ProfileLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, profile: Profile) {
        self.series.insert(id.into(), profile);
    }

    pub fn get(&self, id: &str) -> Option<&Profile> {
        self.series.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Profile)> {
        self.series.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Common series length, if all series agree.
    pub fn steps(&self) -> Option<usize> {
        let mut lens = self.series.values().map(Profile::len);
        let first = lens.next()?;
        lens.all(|l| l == first).then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub slack_bus: String,
    pub substation_busbar: String,
    /// Series impedance referred to the busbar side; `None` for an ideal coupling.
    pub impedance_ohm: Option<(f64, f64)>,
    pub rated_va: Option<f64>,
}

impl Transformer {
    pub fn is_ideal(&self) -> bool {
        self.impedance_ohm.is_none()
    }
}

/// Validated, immutable grid description.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    pub name: String,
    pub base_va: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub cabinets: Vec<CableCabinet>,
    pub prosumers: Vec<Prosumer>,
    pub transformer: Transformer,
    pub profiles: ProfileLibrary,
    bus_index: HashMap<String, usize>,
    line_index: HashMap<String, usize>,
    prosumer_index: HashMap<String, usize>,
}

/// Raw parts of a grid before validation.
#[derive(Debug, Clone, Default)]
pub struct GridParts {
    pub name: String,
    pub base_va: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub cabinets: Vec<CableCabinet>,
    pub prosumers: Vec<Prosumer>,
    pub slack_bus: String,
    pub substation_busbar: String,
    pub trafo_impedance_ohm: Option<(f64, f64)>,
    pub trafo_rated_va: Option<f64>,
    pub profiles: ProfileLibrary,
}

fn index_unique<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a String>,
) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(map)
}

impl GridTopology {
    pub fn new(parts: GridParts) -> Result<Self> {
        let GridParts {
            name,
            base_va,
            buses,
            lines,
            cabinets,
            prosumers,
            slack_bus,
            substation_busbar,
            trafo_impedance_ohm,
            trafo_rated_va,
            profiles,
        } = parts;

        if !(base_va > 0.0) {
            return Err(Error::schema("grid.csv", "base_va must be > 0"));
        }
        let bus_index = index_unique("bus", buses.iter().map(|b| &b.id))?;
        let line_index = index_unique("line", lines.iter().map(|l| &l.id))?;
        let prosumer_index = index_unique("prosumer", prosumers.iter().map(|p| &p.id))?;
        index_unique("cabinet", cabinets.iter().map(|c| &c.id))?;

        for bus in &buses {
            if !(bus.nominal_voltage > 0.0) {
                return Err(Error::invalid("bus", &bus.id, "nominal voltage must be > 0"));
            }
        }
        let slacks: Vec<&Bus> = buses
            .iter()
            .filter(|b| b.kind == BusKind::SlackCoupling)
            .collect();
        if slacks.len() != 1 {
            return Err(Error::schema(
                "buses.csv",
                format!("expected exactly one slack_coupling bus, found {}", slacks.len()),
            ));
        }
        if slacks[0].id != slack_bus {
            return Err(Error::schema(
                "grid.csv",
                format!(
                    "slack_bus {} is not the slack_coupling bus {}",
                    slack_bus, slacks[0].id
                ),
            ));
        }
        let Some(&busbar_idx) = bus_index.get(&substation_busbar) else {
            return Err(Error::UnknownBus(substation_busbar));
        };
        if substation_busbar != slack_bus {
            if buses[busbar_idx].kind != BusKind::SubstationBusbar {
                return Err(Error::invalid(
                    "bus",
                    &substation_busbar,
                    "substation busbar must have kind substation_busbar",
                ));
            }
            match trafo_impedance_ohm {
                None => {
                    return Err(Error::schema(
                        "grid.csv",
                        "an ideal transformer coupling requires slack_bus == substation_busbar; \
                         otherwise give trafo_r_ohm and trafo_x_ohm",
                    ))
                }
                Some((r, x)) if r < 0.0 || (r == 0.0 && x == 0.0) => {
                    return Err(Error::schema(
                        "grid.csv",
                        "transformer impedance must be non-zero with r >= 0",
                    ))
                }
                _ => {}
            }
        }

        for line in &lines {
            let from = bus_index
                .get(&line.from_bus)
                .ok_or_else(|| Error::UnknownBus(line.from_bus.clone()))?;
            let to = bus_index
                .get(&line.to_bus)
                .ok_or_else(|| Error::UnknownBus(line.to_bus.clone()))?;
            if from == to {
                return Err(Error::invalid("line", &line.id, "from_bus equals to_bus"));
            }
            if line.resistance < 0.0 {
                return Err(Error::invalid("line", &line.id, "negative resistance"));
            }
            if line.resistance == 0.0 && line.reactance == 0.0 {
                return Err(Error::invalid("line", &line.id, "zero impedance"));
            }
            if !(line.thermal_current_limit > 0.0) {
                return Err(Error::invalid("line", &line.id, "thermal current limit must be > 0"));
            }
            if (buses[*from].nominal_voltage - buses[*to].nominal_voltage).abs() > 1e-9 {
                return Err(Error::invalid(
                    "line",
                    &line.id,
                    "connects buses of different nominal voltage",
                ));
            }
        }

        for cab in &cabinets {
            if !bus_index.contains_key(&cab.busbar) {
                return Err(Error::UnknownBus(cab.busbar.clone()));
            }
            if cab.feeder_lines.is_empty() {
                return Err(Error::invalid("cabinet", &cab.id, "no feeder lines"));
            }
            for lid in &cab.feeder_lines {
                let line = line_index
                    .get(lid)
                    .map(|&i| &lines[i])
                    .ok_or_else(|| Error::UnknownLine(lid.clone()))?;
                if !line.is_incident(&cab.busbar) {
                    return Err(Error::invalid(
                        "cabinet",
                        &cab.id,
                        format!("line {lid} is not incident to busbar {}", cab.busbar),
                    ));
                }
            }
        }

        for p in &prosumers {
            if !bus_index.contains_key(&p.bus) {
                return Err(Error::UnknownBus(p.bus.clone()));
            }
            if profiles.get(&p.profile).is_none() {
                return Err(Error::MissingProfile {
                    profile: p.profile.clone(),
                    prosumer: p.id.clone(),
                });
            }
            if p.annual_energy < 0.0 || p.installed_power < 0.0 {
                return Err(Error::invalid("prosumer", &p.id, "negative energy or power"));
            }
            if p.category == ProsumerCategory::PvPlant && !(p.installed_power > 0.0) {
                return Err(Error::invalid("prosumer", &p.id, "pv plant needs installed power > 0"));
            }
            if p.category == ProsumerCategory::Household && !(p.annual_energy > 0.0) {
                return Err(Error::invalid("prosumer", &p.id, "household needs annual energy > 0"));
            }
        }

        let grid = GridTopology {
            name,
            base_va,
            buses,
            lines,
            cabinets,
            prosumers,
            transformer: Transformer {
                slack_bus,
                substation_busbar,
                impedance_ohm: trafo_impedance_ohm,
                rated_va: trafo_rated_va,
            },
            profiles,
            bus_index,
            line_index,
            prosumer_index,
        };
        grid.check_connected()?;
        Ok(grid)
    }

    fn check_connected(&self) -> Result<()> {
        let adj = self.adjacency();
        let start = self.slack_index();
        let mut seen = vec![false; self.buses.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Disconnected(self.buses[i].id.clone())),
            None => Ok(()),
        }
    }

    /// Undirected adjacency with |Z| edge weights in ohms, including the
    /// transformer branch when it has an impedance.
    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for line in &self.lines {
            let (a, b) = (self.bus_index[&line.from_bus], self.bus_index[&line.to_bus]);
            let w = line.impedance_magnitude();
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        if let Some((r, x)) = self.transformer.impedance_ohm {
            let a = self.slack_index();
            let b = self.substation_busbar_index();
            adj[a].push((b, r.hypot(x)));
            adj[b].push((a, r.hypot(x)));
        }
        adj
    }

    pub fn bus_idx(&self, id: &str) -> Result<usize> {
        self.bus_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownBus(id.to_string()))
    }

    pub fn line_idx(&self, id: &str) -> Result<usize> {
        self.line_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLine(id.to_string()))
    }

    pub fn prosumer_idx(&self, id: &str) -> Result<usize> {
        self.prosumer_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownProsumer(id.to_string()))
    }

    pub fn bus(&self, id: &str) -> Result<&Bus> {
        Ok(&self.buses[self.bus_idx(id)?])
    }

    pub fn line(&self, id: &str) -> Result<&Line> {
        Ok(&self.lines[self.line_idx(id)?])
    }

    pub fn prosumer(&self, id: &str) -> Result<&Prosumer> {
        Ok(&self.prosumers[self.prosumer_idx(id)?])
    }

    pub fn slack_index(&self) -> usize {
        self.bus_index[&self.transformer.slack_bus]
    }

    pub fn substation_busbar_index(&self) -> usize {
        self.bus_index[&self.transformer.substation_busbar]
    }

    pub fn slack_bus(&self) -> &Bus {
        &self.buses[self.slack_index()]
    }

    /// Indices of prosumers connected at the given bus index.
    pub fn prosumers_at(&self, bus: usize) -> impl Iterator<Item = usize> + '_ {
        let id = &self.buses[bus].id;
        self.prosumers
            .iter()
            .enumerate()
            .filter(move |(_, p)| &p.bus == id)
            .map(|(i, _)| i)
    }

    /// Shortest-path distance in ohms where every edge weighs |R + jX|.
    pub fn electrical_distance(&self, from: &str, to: &str) -> Result<f64> {
        let src = self.bus_idx(from)?;
        let dst = self.bus_idx(to)?;
        Ok(self.distances_from(src)[dst])
    }

    /// Dijkstra from one bus to all others.
    pub fn distances_from(&self, src: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }

        let adj = self.adjacency();
        let mut dist = vec![f64::INFINITY; self.buses.len()];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::from([Entry(0.0, src)]);
        while let Some(Entry(d, i)) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            for &(j, w) in &adj[i] {
                let nd = d + w;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Entry(nd, j));
                }
            }
        }
        dist
    }

    /// Feeders as sets of bus indices: the connected components left after
    /// removing the substation busbar, excluding the one holding the slack
    /// bus, ordered by their smallest bus id.
    pub fn feeders(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let busbar = self.substation_busbar_index();
        let slack = self.slack_index();
        let mut comp = vec![usize::MAX; self.buses.len()];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for start in 0..self.buses.len() {
            if start == busbar || comp[start] != usize::MAX {
                continue;
            }
            let g = groups.len();
            let mut members = vec![start];
            comp[start] = g;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                for &(j, _) in &adj[i] {
                    if j != busbar && comp[j] == usize::MAX {
                        comp[j] = g;
                        members.push(j);
                        stack.push(j);
                    }
                }
            }
            groups.push(members);
        }
        let mut feeders: Vec<Vec<usize>> = groups
            .into_iter()
            .filter(|g| !g.contains(&slack))
            .map(|mut g| {
                g.sort_by(|&a, &b| self.buses[a].id.cmp(&self.buses[b].id));
                g
            })
            .collect();
        feeders.sort_by(|a, b| self.buses[a[0]].id.cmp(&self.buses[b[0]].id));
        feeders
    }

    pub fn feeder_of(&self, bus: &str) -> Result<usize> {
        let idx = self.bus_idx(bus)?;
        self.feeders()
            .iter()
            .position(|f| f.contains(&idx))
            .ok_or_else(|| Error::NotInFeeder(bus.to_string()))
    }

    /// Lines leaving the substation busbar into a feeder, in ascending id order.
    pub fn substation_feeder_lines(&self) -> Vec<usize> {
        let busbar = &self.transformer.substation_busbar;
        let mut out: Vec<usize> = self
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_incident(busbar))
            .map(|(i, _)| i)
            .collect();
        out.sort_by(|&a, &b| self.lines[a].id.cmp(&self.lines[b].id));
        out
    }

    /// Number of 15-minute steps covered by every profile.
    pub fn steps(&self) -> usize {
        self.profiles.steps().unwrap_or(0)
    }

    /// Convert back into raw parts (e.g. for editing a fixture).
    pub fn into_parts(self) -> GridParts {
        GridParts {
            name: self.name,
            base_va: self.base_va,
            buses: self.buses,
            lines: self.lines,
            cabinets: self.cabinets,
            prosumers: self.prosumers,
            slack_bus: self.transformer.slack_bus,
            substation_busbar: self.transformer.substation_busbar,
            trafo_impedance_ohm: self.transformer.impedance_ohm,
            trafo_rated_va: self.transformer.rated_va,
            profiles: self.profiles,
        }
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GridRecord {
    base_va: f64,
    slack_bus: String,
    substation_busbar: String,
    #[serde(default)]
    trafo_r_ohm: Option<f64>,
    #[serde(default)]
    trafo_x_ohm: Option<f64>,
    #[serde(default)]
    trafo_sn_va: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CabinetRecord {
    id: String,
    busbar: String,
    feeder_lines: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRecord {
    profile_id: String,
    t_index: usize,
    p_kw: f64,
    q_kvar: f64,
}

fn read_records<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<Vec<T>> {
    let path = dir.join(file);
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize().enumerate() {
        out.push(rec.map_err(|e| Error::schema(file, format!("row {}: {e}", row + 2)))?);
    }
    Ok(out)
}

/// Serializes `rows`; an empty table still gets its `header` line.
fn csv_bytes<T: Serialize>(file: &str, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut empty = true;
    for row in rows {
        w.serialize(row).map_err(|e| Error::schema(file, e.to_string()))?;
        empty = false;
    }
    if empty {
        w.write_record(header).map_err(|e| Error::schema(file, e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::schema(file, e.to_string()))
}

/// Read and validate a grid directory.
pub fn load_grid(dir: impl AsRef<Path>) -> Result<GridTopology> {
    let dir = dir.as_ref();
    let mut header: Vec<GridRecord> = read_records(dir, "grid.csv")?;
    if header.len() != 1 {
        return Err(Error::schema("grid.csv", "expected exactly one data row"));
    }
    let header = header.remove(0);
    let buses: Vec<Bus> = read_records(dir, "buses.csv")?;
    let lines: Vec<Line> = read_records(dir, "lines.csv")?;
    let cabinets = read_records::<CabinetRecord>(dir, "cabinets.csv")?
        .into_iter()
        .map(|c| CableCabinet {
            id: c.id,
            busbar: c.busbar,
            feeder_lines: c
                .feeder_lines
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
        })
        .collect();
    let prosumers: Vec<Prosumer> = read_records(dir, "prosumers.csv")?;
    let profiles = read_profiles(dir)?;

    let trafo_impedance_ohm = match (header.trafo_r_ohm, header.trafo_x_ohm) {
        (Some(r), Some(x)) => Some((r, x)),
        (None, None) => None,
        _ => {
            return Err(Error::schema(
                "grid.csv",
                "trafo_r_ohm and trafo_x_ohm must be given together",
            ))
        }
    };
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    GridTopology::new(GridParts {
        name,
        base_va: header.base_va,
        buses,
        lines,
        cabinets,
        prosumers,
        slack_bus: header.slack_bus,
        substation_busbar: header.substation_busbar,
        trafo_impedance_ohm,
        trafo_rated_va: header.trafo_sn_va,
        profiles,
    })
}

fn read_profiles(dir: &Path) -> Result<ProfileLibrary> {
    let rows: Vec<ProfileRecord> = read_records(dir, "profiles.csv")?;
    let mut series: BTreeMap<String, Vec<Option<(f64, f64)>>> = BTreeMap::new();
    for r in rows {
        let s = series.entry(r.profile_id.clone()).or_default();
        if s.len() <= r.t_index {
            s.resize(r.t_index + 1, None);
        }
        if s[r.t_index].replace((r.p_kw, r.q_kvar)).is_some() {
            return Err(Error::schema(
                "profiles.csv",
                format!("profile {} has duplicate t_index {}", r.profile_id, r.t_index),
            ));
        }
    }
    let mut lib = ProfileLibrary::new();
    let mut steps: Option<(String, usize)> = None;
    for (id, values) in series {
        if let Some(gap) = values.iter().position(Option::is_none) {
            return Err(Error::schema(
                "profiles.csv",
                format!("profile {id} is missing t_index {gap}"),
            ));
        }
        match &steps {
            Some((first, n)) if *n != values.len() => {
                return Err(Error::schema(
                    "profiles.csv",
                    format!(
                        "profile {id} has {} steps but profile {first} has {n}",
                        values.len()
                    ),
                ))
            }
            None => steps = Some((id.clone(), values.len())),
            _ => {}
        }
        let (p_kw, q_kvar) = values.into_iter().map(Option::unwrap).unzip();
        lib.insert(id, Profile { p_kw, q_kvar });
    }
    Ok(lib)
}

/// The six CSV tables of a grid, as `(file name, contents)`.
pub fn grid_tables(grid: &GridTopology) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let t = &grid.transformer;
    Ok(vec![
        (
            "grid.csv",
            csv_bytes(
                "grid.csv",
                &["base_va", "slack_bus", "substation_busbar", "trafo_r_ohm", "trafo_x_ohm", "trafo_sn_va"],
                [GridRecord {
                    base_va: grid.base_va,
                    slack_bus: t.slack_bus.clone(),
                    substation_busbar: t.substation_busbar.clone(),
                    trafo_r_ohm: t.impedance_ohm.map(|z| z.0),
                    trafo_x_ohm: t.impedance_ohm.map(|z| z.1),
                    trafo_sn_va: t.rated_va,
                }],
            )?,
        ),
        ("buses.csv", csv_bytes("buses.csv", &["id", "kind", "vn_volts"], &grid.buses)?),
        ("lines.csv", csv_bytes("lines.csv", &["id", "from", "to", "r_ohm", "x_ohm", "i_max_a"], &grid.lines)?),
        (
            "cabinets.csv",
            csv_bytes(
                "cabinets.csv",
                &["id", "busbar", "feeder_lines"],
                grid.cabinets.iter().map(|c| CabinetRecord {
                    id: c.id.clone(),
                    busbar: c.busbar.clone(),
                    feeder_lines: c.feeder_lines.join(";"),
                }),
            )?,
        ),
        ("prosumers.csv", csv_bytes(
                "prosumers.csv",
                &["id", "bus", "category", "annual_kwh", "installed_kw", "profile_id"],
                &grid.prosumers,
            )?),
        (
            "profiles.csv",
            csv_bytes(
                "profiles.csv",
                &["profile_id", "t_index", "p_kw", "q_kvar"],
                grid.profiles.iter().flat_map(|(id, p)| {
                    (0..p.len()).map(move |t| ProfileRecord {
                        profile_id: id.to_string(),
                        t_index: t,
                        p_kw: p.p_kw[t],
                        q_kvar: p.q_kvar[t],
                    })
                }),
            )?,
        ),
    ])
}

/// Write a grid in the CSV layout accepted by [`load_grid`].
pub fn write_grid(grid: &GridTopology, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (file, bytes) in grid_tables(grid)? {
        let path = dir.join(file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Ids of all buses that host at least one prosumer.
pub fn connection_buses(grid: &GridTopology) -> HashSet<usize> {
    grid.prosumers
        .iter()
        .map(|p| grid.bus_index[&p.bus])
        .collect()
}
