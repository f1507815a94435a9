//! Builders for small handcrafted grids.
#![allow(dead_code)]

use lvse_core::grid::{
    Bus, BusKind, CableCabinet, GridParts, GridTopology, Line, Profile, ProfileLibrary, Prosumer,
    ProsumerCategory,
};

pub const FLAT: &str = "flat";

pub fn bus(id: &str, kind: BusKind) -> Bus {
    Bus {
        id: id.into(),
        kind,
        nominal_voltage: 400.0,
    }
}

pub fn line(id: &str, from: &str, to: &str, r: f64, x: f64) -> Line {
    Line {
        id: id.into(),
        from_bus: from.into(),
        to_bus: to.into(),
        resistance: r,
        reactance: x,
        thermal_current_limit: 200.0,
    }
}

pub fn prosumer(id: &str, bus: &str, category: ProsumerCategory, annual_kwh: f64) -> Prosumer {
    Prosumer {
        id: id.into(),
        bus: bus.into(),
        category,
        annual_energy: annual_kwh,
        installed_power: if category == ProsumerCategory::PvPlant { 5.0 } else { 0.0 },
        profile: FLAT.into(),
    }
}

pub fn cabinet(id: &str, busbar: &str, feeders: &[&str]) -> CableCabinet {
    CableCabinet {
        id: id.into(),
        busbar: busbar.into(),
        feeder_lines: feeders.iter().map(|s| s.to_string()).collect(),
    }
}

/// A flat 1 kW profile and an `H0` entry, `steps` long.
pub fn flat_profiles(steps: usize) -> ProfileLibrary {
    let mut lib = ProfileLibrary::new();
    for id in [FLAT, "H0"] {
        lib.insert(
            id,
            Profile {
                p_kw: vec![1.0; steps],
                q_kvar: vec![0.3; steps],
            },
        );
    }
    lib
}

/// Grid whose first bus is the slack and doubles as substation busbar.
pub fn grid(buses: Vec<Bus>, lines: Vec<Line>, cabinets: Vec<CableCabinet>, prosumers: Vec<Prosumer>) -> GridTopology {
    let slack = buses[0].id.clone();
    GridTopology::new(GridParts {
        name: "handmade".into(),
        base_va: 1e5,
        buses,
        lines,
        cabinets,
        prosumers,
        slack_bus: slack.clone(),
        substation_busbar: slack,
        trafo_impedance_ohm: None,
        trafo_rated_va: None,
        profiles: flat_profiles(8),
    })
    .unwrap()
}

/// Slack plus `n - 1` buses in a chain, one household on every non-slack bus.
pub fn chain(n: usize) -> GridTopology {
    let mut buses = vec![bus("N0", BusKind::SlackCoupling)];
    let mut lines = Vec::new();
    let mut prosumers = Vec::new();
    for i in 1..n {
        buses.push(bus(&format!("N{i}"), BusKind::ConnectionPoint));
        lines.push(line(&format!("L{i}"), &format!("N{}", i - 1), &format!("N{i}"), 0.05, 0.02));
        prosumers.push(prosumer(&format!("P{i}"), &format!("N{i}"), ProsumerCategory::Household, 3000.0));
    }
    grid(buses, lines, vec![], prosumers)
}
