//! Bundled synthetic grids and profiles.
//!
//! `chain3` is a minimal three-bus chain with one household. `synth-rural` is a
//! 20-bus, two-feeder rural grid with two cable cabinets and 18 prosumers
//! (households, PV plants, an electric vehicle and a heat pump). Profiles are
//! generated deterministically for a full year and cut to the requested
//! window, so the declared annual energies are consistent with the series.
//!
//! The `H0` entry is a synthetic residential day-shape (weekday/weekend,
//! seasonal modulation) normalised to 1000 kWh/year. It is an approximation
//! of a standard household load profile, not licensed data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{
    Bus, BusKind, CableCabinet, GridParts, GridTopology, Line, Profile, ProfileLibrary, Prosumer,
    ProsumerCategory,
};

pub const STEPS_PER_DAY: usize = 96;
pub const STEPS_PER_YEAR: usize = 35_040;
pub const H0_PROFILE_ID: &str = "H0";
pub const H0_ANNUAL_KWH: f64 = 1000.0;
const HOURS_PER_STEP: f64 = 0.25;

/// Grids shipped with the crate.
pub const BUNDLED: [&str; 2] = ["chain3", "synth-rural"];

/// Window of the bundled `synth-rural` CSV fixture: one spring week.
pub const SYNTH_RURAL_START: usize = 120 * STEPS_PER_DAY;
pub const SYNTH_RURAL_STEPS: usize = 7 * STEPS_PER_DAY;

pub fn bundled(name: &str, start: usize, steps: usize) -> Result<GridTopology> {
    match name {
        "chain3" => chain3(start, steps),
        "synth-rural" => synth_rural(start, steps),
        _ => Err(Error::Config(format!("unknown bundled grid {name}"))),
    }
}

fn day_of_week(day: usize) -> usize {
    day % 7
}

/// Unnormalised synthetic household day shape in kW.
fn h0_raw(t: usize) -> f64 {
    let day = (t / STEPS_PER_DAY) % 365;
    let hour = (t % STEPS_PER_DAY) as f64 * HOURS_PER_STEP;
    let weekend = day_of_week(day) >= 5;
    let bump = |center: f64, width: f64| (-((hour - center) / width).powi(2)).exp();
    let shape = if weekend {
        0.25 + 0.35 * bump(9.5, 2.0) + 0.45 * bump(12.5, 1.5) + 0.65 * bump(19.0, 2.2)
    } else {
        0.22 + 0.35 * bump(7.0, 1.0) + 0.22 * bump(12.5, 1.5) + 0.70 * bump(19.0, 2.0)
    };
    let season = 1.0 + 0.22 * (2.0 * PI * (day as f64 - 10.0) / 365.0).cos();
    shape * season
}

/// Full-year synthetic H0 profile in kW, normalised to [`H0_ANNUAL_KWH`].
pub fn h0_year() -> Vec<f64> {
    let raw: Vec<f64> = (0..STEPS_PER_YEAR).map(h0_raw).collect();
    let energy: f64 = raw.iter().sum::<f64>() * HOURS_PER_STEP;
    raw.into_iter().map(|p| p * H0_ANNUAL_KWH / energy).collect()
}

fn window(series: &[f64], start: usize, steps: usize) -> Vec<f64> {
    (start..start + steps).map(|t| series[t % series.len()]).collect()
}

fn scale_to_energy(series: &mut [f64], annual_kwh: f64) {
    let e: f64 = series.iter().sum::<f64>() * HOURS_PER_STEP;
    if e > 0.0 {
        series.iter_mut().for_each(|p| *p *= annual_kwh / e);
    }
}

fn household_year(h0: &[f64], annual_kwh: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: i64 = rng.random_range(-4..=4);
    let innov = Normal::new(0.0, 0.18).unwrap();
    let mut ar: f64 = 0.0;
    let mut out = Vec::with_capacity(STEPS_PER_YEAR);
    for t in 0..STEPS_PER_YEAR {
        ar = 0.9 * ar + innov.sample(&mut rng);
        let idx = (t as i64 + shift).rem_euclid(STEPS_PER_YEAR as i64) as usize;
        let mut p = h0[idx] * (0.6 * ar).exp();
        if rng.random::<f64>() < 0.03 {
            p += rng.random_range(0.8..2.5) * annual_kwh / 4000.0;
        }
        out.push(p.max(0.02));
    }
    scale_to_energy(&mut out, annual_kwh);
    out
}

/// Daily cloudiness shared by all PV plants of one grid.
fn weather_year(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..365)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.35 {
                rng.random_range(0.85..1.0)
            } else if u < 0.75 {
                rng.random_range(0.45..0.85)
            } else {
                rng.random_range(0.1..0.45)
            }
        })
        .collect()
}

fn pv_year(installed_kw: f64, weather: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orientation: f64 = rng.random_range(-0.5..0.5);
    let mut cloud = 0.0;
    (0..STEPS_PER_YEAR)
        .map(|t| {
            let day = t / STEPS_PER_DAY;
            let hour = (t % STEPS_PER_DAY) as f64 * HOURS_PER_STEP + HOURS_PER_STEP / 2.0;
            let season = (2.0 * PI * (day as f64 - 172.0) / 365.0).cos();
            let daylen = 12.2 + 4.0 * season;
            let noon = 13.2 + orientation;
            let x = (hour - noon) / daylen + 0.5;
            cloud = 0.85 * cloud + 0.15 * rng.random_range(-1.0..1.0);
            if !(0.0..=1.0).contains(&x) {
                return 0.0;
            }
            let clear = (PI * x).sin().powf(1.3) * (0.55 + 0.35 * season);
            let sky = (weather[day] * (1.0 + 0.5 * cloud)).clamp(0.05, 1.0);
            // generation as negative withdrawal
            -(installed_kw * 0.85 * clear * sky)
        })
        .collect()
}

fn ev_year(charger_kw: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; STEPS_PER_YEAR];
    for day in 0..365 {
        if rng.random::<f64>() > 0.55 {
            continue;
        }
        let arrive = day * STEPS_PER_DAY + rng.random_range(68..84);
        let energy: f64 = rng.random_range(6.0..22.0);
        let steps = (energy / (charger_kw * HOURS_PER_STEP)).ceil() as usize;
        for k in 0..steps {
            out[(arrive + k) % STEPS_PER_YEAR] = charger_kw;
        }
    }
    out
}

fn heat_pump_year(rated_kw: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut on = false;
    (0..STEPS_PER_YEAR)
        .map(|t| {
            let day = t / STEPS_PER_DAY;
            let hour = (t % STEPS_PER_DAY) as f64 * HOURS_PER_STEP;
            let outdoor = 9.0 - 9.0 * (2.0 * PI * (day as f64 - 15.0) / 365.0).cos()
                + 4.0 * (2.0 * PI * (hour - 15.0) / 24.0).cos();
            let demand = ((15.0 - outdoor) / 22.0).clamp(0.04, 1.0);
            if rng.random::<f64>() < 0.35 {
                on = rng.random::<f64>() < demand;
            }
            if on {
                rated_kw
            } else {
                0.05
            }
        })
        .collect()
}

fn reactive(p: &[f64], cos_phi: f64) -> Vec<f64> {
    let tan = cos_phi.acos().tan();
    p.iter().map(|v| v * tan).collect()
}

fn bus(id: &str, kind: BusKind, vn: f64) -> Bus {
    Bus {
        id: id.into(),
        kind,
        nominal_voltage: vn,
    }
}

/// (id, from, to, length_m, cable) with cable in {150, 95, 50} mm².
fn cable(id: &str, from: &str, to: &str, length_m: f64, section: u32) -> Line {
    let (r_km, x_km, imax) = match section {
        150 => (0.206, 0.080, 270.0),
        95 => (0.313, 0.082, 215.0),
        _ => (0.641, 0.085, 142.0),
    };
    Line {
        id: id.into(),
        from_bus: from.into(),
        to_bus: to.into(),
        resistance: r_km * length_m / 1000.0,
        reactance: x_km * length_m / 1000.0,
        thermal_current_limit: imax,
    }
}

struct ProsumerDef {
    id: &'static str,
    bus: &'static str,
    category: ProsumerCategory,
    annual_kwh: f64,
    installed_kw: f64,
}

fn build_prosumers(
    defs: &[ProsumerDef],
    h0: &[f64],
    grid_seed: u64,
    start: usize,
    steps: usize,
    lib: &mut ProfileLibrary,
) -> Vec<Prosumer> {
    let weather = weather_year(grid_seed);
    defs.iter()
        .enumerate()
        .map(|(k, d)| {
            let seed = grid_seed.wrapping_mul(1000).wrapping_add(k as u64);
            let (p, cos_phi) = match d.category {
                ProsumerCategory::PvPlant => (pv_year(d.installed_kw, &weather, seed), 1.0),
                ProsumerCategory::ElectricVehicle => {
                    let mut p = ev_year(d.installed_kw, seed);
                    scale_to_energy(&mut p, d.annual_kwh);
                    (p, 1.0)
                }
                ProsumerCategory::HeatPump => {
                    let mut p = heat_pump_year(d.installed_kw, seed);
                    scale_to_energy(&mut p, d.annual_kwh);
                    (p, 0.97)
                }
                ProsumerCategory::Household | ProsumerCategory::Other => {
                    let pf = 0.93 + 0.05 * ((k * 7) % 10) as f64 / 10.0;
                    (household_year(h0, d.annual_kwh, seed), pf)
                }
            };
            let q = reactive(&p, cos_phi);
            let profile_id = format!("prof_{}", d.id);
            lib.insert(
                profile_id.clone(),
                Profile {
                    p_kw: window(&p, start, steps),
                    q_kvar: window(&q, start, steps),
                },
            );
            Prosumer {
                id: d.id.into(),
                bus: d.bus.into(),
                category: d.category,
                annual_energy: if d.category == ProsumerCategory::PvPlant {
                    0.0
                } else {
                    d.annual_kwh
                },
                installed_power: d.installed_kw,
                profile: profile_id,
            }
        })
        .collect()
}

fn h0_library(h0: &[f64], start: usize, steps: usize) -> ProfileLibrary {
    let mut lib = ProfileLibrary::new();
    lib.insert(
        H0_PROFILE_ID,
        Profile {
            p_kw: window(h0, start, steps),
            q_kvar: vec![0.0; steps],
        },
    );
    lib
}

/// Three buses in a chain: slack (doubling as substation busbar), a junction
/// and one household.
pub fn chain3(start: usize, steps: usize) -> Result<GridTopology> {
    let h0 = h0_year();
    let mut profiles = h0_library(&h0, start, steps);
    let prosumers = build_prosumers(
        &[ProsumerDef {
            id: "H1",
            bus: "B3",
            category: ProsumerCategory::Household,
            annual_kwh: 3500.0,
            installed_kw: 0.0,
        }],
        &h0,
        3,
        start,
        steps,
        &mut profiles,
    );
    GridTopology::new(GridParts {
        name: "chain3".into(),
        base_va: 1e5,
        buses: vec![
            bus("B1", BusKind::SlackCoupling, 400.0),
            bus("B2", BusKind::Junction, 400.0),
            bus("B3", BusKind::ConnectionPoint, 400.0),
        ],
        lines: vec![
            cable("L1", "B1", "B2", 150.0, 150),
            cable("L2", "B2", "B3", 80.0, 95),
        ],
        cabinets: vec![],
        prosumers,
        slack_bus: "B1".into(),
        substation_busbar: "B1".into(),
        trafo_impedance_ohm: None,
        trafo_rated_va: None,
        profiles,
    })
}

/// 20-bus rural grid: MV coupling, transformer, two feeders, two cabinets.
pub fn synth_rural(start: usize, steps: usize) -> Result<GridTopology> {
    use BusKind::*;
    use ProsumerCategory::*;

    let h0 = h0_year();
    let mut profiles = h0_library(&h0, start, steps);
    let mut buses = vec![
        bus("B01", SlackCoupling, 20_000.0),
        bus("B02", SubstationBusbar, 400.0),
    ];
    for (id, kind) in [
        ("B03", Junction),
        ("B04", CabinetBusbar),
        ("B05", ConnectionPoint),
        ("B06", ConnectionPoint),
        ("B07", ConnectionPoint),
        ("B08", ConnectionPoint),
        ("B09", ConnectionPoint),
        ("B10", CabinetBusbar),
        ("B11", ConnectionPoint),
        ("B12", Junction),
        ("B13", ConnectionPoint),
        ("B14", Junction),
        ("B15", ConnectionPoint),
        ("B16", ConnectionPoint),
        ("B17", ConnectionPoint),
        ("B18", ConnectionPoint),
        ("B19", ConnectionPoint),
        ("B20", ConnectionPoint),
    ] {
        buses.push(bus(id, kind, 400.0));
    }
    let lines = vec![
        // feeder A
        cable("L01", "B02", "B03", 220.0, 150),
        cable("L02", "B03", "B04", 260.0, 150),
        cable("L03", "B04", "B05", 90.0, 95),
        cable("L04", "B05", "B06", 110.0, 95),
        cable("L05", "B06", "B07", 70.0, 50),
        cable("L06", "B04", "B08", 120.0, 95),
        cable("L07", "B08", "B09", 60.0, 50),
        // feeder B
        cable("L08", "B02", "B10", 110.0, 150),
        cable("L09", "B10", "B11", 80.0, 150),
        cable("L10", "B11", "B12", 100.0, 95),
        cable("L11", "B12", "B13", 70.0, 95),
        cable("L12", "B13", "B14", 90.0, 95),
        cable("L13", "B14", "B15", 60.0, 50),
        cable("L14", "B15", "B16", 50.0, 50),
        cable("L15", "B12", "B17", 80.0, 50),
        cable("L16", "B17", "B18", 70.0, 50),
        cable("L17", "B14", "B19", 90.0, 50),
        cable("L18", "B19", "B20", 60.0, 50),
    ];
    let cabinets = vec![
        CableCabinet {
            id: "C1".into(),
            busbar: "B04".into(),
            feeder_lines: vec!["L02".into(), "L03".into(), "L06".into()],
        },
        CableCabinet {
            id: "C2".into(),
            busbar: "B10".into(),
            feeder_lines: vec!["L08".into(), "L09".into()],
        },
    ];
    let hh = |id, bus, kwh| ProsumerDef {
        id,
        bus,
        category: Household,
        annual_kwh: kwh,
        installed_kw: 0.0,
    };
    let defs = [
        hh("H01", "B05", 3200.0),
        hh("H02", "B06", 8200.0),
        hh("H03", "B07", 4100.0),
        hh("H04", "B08", 2600.0),
        hh("H05", "B09", 3800.0),
        hh("H06", "B11", 7100.0),
        hh("H07", "B13", 2900.0),
        hh("H08", "B15", 4500.0),
        hh("H09", "B16", 3300.0),
        hh("H10", "B17", 2400.0),
        hh("H11", "B18", 5200.0),
        hh("H12", "B19", 3600.0),
        hh("H13", "B20", 2800.0),
        ProsumerDef {
            id: "PV1",
            bus: "B07",
            category: PvPlant,
            annual_kwh: 0.0,
            installed_kw: 9.8,
        },
        ProsumerDef {
            id: "PV2",
            bus: "B16",
            category: PvPlant,
            annual_kwh: 0.0,
            installed_kw: 7.2,
        },
        ProsumerDef {
            id: "PV3",
            bus: "B19",
            category: PvPlant,
            annual_kwh: 0.0,
            installed_kw: 5.0,
        },
        ProsumerDef {
            id: "EV1",
            bus: "B18",
            category: ElectricVehicle,
            annual_kwh: 2500.0,
            installed_kw: 11.0,
        },
        ProsumerDef {
            id: "HP1",
            bus: "B13",
            category: HeatPump,
            annual_kwh: 5400.0,
            installed_kw: 3.0,
        },
    ];
    let prosumers = build_prosumers(&defs, &h0, 20, start, steps, &mut profiles);
    GridTopology::new(GridParts {
        name: "synth-rural".into(),
        base_va: 1e5,
        buses,
        lines,
        cabinets,
        prosumers,
        slack_bus: "B01".into(),
        substation_busbar: "B02".into(),
        trafo_impedance_ohm: Some((0.00832, 0.02421)),
        trafo_rated_va: Some(250e3),
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h0_is_normalised() {
        let h0 = h0_year();
        assert_eq!(h0.len(), STEPS_PER_YEAR);
        let e: f64 = h0.iter().sum::<f64>() * HOURS_PER_STEP;
        assert!((e - H0_ANNUAL_KWH).abs() < 1e-9);
        assert!(h0.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn household_energy_matches_declaration() {
        let h0 = h0_year();
        let p = household_year(&h0, 4200.0, 9);
        let e: f64 = p.iter().sum::<f64>() * HOURS_PER_STEP;
        assert!((e - 4200.0).abs() < 1e-6);
    }

    #[test]
    fn pv_generates_only_in_daylight() {
        let weather = weather_year(1);
        let p = pv_year(10.0, &weather, 2);
        assert!(p.iter().all(|&v| v <= 0.0 && v >= -10.0));
        // midnight
        assert_eq!(p[0], 0.0);
        assert!(p[172 * STEPS_PER_DAY + 52] < -1.0);
    }

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(synth_rural(0, 96).unwrap(), synth_rural(0, 96).unwrap());
    }
}
