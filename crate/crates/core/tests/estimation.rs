mod common;

use std::sync::OnceLock;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lvse_core::allocation::{expand_to_specs, EquipmentVariant, Location, Quantity, SubstationDevice};
use lvse_core::error::Error;
use lvse_core::estimation::{
    build_model, derive_estimated_flows, flat_start, wls_solve, MeasurementModel, MeasurementType, WlsOptions,
};
use lvse_core::fixtures;
use lvse_core::measurement::{Measurement, MeasurementSynthesizer, NoiseMode, Origin, PseudoConfig};
use lvse_core::power_flow::{solve_timestep, Network, PowerFlowOptions, PowerFlowSolution};
use lvse_core::GridTopology;

/// `synth-rural` over its first 16 steps, built once per test binary.
fn rural16() -> &'static GridTopology {
    static GRID: OnceLock<GridTopology> = OnceLock::new();
    GRID.get_or_init(|| fixtures::synth_rural(0, 16).unwrap())
}

fn metered_everywhere() -> EquipmentVariant {
    EquipmentVariant::new("all", Some(SubstationDevice::DigiOns), 100.0, 100.0)
}

fn measurements(
    grid: &GridTopology,
    net: &Network,
    sol: &PowerFlowSolution,
    variant: &EquipmentVariant,
    noise: NoiseMode,
    seed: u64,
) -> Vec<Measurement> {
    let specs = expand_to_specs(grid, variant).unwrap();
    let synth = MeasurementSynthesizer::new(grid, net, &specs, PseudoConfig::default(), seed, noise, 0..grid.steps()).unwrap();
    synth.assemble(sol).unwrap()
}

fn random_state(model: &MeasurementModel, rng: &mut impl Rng) -> DVector<f64> {
    let nb = model.bus_count();
    DVector::from_fn(model.state_dim(), |i, _| {
        if i < nb - 1 {
            rng.random_range(-0.2..0.2)
        } else {
            rng.random_range(0.85..1.15)
        }
    })
}

/// Relative agreement with a small absolute floor for entries that vanish.
fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= rel * scale || (analytic - numeric).abs() <= 1e-7
}

#[test]
fn jacobian_matches_central_differences() {
    let grid = fixtures::synth_rural(0, 4).unwrap();
    let net = Network::new(&grid).unwrap();
    let sol = solve_timestep(&grid, &net, &grid.profiles, 1, &PowerFlowOptions::default()).unwrap();
    let ms = measurements(&grid, &net, &sol, &metered_everywhere(), NoiseMode::Off, 1);
    let model = build_model(&grid, &net, &ms).unwrap();
    let kinds = model.count_by_type();
    for k in [
        MeasurementType::VMag,
        MeasurementType::PInj,
        MeasurementType::QInj,
        MeasurementType::PFlow,
        MeasurementType::QFlow,
        MeasurementType::IMag,
    ] {
        assert!(kinds.get(&k).copied().unwrap_or(0) > 0, "no {k:?} rows");
    }

    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let x = random_state(&model, &mut rng);
        let jac = model.jacobian(&model.state_to_voltages(&x));
        for c in 0..model.state_dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let fd = (model.evaluate(&model.state_to_voltages(&xp)) - model.evaluate(&model.state_to_voltages(&xm))) / (2.0 * h);
            for r in 0..model.len() {
                assert!(
                    close(jac[(r, c)], fd[r], 1e-4),
                    "row {} col {c}: analytic {} vs fd {}",
                    model.rows[r].label,
                    jac[(r, c)],
                    fd[r]
                );
            }
        }
    }
}

#[test]
fn noiseless_measurements_reproduce_the_power_flow() {
    for name in fixtures::BUNDLED {
        let grid = fixtures::bundled(name, 0, 96).unwrap();
        let net = Network::new(&grid).unwrap();
        let variant = EquipmentVariant::new("meters", None, 0.0, 100.0);
        for t in [0, 37, 70] {
            let sol = solve_timestep(&grid, &net, &grid.profiles, t, &PowerFlowOptions::default()).unwrap();
            let ms = measurements(&grid, &net, &sol, &variant, NoiseMode::Off, 5);
            let model = build_model(&grid, &net, &ms).unwrap();
            let est = wls_solve(&model, &flat_start(grid.buses.len()), &WlsOptions::default()).unwrap();
            assert!(est.converged);
            for (a, b) in est.voltages.iter().zip(sol.voltages()) {
                assert!((a.norm() - b.norm()).abs() < 1e-6, "{name} t={t}");
                assert!((a - b).norm() < 1e-6, "{name} t={t}");
            }
            assert!(est.objective < 1e-12, "{name} t={t}: J = {}", est.objective);
        }
    }
}

#[test]
fn two_bus_recovery_matches_power_flow_to_1e8() {
    let grid = common::chain(2);
    let net = Network::new(&grid).unwrap();
    let sol = solve_timestep(&grid, &net, &grid.profiles, 0, &PowerFlowOptions::default()).unwrap();
    let s = sol.prosumer_injections[0];
    let m = |quantity, location, value| Measurement {
        quantity,
        location,
        value,
        sigma: 1e-3,
        origin: Origin::Real,
    };
    let ms = vec![
        m(Quantity::Voltage, Location::Bus("N0".into()), 1.0),
        m(Quantity::ActivePower, Location::Prosumer("P1".into()), s.re),
        m(Quantity::ReactivePower, Location::Prosumer("P1".into()), s.im),
    ];
    let model = build_model(&grid, &net, &ms).unwrap();
    assert_eq!(model.len(), 3);
    let est = wls_solve(&model, &flat_start(2), &WlsOptions::default()).unwrap();
    assert!((est.voltages[1] - sol.voltages()[1]).norm() < 1e-8);
}

#[test]
fn estimate_is_no_worse_than_truth_on_noisy_redundant_data() {
    let grid = fixtures::synth_rural(0, 8).unwrap();
    let net = Network::new(&grid).unwrap();
    for t in 0..8 {
        let sol = solve_timestep(&grid, &net, &grid.profiles, t, &PowerFlowOptions::default()).unwrap();
        let ms = measurements(&grid, &net, &sol, &metered_everywhere(), NoiseMode::Clamped, 3);
        let model = build_model(&grid, &net, &ms).unwrap();
        assert!(model.len() > model.state_dim());
        let est = wls_solve(&model, &flat_start(grid.buses.len()), &WlsOptions::default()).unwrap();
        assert!(est.objective <= model.objective(sol.voltages()) * (1.0 + 1e-9));
        assert!(est.objective <= est.initial_objective);
    }
}

#[test]
fn estimated_flows_use_the_power_flow_derivation() {
    let grid = fixtures::chain3(0, 4).unwrap();
    let net = Network::new(&grid).unwrap();
    let sol = solve_timestep(&grid, &net, &grid.profiles, 2, &PowerFlowOptions::default()).unwrap();
    let again = derive_estimated_flows(&net, sol.voltages());
    for k in 0..grid.lines.len() {
        let d = again.line_current_amps(&net, k) - sol.flows.line_current_amps(&net, k);
        assert!(d.abs() < 1e-12);
    }
    let flat = derive_estimated_flows(&net, &flat_start(3));
    assert!((0..grid.lines.len()).all(|k| flat.line_current_amps(&net, k) == 0.0));

    let mut bumped = sol.voltages().to_vec();
    let scale = 1.0 + 0.01 / bumped[2].norm();
    bumped[2] *= scale;
    let moved = derive_estimated_flows(&net, &bumped);
    assert!((moved.line_current_amps(&net, 1) - sol.flows.line_current_amps(&net, 1)).abs() > 1.0);
    let b1 = &moved.branch_flows[net.line_branch[0]];
    let expected = (net.branches[net.line_branch[0]].y * (bumped[0] - bumped[1])).norm();
    assert!((b1.i_from - expected).abs() < 1e-12);
}

#[test]
fn under_measured_grid_names_the_deficit() {
    let grid = common::chain(10);
    let net = Network::new(&grid).unwrap();
    let m = |quantity, location: Location| Measurement {
        quantity,
        location,
        value: -0.01,
        sigma: 1e-3,
        origin: Origin::Pseudo,
    };
    let mut ms = vec![m(Quantity::Voltage, Location::Bus("N0".into()))];
    for i in 1..9 {
        ms.push(m(Quantity::ActivePower, Location::Prosumer(format!("P{i}"))));
        ms.push(m(Quantity::ReactivePower, Location::Prosumer(format!("P{i}"))));
    }
    ms.push(m(Quantity::ActivePower, Location::Prosumer("P9".into())));
    assert_eq!(ms.len(), 18);
    let err = build_model(&grid, &net, &ms).unwrap_err();
    assert!(matches!(err, Error::Unobservable { measurements: 18, required: 19, buses: 10 }));
    assert!(err.to_string().contains("deficit 1"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uniform_sigma_scaling_leaves_the_estimate_unchanged(t in 0usize..16, seed in 0u64..1000, factor in 0.01f64..100.0) {
        let grid = rural16();
        let net = Network::new(grid).unwrap();
        let sol = solve_timestep(grid, &net, &grid.profiles, t, &PowerFlowOptions::default()).unwrap();
        let ms = measurements(grid, &net, &sol, &EquipmentVariant::new("v", None, 50.0, 20.0).with_seed(seed), NoiseMode::Clamped, seed);
        let model = build_model(grid, &net, &ms).unwrap();
        // scale the model rows so the virtual zero-injection rows scale too
        let mut scaled = model.clone();
        for r in &mut scaled.rows {
            r.sigma *= factor;
        }
        let opts = WlsOptions { tolerance: 1e-10, ..WlsOptions::default() };
        let a = wls_solve(&model, &flat_start(20), &opts).unwrap();
        let b = wls_solve(&scaled, &flat_start(20), &opts).unwrap();
        prop_assert!((b.objective * factor * factor - a.objective).abs() <= 1e-9 * a.objective);
        for (x, y) in a.voltages.iter().zip(&b.voltages) {
            prop_assert!((x - y).norm() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn any_observable_noiseless_subset_recovers_the_state(t in 0usize..16, ikvs in 0.0f64..=100.0, seed in 0u64..50) {
        let grid = rural16();
        let net = Network::new(grid).unwrap();
        let sol = solve_timestep(grid, &net, &grid.profiles, t, &PowerFlowOptions::default()).unwrap();
        // every prosumer metered, so no pseudo value deviates from the truth
        let variant = EquipmentVariant::new("v", None, ikvs, 100.0).with_seed(seed);
        let ms = measurements(grid, &net, &sol, &variant, NoiseMode::Off, seed);
        let est = wls_solve(&build_model(grid, &net, &ms).unwrap(), &flat_start(20), &WlsOptions::default()).unwrap();
        let worst = est.voltages.iter().zip(sol.voltages()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-6, "deviation {worst}");
    }
}

#[test]
fn zero_injection_rows_cover_empty_buses() {
    let grid = fixtures::chain3(0, 4).unwrap();
    let net = Network::new(&grid).unwrap();
    let sol = solve_timestep(&grid, &net, &grid.profiles, 0, &PowerFlowOptions::default()).unwrap();
    let ms = measurements(&grid, &net, &sol, &EquipmentVariant::new("1", None, 0.0, 0.0), NoiseMode::Clamped, 7);
    assert_eq!(ms.len(), 3);
    let model = build_model(&grid, &net, &ms).unwrap();
    assert_eq!(model.len(), 5);
    let zero: Vec<_> = model.rows.iter().filter(|r| r.value == 0.0 && r.sigma == 1e-5).collect();
    assert_eq!(zero.len(), 2);
}

