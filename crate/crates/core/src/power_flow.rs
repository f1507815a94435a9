//! Per-unit network model, bus admittance matrix and Newton–Raphson power flow.
//!
//! All quantities inside this module are per-unit on the grid's `base_va` and
//! the nominal voltage of each bus. Injections use the generator convention
//! (positive = power fed into the network at that bus).

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridTopology;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchElement {
    Line(usize),
    Transformer,
}

/// Series branch between two buses with admittance `y` (no shunts).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub y: Complex64,
    pub element: BranchElement,
}

/// Sparse bus admittance matrix stored row-wise, columns ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn from_branches(n: usize, branches: &[Branch]) -> Self {
        let mut dense: Vec<std::collections::BTreeMap<usize, Complex64>> = vec![Default::default(); n];
        for b in branches {
            *dense[b.from].entry(b.from).or_default() += b.y;
            *dense[b.to].entry(b.to).or_default() += b.y;
            *dense[b.from].entry(b.to).or_default() -= b.y;
            *dense[b.to].entry(b.from).or_default() -= b.y;
        }
        AdmittanceMatrix {
            rows: dense.into_iter().map(|r| r.into_iter().collect()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_default()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Current injections `I = Y V`.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }
}

/// Per-unit electrical model derived from a [`GridTopology`].
#[derive(Debug, Clone)]
pub struct Network {
    pub ybus: AdmittanceMatrix,
    pub branches: Vec<Branch>,
    pub slack: usize,
    pub base_va: f64,
    /// Branch index of each grid line.
    pub line_branch: Vec<usize>,
    pub transformer_branch: Option<usize>,
    /// Base current in amperes per branch.
    pub branch_base_amps: Vec<f64>,
}

fn series_admittance(r: f64, x: f64, z_base: f64, what: &str) -> Result<Complex64> {
    let z = Complex64::new(r, x) / z_base;
    if z.norm() == 0.0 || !z.norm().is_finite() {
        return Err(Error::invalid("branch", what, "zero impedance"));
    }
    Ok(z.inv())
}

impl Network {
    pub fn new(grid: &GridTopology) -> Result<Self> {
        let mut branches = Vec::with_capacity(grid.lines.len() + 1);
        let mut branch_base_amps = Vec::with_capacity(grid.lines.len() + 1);
        let mut line_branch = Vec::with_capacity(grid.lines.len());
        for (k, line) in grid.lines.iter().enumerate() {
            let from = grid.bus_idx(&line.from_bus)?;
            let to = grid.bus_idx(&line.to_bus)?;
            let vn = grid.buses[from].nominal_voltage;
            let y = series_admittance(line.resistance, line.reactance, vn * vn / grid.base_va, &line.id)?;
            line_branch.push(branches.len());
            branches.push(Branch {
                from,
                to,
                y,
                element: BranchElement::Line(k),
            });
            branch_base_amps.push(grid.base_va / (SQRT3 * vn));
        }
        let slack = grid.slack_index();
        let transformer_branch = match grid.transformer.impedance_ohm {
            Some((r, x)) => {
                let busbar = grid.substation_busbar_index();
                let vn = grid.buses[busbar].nominal_voltage;
                let y = series_admittance(r, x, vn * vn / grid.base_va, "transformer")?;
                branches.push(Branch {
                    from: slack,
                    to: busbar,
                    y,
                    element: BranchElement::Transformer,
                });
                branch_base_amps.push(grid.base_va / (SQRT3 * vn));
                Some(branches.len() - 1)
            }
            None => None,
        };
        Ok(Network {
            ybus: AdmittanceMatrix::from_branches(grid.buses.len(), &branches),
            branches,
            slack,
            base_va: grid.base_va,
            line_branch,
            transformer_branch,
            branch_base_amps,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.ybus.dim()
    }

    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw * 1e3 / self.base_va
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.base_va / 1e3
    }
}

pub fn build_ybus(grid: &GridTopology) -> Result<AdmittanceMatrix> {
    Ok(Network::new(grid)?.ybus)
}

/// Complex power and current magnitude at both ends of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchFlow {
    pub s_from: Complex64,
    pub s_to: Complex64,
    pub i_from: f64,
    pub i_to: f64,
}

impl BranchFlow {
    /// Larger of the two end current magnitudes (pu).
    pub fn current(&self) -> f64 {
        self.i_from.max(self.i_to)
    }

    pub fn losses(&self) -> Complex64 {
        self.s_from + self.s_to
    }
}

/// Bus injections and branch flows implied by a complete voltage vector.
/// Both the power flow and the state estimator derive flows through here.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedFlows {
    pub voltages: Vec<Complex64>,
    pub injections: Vec<Complex64>,
    pub branch_flows: Vec<BranchFlow>,
}

impl DerivedFlows {
    pub fn from_voltages(net: &Network, voltages: Vec<Complex64>) -> Self {
        let currents = net.ybus.mul(&voltages);
        let injections = voltages
            .iter()
            .zip(&currents)
            .map(|(v, i)| v * i.conj())
            .collect();
        let branch_flows = net
            .branches
            .iter()
            .map(|b| {
                let i = b.y * (voltages[b.from] - voltages[b.to]);
                BranchFlow {
                    s_from: voltages[b.from] * i.conj(),
                    s_to: voltages[b.to] * (-i).conj(),
                    i_from: i.norm(),
                    i_to: i.norm(),
                }
            })
            .collect();
        DerivedFlows {
            voltages,
            injections,
            branch_flows,
        }
    }

    pub fn line_current_amps(&self, net: &Network, line: usize) -> f64 {
        let b = net.line_branch[line];
        self.branch_flows[b].current() * net.branch_base_amps[b]
    }

    pub fn voltage_magnitudes(&self) -> Vec<f64> {
        self.voltages.iter().map(|v| v.norm()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub slack_voltage: Complex64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-8,
            max_iterations: 25,
            slack_voltage: Complex64::new(1.0, 0.0),
        }
    }
}

/// Ground-truth state of one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub t: usize,
    pub flows: DerivedFlows,
    /// Injection of each prosumer (pu, generator convention), indexed like `grid.prosumers`.
    pub prosumer_injections: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltages(&self) -> &[Complex64] {
        &self.flows.voltages
    }
}

/// Newton–Raphson in polar coordinates with every non-slack bus PQ.
/// `injections` holds the specified complex injection of every bus; the slack
/// entry is ignored. Returns the converged voltages, iteration count and
/// final max mismatch.
pub fn newton_raphson(
    net: &Network,
    injections: &[Complex64],
    opts: &PowerFlowOptions,
) -> Result<(Vec<Complex64>, usize, f64)> {
    let n = net.bus_count();
    let pq: Vec<usize> = (0..n).filter(|&i| i != net.slack).collect();
    let npq = pq.len();
    let mut v: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); n];
    v[net.slack] = opts.slack_voltage;

    let mismatch = |v: &[Complex64]| -> (DVector<f64>, f64) {
        let i = net.ybus.mul(v);
        let mut f = DVector::zeros(2 * npq);
        for (k, &b) in pq.iter().enumerate() {
            let s = v[b] * i[b].conj() - injections[b];
            f[k] = s.re;
            f[npq + k] = s.im;
        }
        let max = f.amax();
        (f, max)
    };

    let (mut f, mut max) = mismatch(&v);
    let mut growth = 0;
    let mut iterations = 0;
    while max >= opts.tolerance {
        if iterations == opts.max_iterations {
            return Err(Error::PowerFlowNotConverged {
                iterations,
                mismatch: max,
            });
        }
        iterations += 1;
        let jac = power_jacobian(net, &v, &pq);
        let dx = jac
            .lu()
            .solve(&(-&f))
            .ok_or(Error::SingularJacobian(iterations))?;
        for (k, &b) in pq.iter().enumerate() {
            let (mag, ang) = v[b].to_polar();
            v[b] = Complex64::from_polar(mag + dx[npq + k], ang + dx[k]);
        }
        let prev = max;
        (f, max) = mismatch(&v);
        if !max.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: max,
            });
        }
        growth = if max > prev { growth + 1 } else { 0 };
        if growth >= 3 {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: max,
            });
        }
    }
    // one extra step inside the quadratic basin brings the mismatch to
    // rounding level, so tight zero-injection rows see a consistent truth
    if iterations > 0 && max > 0.0 {
        let jac = power_jacobian(net, &v, &pq);
        if let Some(dx) = jac.lu().solve(&(-&f)) {
            let mut refined = v.clone();
            for (k, &b) in pq.iter().enumerate() {
                let (mag, ang) = v[b].to_polar();
                refined[b] = Complex64::from_polar(mag + dx[npq + k], ang + dx[k]);
            }
            let (_, m) = mismatch(&refined);
            if m < max {
                v = refined;
                max = m;
            }
        }
    }
    Ok((v, iterations, max))
}

/// d[P;Q]/d[θ;|V|] over the PQ buses.
fn power_jacobian(net: &Network, v: &[Complex64], pq: &[usize]) -> DMatrix<f64> {
    let npq = pq.len();
    let mut pos = vec![usize::MAX; v.len()];
    for (k, &b) in pq.iter().enumerate() {
        pos[b] = k;
    }
    let ibus = net.ybus.mul(v);
    let mut jac = DMatrix::zeros(2 * npq, 2 * npq);
    for (r, &i) in pq.iter().enumerate() {
        for &(k, y) in net.ybus.row(i) {
            let c = pos[k];
            if c == usize::MAX {
                continue;
            }
            let vn = v[k] / v[k].norm();
            let mut ds_da = Complex64::i() * v[i] * (-(y * v[k])).conj();
            let mut ds_dm = v[i] * (y * vn).conj();
            if k == i {
                ds_da += Complex64::i() * v[i] * ibus[i].conj();
                ds_dm += ibus[i].conj() * vn;
            }
            jac[(r, c)] = ds_da.re;
            jac[(npq + r, c)] = ds_da.im;
            jac[(r, npq + c)] = ds_dm.re;
            jac[(npq + r, npq + c)] = ds_dm.im;
        }
    }
    jac
}

/// Per-bus injections (pu) and per-prosumer injections at one timestep.
pub fn timestep_injections(
    grid: &GridTopology,
    net: &Network,
    profiles: &crate::grid::ProfileLibrary,
    t: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let mut bus = vec![Complex64::default(); grid.buses.len()];
    let mut per_prosumer = Vec::with_capacity(grid.prosumers.len());
    for p in &grid.prosumers {
        let profile = profiles.get(&p.profile).ok_or_else(|| Error::MissingProfile {
            profile: p.profile.clone(),
            prosumer: p.id.clone(),
        })?;
        let (pk, qk) = profile.at(t);
        // load convention in the profile, generator convention in the network
        let s = -Complex64::new(net.kw_to_pu(pk), net.kw_to_pu(qk));
        bus[grid.bus_idx(&p.bus)?] += s;
        per_prosumer.push(s);
    }
    Ok((bus, per_prosumer))
}

pub fn solve_powerflow(
    net: &Network,
    injections: &[Complex64],
    opts: &PowerFlowOptions,
) -> Result<DerivedFlows> {
    let (v, _, _) = newton_raphson(net, injections, opts)?;
    Ok(DerivedFlows::from_voltages(net, v))
}

pub fn solve_timestep(
    grid: &GridTopology,
    net: &Network,
    profiles: &crate::grid::ProfileLibrary,
    t: usize,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let (bus, prosumer_injections) = timestep_injections(grid, net, profiles, t)?;
    let (v, iterations, max_mismatch) = newton_raphson(net, &bus, opts).map_err(|e| e.at(t))?;
    Ok(PowerFlowSolution {
        t,
        flows: DerivedFlows::from_voltages(net, v),
        prosumer_injections,
        iterations,
        max_mismatch,
    })
}

/// Check every prosumer profile covers `steps`.
pub fn check_profile_coverage(
    grid: &GridTopology,
    profiles: &crate::grid::ProfileLibrary,
    steps: &Range<usize>,
) -> Result<()> {
    for p in &grid.prosumers {
        let prof = profiles.get(&p.profile).ok_or_else(|| Error::MissingProfile {
            profile: p.profile.clone(),
            prosumer: p.id.clone(),
        })?;
        if prof.len() < steps.end {
            return Err(Error::ProfileTooShort {
                profile: p.profile.clone(),
                available: prof.len(),
                required: steps.end,
            });
        }
    }
    Ok(())
}

/// One power flow per timestep, evaluated in parallel, returned in timestep order.
pub fn run_timeseries(
    grid: &GridTopology,
    net: &Network,
    profiles: &crate::grid::ProfileLibrary,
    steps: Range<usize>,
    opts: &PowerFlowOptions,
) -> Result<Vec<PowerFlowSolution>> {
    check_profile_coverage(grid, profiles, &steps)?;
    steps
        .into_par_iter()
        .map(|t| solve_timestep(grid, net, profiles, t, opts))
        .collect()
}

/// Append `t,element,quantity,value` rows for one solution.
pub fn write_truth_rows(
    out: &mut impl Write,
    grid: &GridTopology,
    net: &Network,
    sol: &PowerFlowSolution,
) -> std::io::Result<()> {
    let t = sol.t;
    for (i, bus) in grid.buses.iter().enumerate() {
        let v = sol.flows.voltages[i];
        let s = sol.flows.injections[i];
        writeln!(out, "{t},{},vm_pu,{}", bus.id, v.norm())?;
        writeln!(out, "{t},{},va_rad,{}", bus.id, v.arg())?;
        writeln!(out, "{t},{},p_inj_kw,{}", bus.id, net.pu_to_kw(s.re))?;
        writeln!(out, "{t},{},q_inj_kvar,{}", bus.id, net.pu_to_kw(s.im))?;
    }
    for (k, line) in grid.lines.iter().enumerate() {
        let f = &sol.flows.branch_flows[net.line_branch[k]];
        writeln!(out, "{t},{},i_a,{}", line.id, sol.flows.line_current_amps(net, k))?;
        writeln!(out, "{t},{},p_from_kw,{}", line.id, net.pu_to_kw(f.s_from.re))?;
        writeln!(out, "{t},{},q_from_kvar,{}", line.id, net.pu_to_kw(f.s_from.im))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn two_bus() -> Network {
        // z = 0.01 + 0.01j pu on a 1 VA / 1 V base
        let y = Complex64::new(0.01, 0.01).inv();
        let branches = vec![Branch {
            from: 0,
            to: 1,
            y,
            element: BranchElement::Line(0),
        }];
        Network {
            ybus: AdmittanceMatrix::from_branches(2, &branches),
            branches,
            slack: 0,
            base_va: 1.0,
            line_branch: vec![0],
            transformer_branch: None,
            branch_base_amps: vec![1.0],
        }
    }

    #[test]
    fn two_bus_admittance_by_hand() {
        let net = two_bus();
        let expect = Complex64::new(50.0, -50.0);
        assert!((net.ybus.get(0, 0) - expect).norm() < 1e-12);
        assert!((net.ybus.get(1, 1) - expect).norm() < 1e-12);
        assert!((net.ybus.get(0, 1) + expect).norm() < 1e-12);
        assert!((net.ybus.get(1, 0) + expect).norm() < 1e-12);
    }

    #[test]
    fn unconnected_entries_are_zero() {
        let grid = fixtures::chain3(0, 4).unwrap();
        let y = build_ybus(&grid).unwrap();
        assert_eq!(y.get(0, 2), Complex64::default());
        assert_eq!(y.nnz(), 7);
    }

    #[test]
    fn chain3_middle_diagonal_is_branch_sum() {
        let grid = fixtures::chain3(0, 4).unwrap();
        let y = build_ybus(&grid).unwrap();
        let zb = 400.0f64.powi(2) / grid.base_va;
        let y1 = (Complex64::new(grid.lines[0].resistance, grid.lines[0].reactance) / zb).inv();
        let y2 = (Complex64::new(grid.lines[1].resistance, grid.lines[1].reactance) / zb).inv();
        assert!((y.get(1, 1) - (y1 + y2)).norm() < 1e-9);
    }

    #[test]
    fn ybus_rows_sum_to_zero_without_shunts() {
        let grid = fixtures::synth_rural(0, 4).unwrap();
        let y = build_ybus(&grid).unwrap();
        for i in 0..y.dim() {
            let s: Complex64 = y.row(i).iter().map(|e| e.1).sum();
            assert!(s.norm() < 1e-9, "row {i} sums to {s}");
            for &(j, v) in y.row(i) {
                assert!((y.get(j, i) - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn no_load_stays_flat() {
        let net = two_bus();
        let (v, iters, _) =
            newton_raphson(&net, &[Complex64::default(); 2], &PowerFlowOptions::default()).unwrap();
        assert_eq!(iters, 0);
        assert_eq!(v[1], Complex64::new(1.0, 0.0));
        let flows = DerivedFlows::from_voltages(&net, v);
        assert_eq!(flows.branch_flows[0].current(), 0.0);
    }

    #[test]
    fn beyond_nose_point_fails() {
        let net = two_bus();
        let inj = [Complex64::default(), Complex64::new(-100.0, 0.0)];
        let err = newton_raphson(&net, &inj, &PowerFlowOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::PowerFlowNotConverged { .. } | Error::PowerFlowDiverged { .. } | Error::SingularJacobian(_)
        ));
    }

    #[test]
    fn short_profile_is_reported() {
        let grid = fixtures::chain3(0, 500).unwrap();
        let net = Network::new(&grid).unwrap();
        let err = run_timeseries(&grid, &net, &grid.profiles, 0..672, &PowerFlowOptions::default())
            .unwrap_err();
        assert_eq!(err.to_string(), "profile prof_H1 covers 500 < 672 steps");
    }
}
